"""Benchmark runner: corpus loading, date shifting, judging and reporting."""

from __future__ import annotations

import calendar
import json
import logging
import math
import re
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Any, Callable, Sequence
from urllib.parse import urlparse

from .core import Attempt, Task
from .gateway import ImagePayload, ModelClient, UsageLedger, ledger_report
from .images import ImageStore, image_size
from .orchestrator import EpisodeResult, Modules, RunConfig, run_episode
from .validator import build_verdict_request, parse_verdict

log = logging.getLogger(__name__)

ATTEMPT_LIMITS = (1, 2, 5, 10)
JUDGE_SAMPLES = 3


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class BenchmarkTask:
    task: Task
    group: str
    reference_answer_hint: str | None = None
    world: str | None = None  # sim world file for hermetic runs

    def __post_init__(self) -> None:
        if not self.group:
            raise ValueError(f"task {self.task.id!r} has an empty group label")

    @property
    def id(self) -> str:
        return self.task.id


# --- corpus ----------------------------------------------------------------


def _group_for(rec: dict[str, Any], task_id: str, website: str) -> str:
    group = rec.get("group") or rec.get("web_name")
    if group:
        return str(group)
    if "--" in task_id:
        return task_id.split("--", 1)[0]
    return urlparse(website).netloc or website


def _task_from_record(rec: dict[str, Any]) -> BenchmarkTask:
    # Native keys first, then the WebVoyager ones (id, web_name, ques, web).
    task_id = str(rec["id"])
    website = str(rec.get("website") or rec["web"])
    instruction = str(rec.get("instruction") or rec["ques"])
    task = Task(task_id, website, instruction, bool(rec.get("date_sensitive", False)))
    return BenchmarkTask(
        task=task,
        group=_group_for(rec, task_id, website),
        reference_answer_hint=rec.get("reference_answer_hint"),
        world=rec.get("world"),
    )


def load_corpus(path: str | Path) -> list[BenchmarkTask]:
    """Read a JSONL (or JSON array) task file. Duplicate ids are rejected."""
    text = Path(path).read_text(encoding="utf-8")
    records: list[tuple[int, Any]]
    if text.lstrip().startswith("["):
        records = list(enumerate(json.loads(text), 1))
    else:
        records = []
        for lineno, line in enumerate(text.split("\n"), 1):
            if not line.strip():
                continue
            try:
                records.append((lineno, json.loads(line)))
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record: {exc.msg}") from None
    tasks: list[BenchmarkTask] = []
    seen: set[str] = set()
    for lineno, rec in records:
        try:
            bt = _task_from_record(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"{path}:{lineno}: malformed record: {exc}") from None
        if bt.id in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate task id {bt.id!r}")
        seen.add(bt.id)
        tasks.append(bt)
    return tasks


# --- date shifting ---------------------------------------------------------

_MONTHS = {name.lower(): i for i, name in enumerate(calendar.month_name) if name}
_MONTH_ALT = "|".join(name for name in calendar.month_name if name)
_ISO = re.compile(r"\b(\d{4})-(\d{2})-(\d{2})\b")
_MDY = re.compile(r"\b(" + _MONTH_ALT + r") (\d{1,2}), (\d{4})\b")
_DMY = re.compile(r"\b(\d{1,2}) (" + _MONTH_ALT + r") (\d{4})\b")


def _future_year(month: int, day: int, year: int, today: date) -> int | None:
    """Smallest year >= ``year`` reached by whole-year steps with a date after today.

    Returns None if the date is invalid or already in the future.
    """
    try:
        d = date(year, month, day)
    except ValueError:
        return None
    if d > today:
        return None
    y = year
    while True:
        y += 1
        if month == 2 and day == 29 and not calendar.isleap(y):
            continue
        if date(y, month, day) > today:
            return y


def shift_dates(text: str, today: date) -> str:
    """Move past absolute dates into the future by whole years.

    Recognized: ``YYYY-MM-DD``, ``Month D, YYYY`` and ``D Month YYYY`` (full
    English month names). Everything else, relative phrases included, is
    left byte-for-byte unchanged.
    """

    def iso(m: re.Match) -> str:
        y = _future_year(int(m.group(2)), int(m.group(3)), int(m.group(1)), today)
        return m.group(0) if y is None else f"{y:04d}-{m.group(2)}-{m.group(3)}"

    def mdy(m: re.Match) -> str:
        y = _future_year(_MONTHS[m.group(1).lower()], int(m.group(2)), int(m.group(3)), today)
        return m.group(0) if y is None else f"{m.group(1)} {m.group(2)}, {y}"

    def dmy(m: re.Match) -> str:
        y = _future_year(_MONTHS[m.group(2).lower()], int(m.group(1)), int(m.group(3)), today)
        return m.group(0) if y is None else f"{m.group(1)} {m.group(2)} {y}"

    out = _ISO.sub(iso, text)
    out = _MDY.sub(mdy, out)
    return _DMY.sub(dmy, out)


# --- judging ---------------------------------------------------------------


@dataclass(frozen=True)
class JudgeConfig:
    samples: int = JUDGE_SAMPLES
    temperature: float = 0.7
    max_output_tokens: int = 512


@dataclass(frozen=True)
class JudgeOutcome:
    votes: tuple[bool, ...]
    success: bool


def majority(samples: Sequence[bool]) -> bool:
    """True iff at least two of exactly three votes are true."""
    if len(samples) != JUDGE_SAMPLES:
        raise ValueError(f"majority vote needs exactly {JUDGE_SAMPLES} samples, got {len(samples)}")
    return sum(bool(s) for s in samples) >= 2


def judge_sample(
    task: Task,
    answer: str,
    evidence: Sequence[ImagePayload],
    client: ModelClient,
    config: JudgeConfig | None = None,
    ledger: UsageLedger | None = None,
) -> bool:
    """One independent judge call. Unparseable output is a false vote."""
    config = config or JudgeConfig()
    request = build_verdict_request(
        "judge_system", "judge_user", task, answer, evidence, config.temperature, config.max_output_tokens
    )
    text, _ = client.complete(request, "judge", ledger)
    try:
        return parse_verdict(text).success
    except ValueError:
        log.info("judge output unparseable for task %s; counting a false vote", task.id)
        return False


def judge(
    task: Task,
    answer: str,
    evidence: Sequence[ImagePayload],
    client: ModelClient,
    config: JudgeConfig | None = None,
    ledger: UsageLedger | None = None,
) -> JudgeOutcome:
    config = config or JudgeConfig()
    votes = tuple(judge_sample(task, answer, evidence, client, config, ledger) for _ in range(config.samples))
    return JudgeOutcome(votes, majority(votes))


# --- checkpoints -----------------------------------------------------------


def truncate(attempts: Sequence[Attempt], limit: int) -> int | None:
    """Index of the attempt whose answer stands when only ``limit`` attempts are allowed.

    That is the first accepted attempt within the limit, else the last
    answered attempt within the limit. None when nothing was answered.
    """
    answered = [i for i, a in enumerate(attempts[:limit]) if a.verdict is not None]
    if not answered:
        return None
    for i in answered:
        if attempts[i].accepted:
            return i
    return answered[-1]


def cost_at(attempts: Sequence[Attempt], limit: int, total: float) -> float:
    """Agent cost of a run cut off after ``limit`` attempts."""
    if not attempts:
        return total
    for i, a in enumerate(attempts[:limit]):
        if a.accepted:
            return a.cumulative_cost_usd
    if limit >= len(attempts):
        return total
    return attempts[limit - 1].cumulative_cost_usd


# --- reports ---------------------------------------------------------------


@dataclass
class TaskResult:
    task_id: str
    group: str
    success: bool
    validated: bool
    attempts_used: int
    cost_usd: float
    answer: str
    judge_votes: tuple[bool, ...] = ()
    error: str | None = None
    by_limit: dict[int, tuple[bool, float]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "group": self.group,
            "success": self.success,
            "validated": self.validated,
            "attempts_used": self.attempts_used,
            "cost_usd": self.cost_usd,
            "answer": self.answer,
            "judge_votes": list(self.judge_votes),
            "error": self.error,
            "by_limit": {str(k): {"success": s, "cost_usd": c} for k, (s, c) in sorted(self.by_limit.items())},
        }


@dataclass(frozen=True)
class CurvePoint:
    max_attempts: int
    accuracy: float
    avg_cost_usd: float


@dataclass
class BenchmarkReport:
    tasks: list[TaskResult]
    curve: list[CurvePoint]
    judge_cost_usd: float = 0.0
    label: dict[str, str] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return len(self.tasks)

    @property
    def successes(self) -> int:
        return sum(t.success for t in self.tasks)

    @property
    def accuracy(self) -> float:
        return self.successes / self.total if self.tasks else 0.0

    @property
    def avg_cost_usd(self) -> float:
        return math.fsum(t.cost_usd for t in self.tasks) / self.total if self.tasks else 0.0

    def group_accuracy(self) -> dict[str, float]:
        n: dict[str, int] = defaultdict(int)
        k: dict[str, int] = defaultdict(int)
        for t in self.tasks:
            n[t.group] += 1
            k[t.group] += t.success
        return {g: k[g] / n[g] for g in sorted(n)}

    def group_successes(self) -> dict[str, int]:
        k: dict[str, int] = defaultdict(int)
        for t in self.tasks:
            k[t.group] += t.success
        return dict(sorted(k.items()))

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "total": self.total,
            "successes": self.successes,
            "accuracy": self.accuracy,
            "avg_cost_usd": self.avg_cost_usd,
            "judge_cost_usd": self.judge_cost_usd,
            "group_accuracy": self.group_accuracy(),
            "curve": [
                {"max_attempts": p.max_attempts, "accuracy": p.accuracy, "avg_cost_usd": p.avg_cost_usd}
                for p in self.curve
            ],
            "tasks": [t.to_dict() for t in self.tasks],
        }


def render_report_table(report: BenchmarkReport) -> str:
    """Rows of (policy, localizer, validator, attempts, accuracy %, $/task)."""
    label = report.label
    cols = ["Policy", "Localizer", "Validator", "Attempts", "Accuracy (%)", "Cost ($/task)"]
    rows = [
        [
            label.get("policy", "-") if i == 0 else "",
            label.get("localizer", "-") if i == 0 else "",
            label.get("validator", "-") if i == 0 else "",
            str(p.max_attempts),
            f"{100 * p.accuracy:.1f}",
            f"{p.avg_cost_usd:.2f}",
        ]
        for i, p in enumerate(report.curve)
    ]
    widths = [max(len(r[i]) for r in [cols, *rows]) for i in range(len(cols))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) if i < 3 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in rows]
    return "\n".join(lines)


# --- runner ----------------------------------------------------------------

ModulesFactory = Callable[[BenchmarkTask], Modules]
JudgeFactory = Callable[[BenchmarkTask], ModelClient]


def _evidence(attempt: Attempt, images: ImageStore) -> list[ImagePayload]:
    out = []
    for cid in attempt.answer_window():
        if cid in images:
            data = images.get(cid)
            w, h = image_size(data)
            out.append(ImagePayload(cid, data, w, h))
    return out


def _score(
    bt: BenchmarkTask,
    result: EpisodeResult,
    modules: Modules,
    judge_client: ModelClient,
    judge_config: JudgeConfig,
    judge_ledger: UsageLedger,
    limits: Sequence[int],
) -> TaskResult:
    attempts = result.trace.attempts
    verdicts: dict[int, JudgeOutcome] = {}

    def judged(i: int) -> JudgeOutcome:
        if i not in verdicts:
            a = attempts[i]
            verdicts[i] = judge(bt.task, a.answer, _evidence(a, modules.images), judge_client, judge_config, judge_ledger)
        return verdicts[i]

    by_limit = {}
    for k in limits:
        i = truncate(attempts, k)
        ok = judged(i).success if i is not None and result.error is None else False
        by_limit[k] = (ok, cost_at(attempts, k, result.cost_usd))
    final = truncate(attempts, len(attempts))
    outcome = judged(final) if final is not None and result.error is None else JudgeOutcome((), False)
    return TaskResult(
        task_id=bt.id,
        group=bt.group,
        success=outcome.success,
        validated=result.validated,
        attempts_used=result.attempts_used,
        cost_usd=result.cost_usd,
        answer=result.answer,
        judge_votes=outcome.votes,
        error=result.error,
        by_limit=by_limit,
    )


def run_benchmark(
    corpus: Sequence[BenchmarkTask],
    config: RunConfig,
    make_modules: ModulesFactory,
    judge_client: ModelClient | JudgeFactory,
    judge_config: JudgeConfig | None = None,
    today: date | None = None,
    parallel: int = 1,
    limits: Sequence[int] = ATTEMPT_LIMITS,
    on_result: Callable[[BenchmarkTask, EpisodeResult], None] | None = None,
) -> BenchmarkReport:
    """Run every task once with ``config.max_attempts`` and score it.

    The accuracy/cost curve is read off per-attempt checkpoints of that one
    run rather than by re-running with smaller limits. ``judge_client`` may
    also be a factory, called once per task after ``make_modules``.
    """
    if not corpus:
        raise CorpusError("refusing to run an empty corpus")
    judge_config = judge_config or JudgeConfig()
    today = today or date.today()
    limits = sorted({k for k in limits if k <= config.max_attempts} | {config.max_attempts})
    judge_ledger = UsageLedger(id="judge")

    def one(bt: BenchmarkTask) -> TaskResult:
        shifted = replace(bt.task, instruction=shift_dates(bt.task.instruction, today))
        if shifted.instruction != bt.task.instruction:
            log.info("task %s: dates shifted: %r", bt.id, shifted.instruction)
        else:
            log.debug("task %s: no past dates recognized", bt.id)
        try:
            modules = make_modules(bt)
            judge_for = judge_client(bt) if callable(judge_client) else judge_client
            result = run_episode(shifted, config, modules)
            if on_result is not None:
                on_result(bt, result)
            return _score(bt, result, modules, judge_for, judge_config, judge_ledger, limits)
        except Exception as exc:  # noqa: BLE001 - one crash must not stop the run
            log.exception("task %s crashed", bt.id)
            return TaskResult(bt.id, bt.group, False, False, 0, 0.0, "", error=f"{type(exc).__name__}: {exc}",
                              by_limit={k: (False, 0.0) for k in limits})

    with ThreadPoolExecutor(max_workers=max(1, parallel)) as pool:
        results = list(pool.map(one, corpus))
    results.sort(key=lambda r: r.task_id)

    n = len(results)
    curve = [
        CurvePoint(
            max_attempts=k,
            accuracy=sum(r.by_limit[k][0] for r in results) / n,
            avg_cost_usd=math.fsum(r.by_limit[k][1] for r in results) / n,
        )
        for k in limits
    ]
    return BenchmarkReport(tasks=results, curve=curve, judge_cost_usd=ledger_report(judge_ledger).judge_total)
