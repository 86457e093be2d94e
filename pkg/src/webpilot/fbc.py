"""Trace storage and export of successful episodes as supervised samples.

Each exported sample reproduces the policy's input at one step (task, full
step history, notepad, screenshot window) with the step's own output as the
assistant target. Unsuccessful episodes contribute nothing.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .core import AgentMemory, EpisodeTrace, Step, append_step, parse_traces, serialize_trace
from .images import ImageStore
from .policy import PolicyConfig, PolicyOutput, build_policy_prompt, render_policy_output
from .validator import feedback_note

log = logging.getLogger(__name__)

FORMAT = "webpilot-fbc"
FORMAT_VERSION = 1
TRACES_FILE = "traces.jsonl"


@dataclass
class FbcExport:
    samples: list[dict] = field(default_factory=list)
    warnings: list[dict] = field(default_factory=list)

    def header(self) -> dict:
        return {
            "type": "header",
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "samples": len(self.samples),
            "skipped": len(self.warnings),
        }


def replay(trace: EpisodeTrace) -> Iterator[tuple[AgentMemory, Step]]:
    """Yield the memory the policy saw before each step, paired with the step.

    Feedback notes for rejected attempts are re-inserted in order, exactly as
    the orchestrator writes them.
    """
    memory: AgentMemory | None = None
    for number, attempt in enumerate(trace.attempts, 1):
        for step in attempt.steps:
            if memory is None:
                memory = AgentMemory(task=trace.task, current_screenshot=step.screenshot_ref)
            memory = memory.with_screenshot(step.screenshot_ref)
            yield memory, step
            memory = append_step(memory, step)
        if memory is not None and attempt.verdict is not None and not attempt.verdict.success:
            memory = memory.with_note(feedback_note(attempt.verdict, number)).start_attempt()


def is_successful(
    trace: EpisodeTrace, judge_outcome: bool | None = None, require_judge: bool = False
) -> bool:
    if not trace.validated:
        return False
    judged = judge_outcome if judge_outcome is not None else trace.success
    if judged is None:
        return not require_judge
    return judged


def _sample(memory: AgentMemory, step: Step, config: PolicyConfig, images: ImageStore, meta: dict) -> dict:
    request = build_policy_prompt(memory, config, images)
    content: list[dict] = []
    for turn in request.turns:
        content.append({"text": turn.text})
        content.extend({"image": img.id} for img in turn.images)
    target = render_policy_output(PolicyOutput(step.thought, step.action, step.notes))
    return {
        "messages": [
            {"role": "system", "content": request.system},
            {"role": "user", "content": content},
            {"role": "assistant", "content": target},
        ],
        "meta": meta,
    }


def export_fbc(
    traces: Iterable[EpisodeTrace],
    images: ImageStore,
    judge_outcomes: Mapping[str, bool] | None = None,
    require_judge: bool = False,
    max_steps: int = 30,
) -> FbcExport:
    """One sample per step of every successful trace.

    Success means the validator accepted the final answer and, when a judge
    outcome exists, the judge agreed. ``require_judge`` also drops traces with
    no judge outcome. Traces referencing missing screenshots are skipped with
    a warning record.
    """
    out = FbcExport()
    judge_outcomes = judge_outcomes or {}
    for trace in traces:
        if not is_successful(trace, judge_outcomes.get(trace.task.id), require_judge):
            continue
        missing = sorted({s.screenshot_ref for s in trace.all_steps() if s.screenshot_ref not in images})
        if missing:
            log.warning("skipping trace %s: %d screenshots missing", trace.task.id, len(missing))
            out.warnings.append({"type": "warning", "task_id": trace.task.id, "missing_screenshots": missing})
            continue
        samples = []
        attempt = 0
        for memory, step in replay(trace):
            if step.index == 0:
                attempt += 1
            config = PolicyConfig(forced_answer_mode=step.index == max_steps - 1)
            meta = {"task_id": trace.task.id, "attempt": attempt, "step": step.index}
            samples.append(_sample(memory, step, config, images, meta))
        out.samples.extend(samples)
    return out


def write_fbc(export: FbcExport, path: str | Path, images: ImageStore | None = None) -> None:
    """Write the JSONL export; referenced images go to ``images/`` next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(export.header()) + "\n")
        for warning in export.warnings:
            fh.write(json.dumps(warning) + "\n")
        for sample in export.samples:
            fh.write(json.dumps(sample, ensure_ascii=False) + "\n")
    if images is not None:
        store = ImageStore(path.parent / "images")
        for sample in export.samples:
            for part in sample["messages"][1]["content"]:
                if "image" in part:
                    store.add(images.get(part["image"]))


def write_traces(directory: str | Path, traces: Iterable[EpisodeTrace], images: ImageStore) -> Path:
    """Store traces as ``traces.jsonl`` plus their screenshots under ``images/``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    store = ImageStore(directory / "images")
    with (directory / TRACES_FILE).open("ab") as fh:
        for trace in traces:
            for step in trace.all_steps():
                if step.screenshot_ref in images:
                    store.add(images.get(step.screenshot_ref))
            fh.write(serialize_trace(trace))
    return directory / TRACES_FILE


def load_traces(directory: str | Path) -> tuple[list[EpisodeTrace], ImageStore]:
    directory = Path(directory)
    traces = parse_traces((directory / TRACES_FILE).read_bytes())
    return traces, ImageStore(directory / "images")
