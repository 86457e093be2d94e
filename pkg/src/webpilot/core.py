"""Shared domain vocabulary: tasks, actions, steps, agent memory and traces.

All types are frozen values. Memory is append-only: ``append_step`` returns a
new ``AgentMemory`` and never touches the old one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Any, ClassVar, Union
from urllib.parse import urlparse

WINDOW_SIZE = 3

# Schemes accepted by GoTo in addition to http(s). ``sim`` addresses pages of
# the simulated environment.
_URL_SCHEMES = {"http", "https", "sim", "file", "about"}


class ContractViolation(ValueError):
    """An operation was called outside its precondition."""


class TraceParseError(ValueError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def is_valid_url(url: str) -> bool:
    if not isinstance(url, str) or not url or any(c.isspace() for c in url):
        return False
    parsed = urlparse(url)
    if parsed.scheme not in _URL_SCHEMES:
        return False
    if parsed.scheme in ("http", "https"):
        return bool(parsed.netloc)
    return bool(parsed.netloc or parsed.path)


@dataclass(frozen=True)
class Task:
    id: str
    website: str
    instruction: str
    date_sensitive: bool = False

    def __post_init__(self) -> None:
        if not self.instruction or not self.instruction.strip():
            raise ValueError(f"task {self.id!r} has an empty instruction")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "website": self.website,
            "instruction": self.instruction,
            "date_sensitive": self.date_sensitive,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Task:
        return cls(
            id=str(data["id"]),
            website=str(data["website"]),
            instruction=str(data["instruction"]),
            date_sensitive=bool(data.get("date_sensitive", False)),
        )


@dataclass(frozen=True)
class Point:
    """Pixel coordinates, origin at the top-left of the screenshot."""

    x: int
    y: int


@dataclass(frozen=True)
class ElementQuery:
    description: str
    resolved: Point | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.description, str) or not self.description.strip():
            raise ValueError("element description must be non-empty")


# --- actions ---------------------------------------------------------------


@dataclass(frozen=True)
class Click:
    kind: ClassVar[str] = "click"
    target: ElementQuery


@dataclass(frozen=True)
class Type:
    kind: ClassVar[str] = "type"
    target: ElementQuery
    text: str


@dataclass(frozen=True)
class Scroll:
    kind: ClassVar[str] = "scroll"
    direction: str = "down"

    def __post_init__(self) -> None:
        if self.direction not in ("up", "down"):
            raise ValueError(f"scroll direction must be 'up' or 'down', got {self.direction!r}")


@dataclass(frozen=True)
class Wait:
    kind: ClassVar[str] = "wait"


@dataclass(frozen=True)
class Refresh:
    kind: ClassVar[str] = "refresh"


@dataclass(frozen=True)
class GoTo:
    kind: ClassVar[str] = "goto"
    url: str

    def __post_init__(self) -> None:
        if not is_valid_url(self.url):
            raise ValueError(f"invalid URL: {self.url!r}")


@dataclass(frozen=True)
class Back:
    kind: ClassVar[str] = "back"


@dataclass(frozen=True)
class Answer:
    kind: ClassVar[str] = "answer"
    text: str

    def __post_init__(self) -> None:
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("answer text must be non-empty")


Action = Union[Click, Type, Scroll, Wait, Refresh, GoTo, Back, Answer]
ACTION_TYPES: dict[str, type] = {
    cls.kind: cls for cls in (Click, Type, Scroll, Wait, Refresh, GoTo, Back, Answer)
}
# Required payload keys per action kind, besides "kind" itself.
ACTION_FIELDS: dict[str, tuple[str, ...]] = {
    "click": ("target",),
    "type": ("target", "text"),
    "scroll": ("direction",),
    "wait": (),
    "refresh": (),
    "goto": ("url",),
    "back": (),
    "answer": ("text",),
}


class UnsupportedActionError(ValueError):
    pass


def needs_target(action: Action) -> bool:
    return isinstance(action, (Click, Type))


def with_resolved(action: Action, point: Point) -> Action:
    if not needs_target(action):
        raise ContractViolation(f"{action.kind} actions carry no target")
    return replace(action, target=replace(action.target, resolved=point))


def action_to_dict(action: Action, include_point: bool = True) -> dict[str, Any]:
    out: dict[str, Any] = {"kind": action.kind}
    if isinstance(action, (Click, Type)):
        out["target"] = action.target.description
        if isinstance(action, Type):
            out["text"] = action.text
        if include_point and action.target.resolved is not None:
            out["point"] = [action.target.resolved.x, action.target.resolved.y]
    elif isinstance(action, Scroll):
        out["direction"] = action.direction
    elif isinstance(action, GoTo):
        out["url"] = action.url
    elif isinstance(action, Answer):
        out["text"] = action.text
    return out


def action_from_dict(data: Any, allow_point: bool = True) -> Action:
    """Build an action from its tagged-object form.

    Raises ``UnsupportedActionError`` for unknown kinds and ``ValueError`` for
    missing, extra or mistyped fields.
    """
    if not isinstance(data, dict):
        raise ValueError("action must be a JSON object")
    kind = data.get("kind")
    if not isinstance(kind, str):
        raise ValueError("action is missing a string 'kind'")
    if kind not in ACTION_FIELDS:
        raise UnsupportedActionError(f"unsupported action kind: {kind!r}")
    required = ACTION_FIELDS[kind]
    allowed = {"kind", *required}
    if allow_point and kind in ("click", "type"):
        allowed.add("point")
    extra = set(data) - allowed
    if extra:
        raise ValueError(f"unexpected keys for {kind!r} action: {sorted(extra)}")
    missing = [k for k in required if k not in data]
    if missing:
        raise ValueError(f"{kind!r} action is missing {missing}")
    for key in required:
        if not isinstance(data[key], str):
            raise ValueError(f"{kind!r}.{key} must be a string")

    if kind in ("click", "type"):
        resolved = None
        if data.get("point") is not None:
            pt = data["point"]
            if (
                not isinstance(pt, list)
                or len(pt) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in pt)
            ):
                raise ValueError("point must be [x, y] integers")
            resolved = Point(pt[0], pt[1])
        target = ElementQuery(data["target"], resolved)
        if kind == "click":
            return Click(target)
        return Type(target, data["text"])
    if kind == "scroll":
        return Scroll(data["direction"])
    if kind == "goto":
        return GoTo(data["url"])
    if kind == "answer":
        return Answer(data["text"])
    return ACTION_TYPES[kind]()


# --- steps and memory ------------------------------------------------------


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass(frozen=True)
class Step:
    index: int
    thought: str
    action: Action
    screenshot_ref: str
    notes: str | None = None
    timestamp: datetime = field(default_factory=utcnow)

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("step index must be >= 0")
        if not self.thought or not self.thought.strip():
            raise ValueError("step thought must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "thought": self.thought,
            "notes": self.notes,
            "action": action_to_dict(self.action),
            "screenshot": self.screenshot_ref,
            "timestamp": self.timestamp.isoformat(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Step:
        ts = data.get("timestamp")
        return cls(
            index=int(data["index"]),
            thought=data["thought"],
            notes=data.get("notes"),
            action=action_from_dict(data["action"]),
            screenshot_ref=data["screenshot"],
            timestamp=datetime.fromisoformat(ts) if ts else utcnow(),
        )


@dataclass(frozen=True)
class AgentMemory:
    """Task, step history across all attempts, notepad and current view.

    Step indices restart at 0 with every attempt; ``attempt_steps`` gives the
    steps of the attempt in progress.
    """

    task: Task
    current_screenshot: str
    steps: tuple[Step, ...] = ()
    notepad: tuple[str, ...] = ()
    # Set between attempts: the next step opens a new attempt at index 0.
    attempt_pending: bool = False

    @property
    def attempt_steps(self) -> tuple[Step, ...]:
        if self.attempt_pending:
            return ()
        start = 0
        for i, step in enumerate(self.steps):
            if step.index == 0:
                start = i
        return self.steps[start:]

    @property
    def next_index(self) -> int:
        """Index of the step about to be taken in the current attempt."""
        if not self.steps or self.attempt_pending:
            return 0
        return self.steps[-1].index + 1

    def start_attempt(self) -> AgentMemory:
        return replace(self, attempt_pending=True)

    def with_screenshot(self, screenshot_id: str) -> AgentMemory:
        return replace(self, current_screenshot=screenshot_id)

    def with_note(self, note: str) -> AgentMemory:
        return replace(self, notepad=self.notepad + (note,))


def append_step(memory: AgentMemory, step: Step) -> AgentMemory:
    """Return a new memory with ``step`` appended.

    The index must continue the current attempt (previous index + 1) or be 0,
    which opens a new attempt. After ``start_attempt`` only 0 is accepted.
    """
    if step.index != 0 and (memory.attempt_pending or step.index != memory.next_index):
        expected = memory.next_index
        raise ContractViolation(f"non-contiguous step index {step.index}, expected {expected} or 0")
    notepad = memory.notepad + ((step.notes,) if step.notes else ())
    return replace(memory, steps=memory.steps + (step,), notepad=notepad, attempt_pending=False)


def memory_window(memory: AgentMemory, t: int) -> list[str]:
    """Screenshot ids with index k such that t-3 < k <= t, oldest first.

    ``t`` is either the latest step index of the current attempt or the index
    of the step about to be taken; in the latter case the current screenshot
    is the k == t entry.
    """
    shots = [s.screenshot_ref for s in memory.attempt_steps]
    if t == len(shots):
        shots.append(memory.current_screenshot)
    elif t != len(shots) - 1:
        raise ContractViolation(f"window index {t} is neither the latest step nor the next one")
    return shots[max(0, t - WINDOW_SIZE + 1) : t + 1]


# --- traces ----------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    success: bool
    explanation: str

    def __post_init__(self) -> None:
        if not isinstance(self.explanation, str) or not self.explanation.strip():
            raise ValueError("verdict explanation must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {"success": self.success, "explanation": self.explanation}


@dataclass(frozen=True)
class Attempt:
    steps: tuple[Step, ...]
    answer: str
    verdict: Verdict | None
    cumulative_cost_usd: float = 0.0

    @property
    def accepted(self) -> bool:
        return self.verdict is not None and self.verdict.success

    def answer_window(self) -> list[str]:
        """Screenshot ids of the answering step's window."""
        return [s.screenshot_ref for s in self.steps[-WINDOW_SIZE:]]


@dataclass(frozen=True)
class EpisodeTrace:
    task: Task
    attempts: tuple[Attempt, ...] = ()
    final_answer: str = ""
    success: bool | None = None
    cost_usd: float = 0.0
    ledger_ref: str | None = None
    error: str | None = None

    @property
    def validated(self) -> bool:
        return bool(self.attempts) and self.attempts[-1].accepted

    def all_steps(self) -> list[Step]:
        return [s for a in self.attempts for s in a.steps]

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task.to_dict(),
            "attempts": [
                {
                    "steps": [s.to_dict() for s in a.steps],
                    "answer": a.answer,
                    "verdict": a.verdict.to_dict() if a.verdict else None,
                    "cumulative_cost_usd": a.cumulative_cost_usd,
                }
                for a in self.attempts
            ],
            "final_answer": self.final_answer,
            "success": self.success,
            "cost_usd": self.cost_usd,
            "ledger_ref": self.ledger_ref,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EpisodeTrace:
        attempts = []
        for a in data["attempts"]:
            v = a.get("verdict")
            attempts.append(
                Attempt(
                    steps=tuple(Step.from_dict(s) for s in a["steps"]),
                    answer=a["answer"],
                    verdict=Verdict(bool(v["success"]), v["explanation"]) if v else None,
                    cumulative_cost_usd=float(a.get("cumulative_cost_usd", 0.0)),
                )
            )
        return cls(
            task=Task.from_dict(data["task"]),
            attempts=tuple(attempts),
            final_answer=data["final_answer"],
            success=data.get("success"),
            cost_usd=float(data.get("cost_usd", 0.0)),
            ledger_ref=data.get("ledger_ref"),
            error=data.get("error"),
        )


def serialize_trace(trace: EpisodeTrace) -> bytes:
    """One JSONL line (newline-terminated) for the episode."""
    return (json.dumps(trace.to_dict(), ensure_ascii=False, separators=(",", ":")) + "\n").encode()


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode())


def parse_traces(data: bytes) -> list[EpisodeTrace]:
    """Parse a JSONL trace file. All-or-nothing: any bad line raises."""
    try:
        text = data.decode()
    except UnicodeDecodeError as exc:
        raise TraceParseError("trace is not valid UTF-8", exc.start) from None
    traces = []
    line_start = 0
    # Split on "\n" only: JSON strings may hold raw U+2028 and friends.
    for line in text.split("\n"):
        body = line.strip()
        if body:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceParseError(exc.msg, _byte_offset(text, line_start + exc.pos)) from None
            try:
                traces.append(EpisodeTrace.from_dict(obj))
            except (KeyError, TypeError, ValueError) as exc:
                raise TraceParseError(f"invalid trace record: {exc}", _byte_offset(text, line_start)) from None
        line_start += len(line) + 1
    return traces


def parse_trace(data: bytes) -> EpisodeTrace:
    traces = parse_traces(data)
    if len(traces) != 1:
        raise TraceParseError(f"expected exactly one trace, found {len(traces)}", 0)
    return traces[0]
