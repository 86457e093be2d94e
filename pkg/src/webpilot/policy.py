"""Policy: memory in, (thought, notes, action) out."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace

from .core import Action, AgentMemory, Answer, UnsupportedActionError, action_from_dict, action_to_dict, memory_window
from .gateway import ChatRequest, ImagePayload, ModelClient, Turn, UsageLedger
from .images import ImageStore, image_size
from .resources import load_template, render_template

log = logging.getLogger(__name__)

POLICY_SCHEMA = "policy_output"
FORCED_SCHEMA = "policy_output_forced"

_FENCE = re.compile(r"^\s*```[A-Za-z0-9_-]*[ \t]*\n?(.*?)\n?```\s*$", re.DOTALL)
_TOP_LEVEL = {"thought", "notes", "action"}


class PolicyParseError(ValueError):
    def __init__(self, message: str, position: int | None = None) -> None:
        super().__init__(message if position is None else f"{message} (at position {position})")
        self.position = position


class UnsupportedPolicyAction(PolicyParseError, UnsupportedActionError):
    pass


class PolicyError(RuntimeError):
    """The policy produced no parseable output within its retry budget."""

    def __init__(self, message: str, last_text: str) -> None:
        super().__init__(message)
        self.last_text = last_text


@dataclass(frozen=True)
class PolicyOutput:
    thought: str
    action: Action
    notes: str | None = None


@dataclass(frozen=True)
class PolicyConfig:
    model_id: str = "holo1-7b"
    max_parse_retries: int = 3
    temperature: float = 0.1
    forced_answer_mode: bool = False
    max_output_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.max_parse_retries < 1:
            raise ValueError("max_parse_retries must be >= 1")


def render_policy_output(output: PolicyOutput) -> str:
    return json.dumps(
        {"thought": output.thought, "notes": output.notes, "action": action_to_dict(output.action, include_point=False)},
        ensure_ascii=False,
    )


def parse_policy_output(text: str, forced: bool = False) -> PolicyOutput:
    """Strictly parse the tagged-action JSON grammar.

    A single fenced code block around the object is tolerated. Unknown action
    kinds raise ``UnsupportedPolicyAction``; anything else malformed raises
    ``PolicyParseError``.
    """
    m = _FENCE.match(text)
    body = m.group(1) if m else text
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise PolicyParseError(f"invalid JSON: {exc.msg}", exc.pos) from None
    if not isinstance(data, dict):
        raise PolicyParseError("policy output must be a JSON object", 0)
    extra = set(data) - _TOP_LEVEL
    if extra:
        raise PolicyParseError(f"unexpected top-level keys: {sorted(extra)}")
    thought = data.get("thought")
    if not isinstance(thought, str) or not thought.strip():
        raise PolicyParseError("'thought' must be a non-empty string")
    notes = data.get("notes")
    if notes is not None and not isinstance(notes, str):
        raise PolicyParseError("'notes' must be a string or null")
    if "action" not in data:
        raise PolicyParseError("missing 'action'")
    try:
        action = action_from_dict(data["action"], allow_point=False)
    except UnsupportedActionError as exc:
        raise UnsupportedPolicyAction(str(exc)) from None
    except ValueError as exc:
        raise PolicyParseError(str(exc)) from None
    if forced and not isinstance(action, Answer):
        raise PolicyParseError(f"forced answer mode admits only answer actions, got {action.kind!r}")
    return PolicyOutput(thought=thought, action=action, notes=notes)


def render_history(memory: AgentMemory) -> str:
    lines = []
    attempt = 0
    for step in memory.steps:
        if step.index == 0:
            attempt += 1
        action = json.dumps(action_to_dict(step.action, include_point=False), ensure_ascii=False)
        line = f"[attempt {attempt}, step {step.index}] thought: {step.thought}"
        if step.notes:
            line += f"\n    notes: {step.notes}"
        line += f"\n    action: {action}"
        lines.append(line)
    return "\n".join(lines) if lines else "(no steps yet)"


def render_notepad(memory: AgentMemory) -> str:
    if not memory.notepad:
        return "(empty)"
    return "\n".join(f"- {note}" for note in memory.notepad)


def window_payloads(memory: AgentMemory, t: int, images: ImageStore) -> tuple[ImagePayload, ...]:
    out = []
    for cid in memory_window(memory, t):
        data = images.get(cid)
        w, h = image_size(data)
        out.append(ImagePayload(cid, data, w, h))
    return tuple(out)


def build_policy_prompt(memory: AgentMemory, config: PolicyConfig, images: ImageStore) -> ChatRequest:
    t = memory.next_index
    system = load_template("policy_system")
    if config.forced_answer_mode:
        system += load_template("policy_forced")
    text = render_template(
        load_template("policy_user"),
        task=memory.task.instruction,
        history=render_history(memory),
        feedback=render_notepad(memory),
    )
    return ChatRequest(
        system=system,
        turns=(Turn("user", text, window_payloads(memory, t, images)),),
        output_schema=FORCED_SCHEMA if config.forced_answer_mode else POLICY_SCHEMA,
        max_output_tokens=config.max_output_tokens,
        temperature=config.temperature,
    )


def propose(
    memory: AgentMemory,
    config: PolicyConfig,
    client: ModelClient,
    images: ImageStore,
    ledger: UsageLedger | None = None,
) -> PolicyOutput:
    """Sample until the output parses, at most ``max_parse_retries`` times."""
    request = build_policy_prompt(memory, config, images)
    last = ""
    for i in range(config.max_parse_retries):
        last, _ = client.complete(request, "policy", ledger)
        try:
            return parse_policy_output(last, forced=config.forced_answer_mode)
        except PolicyParseError as exc:
            log.info("policy output rejected (try %d/%d): %s", i + 1, config.max_parse_retries, exc)
    raise PolicyError(f"no valid policy output after {config.max_parse_retries} tries", last)


def forced(config: PolicyConfig) -> PolicyConfig:
    return replace(config, forced_answer_mode=True)
