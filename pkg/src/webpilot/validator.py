"""Answer gate: (task, answer, recent screenshots) -> (success, explanation).

Fail-closed: anything that cannot be read as a verdict is a rejection.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Sequence

from .core import WINDOW_SIZE, ContractViolation, Task, Verdict
from .gateway import ChatRequest, ImagePayload, ModelClient, Turn, UsageLedger
from .resources import load_template, render_template

log = logging.getLogger(__name__)

VERDICT_SCHEMA = "verdict"
UNPARSEABLE = "validator output unparseable"

_FENCE = re.compile(r"^\s*```[A-Za-z0-9_-]*[ \t]*\n?(.*?)\n?```\s*$", re.DOTALL)


@dataclass(frozen=True)
class ValidatorConfig:
    model_id: str = "gpt-4o"
    max_retries: int = 3
    max_explanation_chars: int = 1000
    temperature: float = 0.0
    max_output_tokens: int = 512


def parse_verdict(text: str, max_chars: int | None = None) -> Verdict:
    m = _FENCE.match(text)
    data = json.loads(m.group(1) if m else text)
    if not isinstance(data, dict) or set(data) - {"success", "explanation"}:
        raise ValueError("verdict must be an object with success and explanation")
    success, explanation = data.get("success"), data.get("explanation")
    if not isinstance(success, bool) or not isinstance(explanation, str) or not explanation.strip():
        raise ValueError("verdict needs a boolean success and a non-empty explanation")
    if max_chars is not None and len(explanation) > max_chars:
        explanation = explanation[:max_chars]
    return Verdict(success, explanation)


def build_verdict_request(
    system_template: str,
    user_template: str,
    task: Task,
    answer: str,
    screenshots: Sequence[ImagePayload],
    temperature: float,
    max_output_tokens: int,
) -> ChatRequest:
    text = render_template(load_template(user_template), task=task.instruction, answer=answer)
    return ChatRequest(
        system=load_template(system_template),
        turns=(Turn("user", text, tuple(screenshots)),),
        output_schema=VERDICT_SCHEMA,
        max_output_tokens=max_output_tokens,
        temperature=temperature,
    )


def validate(
    task: Task,
    answer: str,
    screenshots: Sequence[ImagePayload],
    client: ModelClient,
    config: ValidatorConfig | None = None,
    ledger: UsageLedger | None = None,
) -> Verdict:
    if len(screenshots) > WINDOW_SIZE:
        raise ContractViolation(f"validator accepts at most {WINDOW_SIZE} screenshots, got {len(screenshots)}")
    config = config or ValidatorConfig()
    request = build_verdict_request(
        "validator_system", "validator_user", task, answer, screenshots, config.temperature, config.max_output_tokens
    )
    for i in range(config.max_retries):
        text, _ = client.complete(request, "validator", ledger)
        try:
            return parse_verdict(text, config.max_explanation_chars)
        except ValueError as exc:
            log.info("validator output rejected (try %d/%d): %s", i + 1, config.max_retries, exc)
    return Verdict(False, UNPARSEABLE)


def feedback_note(verdict: Verdict, attempt_index: int) -> str:
    """Notepad entry for a rejected answer; ``attempt_index`` counts from 1."""
    if verdict.success:
        raise ContractViolation("feedback notes are only written for rejected answers")
    return f"validator rejected attempt {attempt_index}: {verdict.explanation}"
