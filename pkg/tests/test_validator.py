from __future__ import annotations

import pytest

from webpilot.core import ContractViolation, Task, Verdict
from webpilot.gateway import ImagePayload, MockBackend, ModelClient, UsageLedger
from webpilot.validator import UNPARSEABLE, ValidatorConfig, feedback_note, parse_verdict, validate

from helpers import png

TASK = Task("t", "https://shop.example", "what is the price of the red mug?")


def shots(n: int) -> list[ImagePayload]:
    return [ImagePayload(f"s{i}", png(30, 30), 30, 30) for i in range(n)]


def client(*responses: str) -> tuple[ModelClient, MockBackend]:
    backend = MockBackend([{"match": "validator", "response": r} for r in responses])
    return ModelClient("gpt-4o", backend), backend


def test_accept():
    c, backend = client('{"success":true,"explanation":"answer matches page"}')
    v = validate(TASK, "$12", shots(3), c)
    assert v == Verdict(True, "answer matches page")
    req = backend.calls[0][1]
    assert len(req.images) == 3
    assert "$12" in req.turns[0].text and TASK.instruction in req.turns[0].text
    assert req.output_schema == "verdict"


def test_reject_with_feedback():
    c, _ = client('{"success":false,"explanation":"price not visible"}')
    assert validate(TASK, "$12", shots(1), c) == Verdict(False, "price not visible")


def test_prose_fails_closed():
    c, backend = client("I think it is fine", "yes", "definitely")
    ledger = UsageLedger()
    v = validate(TASK, "$12", shots(2), c, ValidatorConfig(max_retries=3), ledger)
    assert v == Verdict(False, UNPARSEABLE)
    assert len(backend.calls) == 3 and len(ledger) == 3


def test_retry_recovers():
    c, _ = client("garbage", '```json\n{"success": true, "explanation": "ok"}\n```')
    assert validate(TASK, "a", shots(1), c).success


def test_too_many_screenshots():
    c, _ = client('{"success":true,"explanation":"x"}')
    with pytest.raises(ContractViolation):
        validate(TASK, "a", shots(4), c)


@pytest.mark.parametrize(
    "text",
    [
        '{"success": "yes", "explanation": "x"}',
        '{"success": true, "explanation": ""}',
        '{"success": true}',
        '{"success": true, "explanation": "x", "score": 1}',
        "[true]",
    ],
)
def test_parse_verdict_strict(text):
    with pytest.raises(ValueError):
        parse_verdict(text)


def test_explanation_capped():
    assert parse_verdict('{"success": false, "explanation": "abcdef"}', max_chars=3).explanation == "abc"


def test_feedback_note():
    assert feedback_note(Verdict(False, "price not visible"), 1) == "validator rejected attempt 1: price not visible"
    with pytest.raises(ContractViolation):
        feedback_note(Verdict(True, "fine"), 1)


def test_empty_explanation_impossible():
    with pytest.raises(ValueError):
        Verdict(False, "")
