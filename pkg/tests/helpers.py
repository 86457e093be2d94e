"""Shared builders for hermetic tests: worlds, scripted models, module wiring."""

from __future__ import annotations

import io
import json
from typing import Any, Callable

from PIL import Image

from webpilot.core import Action, action_to_dict
from webpilot.env import EnvConfig, SimEnv, load_world
from webpilot.gateway import BackendResponse, ChatRequest, MockBackend, ModelClient, PricingTable
from webpilot.images import ImageStore
from webpilot.orchestrator import Modules


def png(width: int, height: int, color: tuple[int, int, int] = (200, 200, 200)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (width, height), color).save(buf, format="PNG")
    return buf.getvalue()


def policy_text(action: Action | dict[str, Any], thought: str = "thinking", notes: str | None = None) -> str:
    payload = action if isinstance(action, dict) else action_to_dict(action, include_point=False)
    return json.dumps({"thought": thought, "notes": notes, "action": payload})


def verdict_text(success: bool, explanation: str = "checked") -> str:
    return json.dumps({"success": success, "explanation": explanation})


def two_page_world(answer_text: str = "42") -> dict[str, Any]:
    """p1 has a button at (100..300, 100..200) leading to p2, which shows the answer."""
    return {
        "start": "p1",
        "pages": [
            {
                "id": "p1",
                "background": "home",
                "height": 2400,
                "elements": [
                    {"bbox": [100, 100, 300, 200], "label": "Go", "effect": {"kind": "navigate", "page": "p2"}},
                    {"bbox": [400, 100, 700, 160], "label": "Search", "effect": {"append_text": "q"},
                     "submit": {"navigate": "p3"}},
                    {"bbox": [800, 100, 1000, 200], "label": "Flag", "effect": {"kind": "set_state", "key": "flag", "value": "on"}},
                ],
                "text": [{"bbox": [100, 600, 600, 650], "content": "flag={flag}"}],
            },
            {"id": "p2", "background": "result", "text": [{"bbox": [50, 50, 500, 100], "content": f"Answer: {answer_text}"}]},
            {"id": "p3", "background": "search", "text": [{"bbox": [50, 50, 500, 100], "content": "You searched: {q}"}]},
        ],
    }


def sim(world: dict[str, Any] | None = None, config: EnvConfig | None = None) -> SimEnv:
    return load_world(world or two_page_world(), config)


class Script:
    """Per-tag callables producing model text, driven by call counts.

    ``policy(n, request)`` gets the 0-based policy call number. Forced-answer
    requests go to ``forced`` when given.
    """

    def __init__(
        self,
        policy: Callable[[int, ChatRequest], str],
        validator: Callable[[int, ChatRequest], str] | None = None,
        localizer: Callable[[int, ChatRequest], str] | None = None,
        judge: Callable[[int, ChatRequest], str] | None = None,
        forced: Callable[[int, ChatRequest], str] | None = None,
        usage: tuple[int, int] | None = (100, 20),
    ) -> None:
        self.handlers = {
            "policy": policy,
            "validator": validator or (lambda n, r: verdict_text(True, "looks right")),
            "localizer": localizer or (lambda n, r: "(200, 150)"),
            "judge": judge or (lambda n, r: verdict_text(True, "correct")),
        }
        self.forced = forced
        self.counts: dict[str, int] = {}
        self.usage = usage

    def __call__(self, request: ChatRequest, tag: str) -> BackendResponse:
        key = tag
        handler = self.handlers[tag]
        if tag == "policy" and request.output_schema == "policy_output_forced" and self.forced is not None:
            key, handler = "policy:forced", self.forced
        n = self.counts.get(key, 0)
        self.counts[key] = n + 1
        text = handler(n, request)
        if self.usage is None:
            return BackendResponse(text)
        return BackendResponse(text, *self.usage)


def scripted_modules(
    script: Script,
    env: SimEnv | None = None,
    pricing: PricingTable | None = None,
    policy_model: str = "holo1-7b",
    validator_model: str = "gpt-4o",
) -> tuple[Modules, MockBackend]:
    backend = MockBackend(responder=script)
    pricing = pricing or PricingTable.default()
    client = lambda model: ModelClient(model, backend, pricing, sleep=lambda s: None)  # noqa: E731
    modules = Modules(
        env=env or sim(),
        policy_client=client(policy_model),
        localizer_client=client(policy_model),
        validator_client=client(validator_model),
        images=ImageStore(),
    )
    return modules, backend


def judge_client(script: Script, model: str = "gpt-4o") -> ModelClient:
    return ModelClient(model, MockBackend(responder=script), PricingTable.default(), sleep=lambda s: None)
