"""Scripted backend for hermetic runs.

A script is an ordered list of rules ``{"match": tag, "response": ...,
"usage": {"input_tokens": n, "output_tokens": m}, "repeat": false}``. Each
call consumes the first unconsumed rule whose ``match`` equals the module tag.
Rules with ``repeat`` stay in place and serve every later call. The special
tag ``policy:forced`` is tried before ``policy`` when the request only admits
an answer.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .client import BackendResponse, ChatRequest, GatewayError


class MockExhausted(GatewayError):
    pass


@dataclass
class MockRule:
    match: str
    response: str
    input_tokens: int | None = None
    output_tokens: int | None = None
    repeat: bool = False

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MockRule:
        response = data["response"]
        if not isinstance(response, str):
            response = json.dumps(response)
        usage = data.get("usage") or {}
        return cls(
            match=data["match"],
            response=response,
            input_tokens=usage.get("input_tokens"),
            output_tokens=usage.get("output_tokens"),
            repeat=bool(data.get("repeat", False)),
        )


Responder = Callable[[ChatRequest, str], "str | BackendResponse | None"]


class MockBackend:
    def __init__(
        self,
        script: list[MockRule | dict[str, Any]] | None = None,
        responder: Responder | None = None,
    ) -> None:
        self.rules = [r if isinstance(r, MockRule) else MockRule.from_dict(r) for r in (script or [])]
        self.responder = responder
        self.calls: list[tuple[str, ChatRequest]] = []
        self._consumed = [False] * len(self.rules)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> MockBackend:
        data = json.loads(Path(path).read_text())
        if isinstance(data, dict):
            data = data["rules"]
        return cls(data)

    def calls_for(self, tag: str) -> list[ChatRequest]:
        with self._lock:
            return [req for t, req in self.calls if t == tag]

    def _keys(self, request: ChatRequest, module_tag: str) -> list[str]:
        if module_tag == "policy" and request.output_schema == "policy_output_forced":
            return ["policy:forced", "policy"]
        return [module_tag]

    def send(self, request: ChatRequest, model_id: str, module_tag: str) -> BackendResponse:
        with self._lock:
            self.calls.append((module_tag, request))
            if self.responder is not None:
                out = self.responder(request, module_tag)
                if out is not None:
                    return out if isinstance(out, BackendResponse) else BackendResponse(out)
            for key in self._keys(request, module_tag):
                for i, rule in enumerate(self.rules):
                    if rule.match == key and not self._consumed[i]:
                        if not rule.repeat:
                            self._consumed[i] = True
                        return BackendResponse(rule.response, rule.input_tokens, rule.output_tokens)
        raise MockExhausted(f"mock script has no response left for {module_tag!r}")
