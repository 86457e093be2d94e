"""Backend for OpenAI-compatible ``/chat/completions`` endpoints."""

from __future__ import annotations

import base64
import json
import logging
import os

import httpx

from ..resources import load_schema
from .client import BackendResponse, ChatRequest, GatewayConfigError, GatewayError, TransportError

log = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


def format_instructions(schema_id: str) -> str:
    return (
        "\n\nRespond with a single JSON object that validates against this JSON schema, "
        "and nothing else:\n" + json.dumps(load_schema(schema_id))
    )


def build_payload(request: ChatRequest, model_id: str, enforce_schema: bool) -> dict:
    system = request.system
    if request.output_schema and not enforce_schema:
        system += format_instructions(request.output_schema)
    messages: list[dict] = [{"role": "system", "content": system}]
    for turn in request.turns:
        if not turn.images:
            messages.append({"role": turn.role, "content": turn.text})
            continue
        parts: list[dict] = [{"type": "text", "text": turn.text}]
        for img in turn.images:
            b64 = base64.b64encode(img.data).decode()
            parts.append({"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}})
        messages.append({"role": turn.role, "content": parts})
    payload = {
        "model": model_id,
        "messages": messages,
        "max_tokens": request.max_output_tokens,
        "temperature": request.temperature,
    }
    if request.output_schema and enforce_schema:
        payload["response_format"] = {
            "type": "json_schema",
            "json_schema": {"name": request.output_schema, "schema": load_schema(request.output_schema)},
        }
    return payload


def _rejects_schema(resp: httpx.Response) -> bool:
    if resp.status_code not in (400, 422):
        return False
    body = resp.text.lower()
    return "response_format" in body or "json_schema" in body


class HttpBackend:
    def __init__(
        self,
        base_url: str,
        api_key_env_var: str | None = None,
        timeout_s: float = 60.0,
        client: httpx.Client | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.api_key_env_var = api_key_env_var
        self.client = client or httpx.Client(timeout=timeout_s)
        # Flipped off for good once the endpoint refuses structured output.
        self.schema_support = True

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env_var:
            key = os.environ.get(self.api_key_env_var)
            if not key:
                raise GatewayConfigError(f"environment variable {self.api_key_env_var} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, payload: dict) -> httpx.Response:
        try:
            return self.client.post(f"{self.base_url}/chat/completions", json=payload, headers=self._headers())
        except httpx.TransportError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc

    def send(self, request: ChatRequest, model_id: str, module_tag: str) -> BackendResponse:
        enforce = bool(request.output_schema) and self.schema_support
        resp = self._post(build_payload(request, model_id, enforce))
        if enforce and _rejects_schema(resp):
            log.info("endpoint %s refused response_format; embedding format instructions", self.base_url)
            self.schema_support = False
            enforce = False
            resp = self._post(build_payload(request, model_id, enforce))
        if resp.status_code in RETRYABLE_STATUS:
            raise TransportError(f"HTTP {resp.status_code} from {self.base_url}")
        if resp.status_code >= 400:
            raise GatewayError(f"HTTP {resp.status_code} from {self.base_url}: {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion response: {exc}") from exc
        usage = body.get("usage") or {}
        return BackendResponse(
            text=text,
            input_tokens=usage.get("prompt_tokens"),
            output_tokens=usage.get("completion_tokens"),
            schema_enforced=enforce or not request.output_schema,
        )

    def check_health(self) -> None:
        """Cheap startup probe: list models."""
        try:
            resp = self.client.get(f"{self.base_url}/models", headers=self._headers())
        except httpx.TransportError as exc:
            raise TransportError(f"endpoint {self.base_url} unreachable: {exc}") from exc
        if resp.status_code >= 400:
            raise GatewayError(f"endpoint {self.base_url} health check returned HTTP {resp.status_code}")
