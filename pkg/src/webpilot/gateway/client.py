"""Chat requests, backends and the model client that prices every call."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Protocol

from .pricing import PricingTable, UsageLedger, UsageRecord, estimate_tokens, price

log = logging.getLogger(__name__)

MAX_IMAGES_PER_REQUEST = 4


class GatewayError(RuntimeError):
    retryable = False


class TransportError(GatewayError):
    """Network failure, timeout, rate limit or server error. Safe to retry."""

    retryable = True


class GatewayConfigError(GatewayError):
    pass


@dataclass(frozen=True)
class ImagePayload:
    id: str
    data: bytes
    width: int
    height: int


@dataclass(frozen=True)
class Turn:
    role: str
    text: str
    images: tuple[ImagePayload, ...] = ()

    def __post_init__(self) -> None:
        if self.role not in ("user", "assistant"):
            raise ValueError(f"turn role must be user or assistant, got {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    system: str
    turns: tuple[Turn, ...]
    output_schema: str | None = None
    max_output_tokens: int = 1024
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not any(t.role == "user" for t in self.turns):
            raise ValueError("a chat request needs at least one user turn")
        if len(self.images) > MAX_IMAGES_PER_REQUEST:
            raise ValueError(f"{len(self.images)} images exceed the per-request limit of {MAX_IMAGES_PER_REQUEST}")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    @property
    def images(self) -> list[ImagePayload]:
        return [img for t in self.turns for img in t.images]

    @property
    def image_ids(self) -> list[str]:
        return [img.id for img in self.images]

    def all_text(self) -> str:
        return self.system + "".join(t.text for t in self.turns)


@dataclass(frozen=True)
class BackendResponse:
    text: str
    input_tokens: int | None = None
    output_tokens: int | None = None
    schema_enforced: bool = True


class Backend(Protocol):
    def send(self, request: ChatRequest, model_id: str, module_tag: str) -> BackendResponse: ...


class ModelClient:
    """A model id bound to a backend, with retries and usage pricing."""

    def __init__(
        self,
        model_id: str,
        backend: Backend,
        pricing: PricingTable | None = None,
        max_retries: int = 3,
        backoff_s: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.pricing = pricing or PricingTable.default()
        self.pricing.rates(model_id)
        self.model_id = model_id
        self.backend = backend
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._sleep = sleep

    def complete(
        self, request: ChatRequest, module_tag: str, ledger: UsageLedger | None = None
    ) -> tuple[str, UsageRecord]:
        """Send ``request`` and return the raw text with a priced usage record.

        Endpoint-reported token counts are used verbatim; missing counts are
        estimated. Transport errors are retried with exponential backoff and
        re-raised after ``max_retries`` tries.
        """
        attempt = 0
        while True:
            attempt += 1
            try:
                resp = self.backend.send(request, self.model_id, module_tag)
                break
            except GatewayError as exc:
                if not exc.retryable or attempt >= self.max_retries:
                    raise
                delay = self.backoff_s * 2 ** (attempt - 1)
                log.warning("%s call failed (%s); retry %d in %.2fs", module_tag, exc, attempt, delay)
                self._sleep(delay)

        estimated = resp.input_tokens is None or resp.output_tokens is None
        in_tok = resp.input_tokens
        if in_tok is None:
            in_tok = estimate_tokens(
                request.all_text(),
                [(img.width, img.height) for img in request.images],
                self.model_id,
                self.pricing,
            )
        out_tok = resp.output_tokens if resp.output_tokens is not None else math.ceil(len(resp.text) / 4)
        record = UsageRecord(
            model_id=self.model_id,
            input_tokens=in_tok,
            output_tokens=out_tok,
            images_sent=len(request.images),
            module_tag=module_tag,
            cost_usd=price(in_tok, out_tok, self.model_id, self.pricing),
            estimated=estimated,
            schema_enforced=resp.schema_enforced,
        )
        if ledger is not None:
            ledger.append(record)
        return resp.text, record
