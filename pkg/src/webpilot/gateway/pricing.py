"""Per-model token pricing, token estimation and the usage ledger."""

from __future__ import annotations

import math
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

MODULE_TAGS = ("policy", "localizer", "validator", "judge")
AGENT_TAGS = ("policy", "localizer", "validator")

# Image token counts are quoted for a 1200x1200 screenshot.
REFERENCE_IMAGE_AREA = 1200 * 1200


class UnknownModelError(KeyError):
    def __str__(self) -> str:
        return f"unknown model id: {self.args[0]!r}"


@dataclass(frozen=True)
class ModelRates:
    rate_in: float  # $ per 1e6 input tokens
    rate_out: float  # $ per 1e6 output tokens
    image_tokens_1200: int

    def __post_init__(self) -> None:
        if self.rate_in <= 0 or self.rate_out <= 0 or self.image_tokens_1200 <= 0:
            raise ValueError("model rates and image token counts must be positive")


DEFAULT_RATES: dict[str, ModelRates] = {
    "gpt-4o": ModelRates(2.5, 10, 772),
    "gpt-4o-mini": ModelRates(0.15, 0.6, 25508),
    "gpt-4.1": ModelRates(2, 8, 772),
    "gpt-4.1-mini": ModelRates(0.4, 1.6, 2348),
    "gemini-2.0-flash": ModelRates(0.1, 0.4, 1290),
    "holo1-3b": ModelRates(0.1, 0.4, 1280),
    "holo1-7b": ModelRates(0.15, 0.6, 1280),
    "qwen2.5-vl-7b-instruct": ModelRates(0.15, 0.6, 1280),
    "qwen2.5-vl-32b-instruct": ModelRates(0.5, 2, 1280),
}


def normalize_model_id(model_id: str) -> str:
    # Hub-style ids ("Hcompany/Holo1-7B") resolve to their bare lowercase name.
    return model_id.rsplit("/", 1)[-1].strip().lower()


class PricingTable:
    def __init__(self, rates: dict[str, ModelRates] | None = None) -> None:
        self._rates = {normalize_model_id(k): v for k, v in (rates or DEFAULT_RATES).items()}

    @classmethod
    def default(cls) -> PricingTable:
        return cls(DEFAULT_RATES)

    def with_overrides(self, overrides: dict[str, ModelRates]) -> PricingTable:
        merged = dict(self._rates)
        merged.update({normalize_model_id(k): v for k, v in overrides.items()})
        return PricingTable(merged)

    def rates(self, model_id: str) -> ModelRates:
        try:
            return self._rates[normalize_model_id(model_id)]
        except KeyError:
            raise UnknownModelError(model_id) from None

    def __contains__(self, model_id: object) -> bool:
        return isinstance(model_id, str) and normalize_model_id(model_id) in self._rates

    def model_ids(self) -> list[str]:
        return sorted(self._rates)


def image_tokens(width: int, height: int, model_id: str, table: PricingTable) -> int:
    tokens = table.rates(model_id).image_tokens_1200 * (width * height) / REFERENCE_IMAGE_AREA
    return math.floor(tokens + 0.5)


def estimate_tokens(
    text: str,
    images: Iterable[tuple[int, int]],
    model_id: str,
    table: PricingTable | None = None,
) -> int:
    """ceil(chars / 4) plus area-scaled image tokens.

    Used only when an endpoint does not report usage.
    """
    table = table or PricingTable.default()
    table.rates(model_id)
    total = math.ceil(len(text) / 4)
    for w, h in images:
        total += image_tokens(w, h, model_id, table)
    return total


def price(input_tokens: int, output_tokens: int, model_id: str, table: PricingTable | None = None) -> float:
    table = table or PricingTable.default()
    r = table.rates(model_id)
    # Single division keeps round numbers exact, e.g. 872 in + 50 out on
    # gpt-4o is exactly 0.00268.
    return (input_tokens * r.rate_in + output_tokens * r.rate_out) / 1_000_000


@dataclass(frozen=True)
class UsageRecord:
    model_id: str
    input_tokens: int
    output_tokens: int
    images_sent: int
    module_tag: str
    cost_usd: float
    estimated: bool = False
    schema_enforced: bool = True

    def __post_init__(self) -> None:
        if self.module_tag not in MODULE_TAGS:
            raise ValueError(f"unknown module tag {self.module_tag!r}")
        if min(self.input_tokens, self.output_tokens, self.images_sent) < 0 or self.cost_usd < 0:
            raise ValueError("usage counts and cost must be non-negative")

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "images_sent": self.images_sent,
            "module_tag": self.module_tag,
            "cost_usd": self.cost_usd,
            "estimated": self.estimated,
            "schema_enforced": self.schema_enforced,
        }


@dataclass
class LedgerReport:
    by_module: dict[str, float]
    by_model: dict[str, float]
    by_module_model: dict[tuple[str, str], float]
    agent_total: float
    judge_total: float
    grand_total: float
    input_tokens: int
    output_tokens: int
    calls: int

    def to_dict(self) -> dict:
        return {
            "by_module": self.by_module,
            "by_model": self.by_model,
            "by_module_model": {f"{m}/{k}": v for (m, k), v in self.by_module_model.items()},
            "agent_total_usd": self.agent_total,
            "judge_total_usd": self.judge_total,
            "grand_total_usd": self.grand_total,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "calls": self.calls,
        }


@dataclass
class UsageLedger:
    """Append-only, thread-safe list of usage records."""

    id: str = "ledger"
    _records: list[UsageRecord] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def append(self, record: UsageRecord) -> None:
        with self._lock:
            self._records.append(record)

    @property
    def records(self) -> tuple[UsageRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def agent_cost(self) -> float:
        return math.fsum(r.cost_usd for r in self.records if r.module_tag in AGENT_TAGS)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


def ledger_report(ledger: UsageLedger | Iterable[UsageRecord]) -> LedgerReport:
    """Group costs by module and model. Judge spend is kept out of agent_total.

    Sums use ``math.fsum`` so totals do not depend on record order.
    """
    records = ledger.records if isinstance(ledger, UsageLedger) else tuple(ledger)
    by_module: dict[str, list[float]] = defaultdict(list)
    by_model: dict[str, list[float]] = defaultdict(list)
    by_pair: dict[tuple[str, str], list[float]] = defaultdict(list)
    for r in records:
        by_module[r.module_tag].append(r.cost_usd)
        by_model[r.model_id].append(r.cost_usd)
        by_pair[(r.module_tag, r.model_id)].append(r.cost_usd)
    agent = [r.cost_usd for r in records if r.module_tag in AGENT_TAGS]
    judge = [r.cost_usd for r in records if r.module_tag == "judge"]
    return LedgerReport(
        by_module={tag: math.fsum(by_module.get(tag, ())) for tag in MODULE_TAGS},
        by_model={k: math.fsum(v) for k, v in sorted(by_model.items())},
        by_module_model={k: math.fsum(v) for k, v in sorted(by_pair.items())},
        agent_total=math.fsum(agent),
        judge_total=math.fsum(judge),
        grand_total=math.fsum(r.cost_usd for r in records),
        input_tokens=sum(r.input_tokens for r in records),
        output_tokens=sum(r.output_tokens for r in records),
        calls=len(records),
    )
