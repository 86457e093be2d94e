from .client import (
    Backend,
    BackendResponse,
    ChatRequest,
    GatewayConfigError,
    GatewayError,
    ImagePayload,
    ModelClient,
    TransportError,
    Turn,
)
from .http import HttpBackend
from .mock import MockBackend, MockExhausted, MockRule
from .pricing import (
    AGENT_TAGS,
    DEFAULT_RATES,
    MODULE_TAGS,
    LedgerReport,
    ModelRates,
    PricingTable,
    UnknownModelError,
    UsageLedger,
    UsageRecord,
    estimate_tokens,
    ledger_report,
    price,
)

__all__ = [
    "AGENT_TAGS",
    "DEFAULT_RATES",
    "MODULE_TAGS",
    "Backend",
    "BackendResponse",
    "ChatRequest",
    "GatewayConfigError",
    "GatewayError",
    "HttpBackend",
    "ImagePayload",
    "LedgerReport",
    "MockBackend",
    "MockExhausted",
    "MockRule",
    "ModelClient",
    "ModelRates",
    "PricingTable",
    "TransportError",
    "Turn",
    "UnknownModelError",
    "UsageLedger",
    "UsageRecord",
    "estimate_tokens",
    "ledger_report",
    "price",
]
