"""Application config: model bindings, environment, budgets, pricing.

TOML (or JSON) layout::

    [models.policy]        # also localizer, validator, judge
    model_id = "holo1-7b"
    base_url = "http://localhost:8000/v1"   # omit for the mock backend
    api_key_env_var = "HOLO_API_KEY"
    mock_script = "scripts/policy.json"      # file, or directory of <task id>.json
    rate_in = 0.15                           # optional per-binding price override
    rate_out = 0.6
    image_tokens_1200 = 1280

    [env]
    driver = "sim"          # sim | webdriver | cdp
    endpoint = "http://localhost:4444"
    viewport = [1200, 1200]
    wait_ms = 2000
    scroll_fraction = 0.75
    navigation_timeout_s = 15

    [run]
    max_steps = 30
    max_attempts = 10
    cost_budget_usd = 1.0
    time_budget_s = 600
    reset_between_attempts = false
    parallel = 4

    [pricing."my-model"]
    rate_in = 1.0
    rate_out = 2.0
    image_tokens_1200 = 1000

    [output]
    traces_dir = "runs/traces"

API keys never appear in the file, only the names of the variables holding them.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .env import EnvConfig
from .gateway import ModelRates, PricingTable
from .orchestrator import RunConfig

ROLES = ("policy", "localizer", "validator", "judge")
DEFAULT_MODELS = {"policy": "holo1-7b", "localizer": "holo1-7b", "validator": "gpt-4o", "judge": "gpt-4o"}
DRIVERS = ("sim", "webdriver", "cdp")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    model_id: str
    base_url: str | None = None
    api_key_env_var: str | None = None
    mock_script: str | None = None
    rate_in: float | None = None
    rate_out: float | None = None
    image_tokens_1200: int | None = None

    @property
    def backend(self) -> str:
        return "http" if self.base_url else "mock"


@dataclass(frozen=True)
class AppConfig:
    models: dict[str, EndpointConfig]
    env: EnvConfig = field(default_factory=EnvConfig)
    driver: str = "sim"
    env_endpoint: str | None = None
    run: RunConfig = field(default_factory=RunConfig)
    parallel: int = 1
    pricing: PricingTable = field(default_factory=PricingTable.default)
    traces_dir: str | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def live(self) -> bool:
        return self.driver != "sim" or any(m.backend == "http" for m in self.models.values())

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict[str, Any]:
        return {
            "models": {role: asdict(m) for role, m in self.models.items()},
            "env": {**asdict(self.env), "viewport": list(self.env.viewport), "driver": self.driver,
                    "endpoint": self.env_endpoint},
            "run": {**asdict(self.run), "parallel": self.parallel},
            "traces_dir": self.traces_dir,
        }


def _read(path: Path) -> dict[str, Any]:
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _known(section: dict[str, Any], allowed: set[str], where: str) -> dict[str, Any]:
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(extra)}")
    return section


def build_config(raw: dict[str, Any], base_dir: Path | None = None, check_env: bool = True) -> AppConfig:
    """Validate a parsed config mapping and fill in defaults."""
    raw = dict(raw)
    _known(raw, {"models", "env", "run", "pricing", "output"}, "top level")

    pricing = PricingTable.default()
    overrides = {}
    for model_id, rates in (raw.get("pricing") or {}).items():
        try:
            overrides[model_id] = ModelRates(float(rates["rate_in"]), float(rates["rate_out"]), int(rates["image_tokens_1200"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad pricing for {model_id!r}: {exc}") from None

    models: dict[str, EndpointConfig] = {}
    raw_models = raw.get("models") or {}
    _known(raw_models, set(ROLES), "models")
    for role in ROLES:
        section = _known(dict(raw_models.get(role) or {}), set(EndpointConfig.__dataclass_fields__), f"models.{role}")
        section.setdefault("model_id", DEFAULT_MODELS[role])
        ep = EndpointConfig(**section)
        rate_keys = (ep.rate_in, ep.rate_out, ep.image_tokens_1200)
        if any(v is not None for v in rate_keys):
            if any(v is None for v in rate_keys):
                raise ConfigError(f"[models.{role}] needs all of rate_in, rate_out, image_tokens_1200")
            overrides[ep.model_id] = ModelRates(float(ep.rate_in), float(ep.rate_out), int(ep.image_tokens_1200))
        models[role] = ep
    pricing = pricing.with_overrides(overrides)
    for role, ep in models.items():
        if ep.model_id not in pricing:
            raise ConfigError(f"model {ep.model_id!r} bound to {role} has no price; add a [pricing] entry")

    env_raw = _known(dict(raw.get("env") or {}), {"driver", "endpoint", "viewport", "wait_ms", "scroll_fraction",
                                                 "navigation_timeout_s"}, "env")
    driver = env_raw.pop("driver", "sim")
    if driver not in DRIVERS:
        raise ConfigError(f"unknown env driver {driver!r}; expected one of {DRIVERS}")
    endpoint = env_raw.pop("endpoint", None)
    if "viewport" in env_raw:
        env_raw["viewport"] = tuple(int(v) for v in env_raw["viewport"])
    try:
        env = EnvConfig(**env_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[env]: {exc}") from None
    if driver != "sim" and not endpoint:
        raise ConfigError(f"env driver {driver!r} needs an endpoint")

    run_raw = _known(dict(raw.get("run") or {}), set(RunConfig.__dataclass_fields__) | {"parallel"}, "run")
    parallel = int(run_raw.pop("parallel", 1))
    try:
        run = RunConfig(**run_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[run]: {exc}") from None
    if parallel < 1:
        raise ConfigError("[run] parallel must be >= 1")

    output = _known(dict(raw.get("output") or {}), {"traces_dir"}, "output")
    config = AppConfig(
        models=models,
        env=env,
        driver=driver,
        env_endpoint=endpoint,
        run=run,
        parallel=parallel,
        pricing=pricing,
        traces_dir=output.get("traces_dir"),
        base_dir=base_dir or Path.cwd(),
    )
    if check_env and config.live:
        for role, ep in models.items():
            if ep.backend == "http" and ep.api_key_env_var and not os.environ.get(ep.api_key_env_var):
                raise ConfigError(f"environment variable {ep.api_key_env_var} for {role} is not set")
    return config


def load_config(path: str | Path | None = None, check_env: bool = True) -> AppConfig:
    if path is None:
        return build_config({}, check_env=check_env)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return build_config(_read(path), base_dir=path.parent.resolve(), check_env=check_env)
