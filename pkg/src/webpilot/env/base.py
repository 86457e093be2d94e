from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from ..core import Action


class EnvError(RuntimeError):
    """The browser is gone; the attempt cannot continue."""


class NavigationTimeout(TimeoutError):
    """A page did not finish loading in time. The episode may continue."""


@dataclass(frozen=True)
class EnvConfig:
    viewport: tuple[int, int] = (1200, 1200)
    wait_ms: int = 2000
    scroll_fraction: float = 0.75
    navigation_timeout_s: float = 15.0

    def __post_init__(self) -> None:
        w, h = self.viewport
        if w <= 0 or h <= 0 or self.wait_ms <= 0 or self.scroll_fraction <= 0 or self.navigation_timeout_s <= 0:
            raise ValueError("environment settings must all be positive")

    @property
    def scroll_px(self) -> int:
        return round(self.scroll_fraction * self.viewport[1])


@dataclass(frozen=True)
class Observation:
    screenshot: bytes
    url: str
    step_latency: float = 0.0


class Environment(Protocol):
    config: EnvConfig

    def open(self, url: str) -> Observation: ...

    def execute(self, action: Action) -> Observation: ...

    def screenshot(self) -> bytes: ...

    def close(self) -> None: ...
