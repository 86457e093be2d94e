"""Deterministic simulated browser.

A world file describes pages made of clickable elements and text regions::

    {"start": "p1",
     "pages": [{"id": "p1", "background": "home", "height": 2400,
                "elements": [{"bbox": [x1, y1, x2, y2], "label": "Search",
                              "effect": {"kind": "navigate", "page": "p2"},
                              "submit": {"kind": "navigate", "page": "p3"}}],
                "text": [{"bbox": [x1, y1, x2, y2], "content": "Query: {q}"}]}]}

Effects are ``navigate`` (``page``), ``set_state`` (``key``, ``value``),
``append_text`` (``region``: the state key typed text goes to) and ``none``.
Clicking an ``append_text`` element focuses it; a Type action then appends
its text and presses enter, which fires the element's ``submit`` effect.
``{key}`` placeholders in text regions show the current state.

Pages are addressed as ``sim://<id>`` unless they set ``url``. A page with
``"loads": false`` times out on navigation and one with ``"crash": true``
kills the browser.
"""

from __future__ import annotations

import hashlib
import io
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from PIL import Image, ImageDraw, ImageFont

from ..core import Action, Answer, Back, Click, GoTo, Refresh, Scroll, Type, Wait
from .base import EnvConfig, EnvError, NavigationTimeout, Observation

_PLACEHOLDER = re.compile(r"\{(\w+)\}")
EFFECT_KINDS = ("navigate", "set_state", "append_text", "none")


class WorldValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Effect:
    kind: str = "none"
    page: str | None = None
    key: str | None = None
    value: str | None = None

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> Effect:
        if not data:
            return cls()
        if "kind" not in data and len(data) == 1:
            # shorthand: {"navigate": "p2"} / {"append_text": "q"}
            (kind, arg), = data.items()
            data = {"kind": kind, "page" if kind == "navigate" else "region": arg}
        kind = data["kind"]
        if kind not in EFFECT_KINDS:
            raise WorldValidationError(f"unknown effect kind {kind!r}")
        if kind == "navigate":
            return cls(kind, page=data["page"])
        if kind == "set_state":
            return cls(kind, key=data["key"], value=str(data["value"]))
        if kind == "append_text":
            return cls(kind, key=data["region"])
        return cls()


@dataclass(frozen=True)
class ElementSpec:
    bbox: tuple[int, int, int, int]
    label: str
    effect: Effect = Effect()
    submit: Effect = Effect()

    def contains(self, x: int, y: int) -> bool:
        x1, y1, x2, y2 = self.bbox
        return x1 <= x <= x2 and y1 <= y <= y2

    @property
    def center(self) -> tuple[int, int]:
        x1, y1, x2, y2 = self.bbox
        return (x1 + x2) // 2, (y1 + y2) // 2


@dataclass(frozen=True)
class TextRegion:
    bbox: tuple[int, int, int, int]
    content: str


@dataclass(frozen=True)
class PageSpec:
    id: str
    url: str
    background: str = ""
    height: int | None = None
    elements: tuple[ElementSpec, ...] = ()
    text: tuple[TextRegion, ...] = ()
    loads: bool = True
    crash: bool = False

    def element_at(self, x: int, y: int) -> ElementSpec | None:
        # Later elements are drawn on top.
        for el in reversed(self.elements):
            if el.contains(x, y):
                return el
        return None


@dataclass(frozen=True)
class World:
    start: str
    pages: dict[str, PageSpec]
    name: str = "world"

    def page_for_url(self, url: str) -> PageSpec | None:
        for page in self.pages.values():
            if page.url == url or page.id == url:
                return page
        return None


def _bbox(value: Any) -> tuple[int, int, int, int]:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise WorldValidationError(f"bbox must have 4 integers, got {value!r}")
    x1, y1, x2, y2 = (int(v) for v in value)
    if x1 > x2 or y1 > y2:
        raise WorldValidationError(f"bbox {value!r} is not ordered")
    return x1, y1, x2, y2


def parse_world(data: dict[str, Any], config: EnvConfig | None = None, name: str = "world") -> World:
    """Build and validate a world; dangling page references are reported by id."""
    config = config or EnvConfig()
    vw, vh = config.viewport
    pages: dict[str, PageSpec] = {}
    for raw in data.get("pages", []):
        pid = str(raw["id"])
        if pid in pages:
            raise WorldValidationError(f"duplicate page id {pid!r}")
        height = int(raw.get("height") or vh)
        elements = []
        for el in raw.get("elements", []):
            bbox = _bbox(el["bbox"])
            if bbox[0] < 0 or bbox[1] < 0 or bbox[2] >= vw or bbox[3] >= max(height, vh):
                raise WorldValidationError(f"element {el.get('label')!r} on page {pid!r} lies outside the page")
            elements.append(
                ElementSpec(
                    bbox=bbox,
                    label=str(el.get("label", "")),
                    effect=Effect.from_dict(el.get("effect")),
                    submit=Effect.from_dict(el.get("submit")),
                )
            )
        texts = tuple(TextRegion(_bbox(t["bbox"]), str(t["content"])) for t in raw.get("text", []))
        pages[pid] = PageSpec(
            id=pid,
            url=str(raw.get("url") or f"sim://{pid}"),
            background=str(raw.get("background", "")),
            height=height,
            elements=tuple(elements),
            text=texts,
            loads=bool(raw.get("loads", True)),
            crash=bool(raw.get("crash", False)),
        )
    start = str(data.get("start", ""))
    if start not in pages:
        raise WorldValidationError(f"start page {start!r} does not exist")
    for page in pages.values():
        for el in page.elements:
            for eff in (el.effect, el.submit):
                if eff.kind == "navigate" and eff.page not in pages:
                    raise WorldValidationError(f"page {page.id!r} links to missing page {eff.page!r}")
    return World(start=start, pages=pages, name=name)


def _color(label: str, salt: str = "") -> tuple[int, int, int]:
    digest = hashlib.sha256((salt + label).encode()).digest()
    # Keep backgrounds light so dark text stays readable.
    return tuple(160 + b % 96 for b in digest[:3])  # type: ignore[return-value]


@dataclass
class _View:
    page_id: str | None
    url: str
    scroll: int = 0


@dataclass
class SimEnv:
    world: World
    config: EnvConfig = field(default_factory=EnvConfig)
    real_time: bool = False

    def __post_init__(self) -> None:
        self.state: dict[str, str] = {}
        self.view = _View(self.world.start, self.world.pages[self.world.start].url)
        self.history: list[_View] = []
        self.focus: ElementSpec | None = None
        self.alive = True
        self._cache: dict[tuple, bytes] = {}
        self._font = ImageFont.load_default()

    # ---- public interface

    @property
    def page(self) -> PageSpec | None:
        return self.world.pages.get(self.view.page_id) if self.view.page_id else None

    @property
    def url(self) -> str:
        return self.view.url

    def reset(self) -> Observation:
        self._check()
        self.state.clear()
        self.history.clear()
        self.focus = None
        self.view = _View(self.world.start, self.world.pages[self.world.start].url)
        return self._observe()

    def open(self, url: str) -> Observation:
        self._check()
        self._navigate_url(url, push=False)
        return self._observe()

    def execute(self, action: Action) -> Observation:
        """Apply ``action`` and return the new view.

        Click and Type need a resolved target point. Raises
        ``NavigationTimeout`` for pages that never load (the view still
        changes) and ``EnvError`` once the browser is dead.
        """
        self._check()
        latency = 0.0
        if isinstance(action, Click):
            self._click(self._point(action))
        elif isinstance(action, Type):
            self._click(self._point(action))
            if self.focus is not None and self.focus.effect.kind == "append_text":
                key = self.focus.effect.key
                self.state[key] = self.state.get(key, "") + action.text
            if self.focus is not None:
                # enter key
                self._apply(self.focus.submit)
        elif isinstance(action, Scroll):
            page = self.page
            limit = max(0, (page.height if page else 0) - self.config.viewport[1])
            delta = self.config.scroll_px if action.direction == "down" else -self.config.scroll_px
            self.view.scroll = min(max(self.view.scroll + delta, 0), limit)
        elif isinstance(action, Wait):
            latency = self.config.wait_ms / 1000
            if self.real_time:
                time.sleep(latency)
        elif isinstance(action, Refresh):
            self.view.scroll = 0
            self.focus = None
        elif isinstance(action, GoTo):
            self._navigate_url(action.url, push=True)
        elif isinstance(action, Back):
            if self.history:
                self.view = self.history.pop()
                self.focus = None
        elif isinstance(action, Answer):
            pass
        else:  # pragma: no cover - Action is a closed union
            raise TypeError(f"unsupported action {action!r}")
        return self._observe(latency)

    def screenshot(self) -> bytes:
        self._check()
        key = (self.view.page_id, self.view.url, self.view.scroll, tuple(sorted(self.state.items())))
        cached = self._cache.get(key)
        if cached is None:
            cached = self._cache[key] = self._render()
        return cached

    def close(self) -> None:
        self.alive = False

    kill = close

    # ---- internals

    def _check(self) -> None:
        if not self.alive:
            raise EnvError("browser is not running")

    def _observe(self, latency: float = 0.0) -> Observation:
        return Observation(self.screenshot(), self.view.url, latency)

    @staticmethod
    def _point(action: Click | Type) -> tuple[int, int]:
        p = action.target.resolved
        if p is None:
            raise ValueError(f"{action.kind} action needs resolved coordinates")
        return p.x, p.y

    def _click(self, point: tuple[int, int]) -> None:
        page = self.page
        if page is None:
            return
        el = page.element_at(point[0], point[1] + self.view.scroll)
        if el is None:
            self.focus = None
            return
        self.focus = el
        if el.effect.kind != "append_text":
            self._apply(el.effect)

    def _apply(self, effect: Effect) -> None:
        if effect.kind == "navigate":
            self._goto_page(self.world.pages[effect.page], push=True)
        elif effect.kind == "set_state":
            self.state[effect.key] = effect.value

    def _goto_page(self, page: PageSpec, push: bool) -> None:
        if push:
            self.history.append(_View(self.view.page_id, self.view.url, self.view.scroll))
        self.focus = None
        if page.crash:
            self.alive = False
            raise EnvError(f"browser crashed loading {page.url}")
        self.view = _View(page.id, page.url)
        if not page.loads:
            self.view = _View(None, page.url)
            raise NavigationTimeout(f"{page.url} did not load within {self.config.navigation_timeout_s}s")

    def _navigate_url(self, url: str, push: bool) -> None:
        page = self.world.page_for_url(url)
        if page is not None:
            self._goto_page(page, push)
            return
        if push:
            self.history.append(_View(self.view.page_id, self.view.url, self.view.scroll))
        self.focus = None
        self.view = _View(None, url)

    def _render(self) -> bytes:
        w, h = self.config.viewport
        page = self.page
        if page is None:
            img = Image.new("RGB", (w, h), (255, 255, 255))
            draw = ImageDraw.Draw(img)
            draw.text((20, 20), f"This page could not be loaded: {self.view.url}", fill=(0, 0, 0), font=self._font)
        else:
            img = Image.new("RGB", (w, h), _color(page.background or page.id, "bg"))
            draw = ImageDraw.Draw(img)
            off = self.view.scroll
            if page.background:
                draw.text((8, 8 - off), page.background, fill=(40, 40, 40), font=self._font)
            for el in page.elements:
                x1, y1, x2, y2 = el.bbox
                if y2 - off < 0 or y1 - off >= h:
                    continue
                draw.rectangle((x1, y1 - off, x2, y2 - off), fill=_color(el.label, "el"), outline=(20, 20, 20))
                draw.text((x1 + 4, y1 - off + 4), el.label, fill=(0, 0, 0), font=self._font)
            for region in page.text:
                x1, y1, x2, y2 = region.bbox
                if y2 - off < 0 or y1 - off >= h:
                    continue
                content = _PLACEHOLDER.sub(lambda m: self.state.get(m.group(1), ""), region.content)
                draw.rectangle((x1, y1 - off, x2, y2 - off), fill=(250, 250, 250))
                draw.text((x1 + 4, y1 - off + 4), content, fill=(0, 0, 0), font=self._font)
        buf = io.BytesIO()
        img.save(buf, format="PNG", compress_level=1)
        return buf.getvalue()


def load_world(spec: str | Path | dict[str, Any], config: EnvConfig | None = None) -> SimEnv:
    """Load a world file (or dict) and return an environment at its start page."""
    if isinstance(spec, dict):
        data, name = spec, str(spec.get("name", "world"))
    else:
        path = Path(spec)
        data, name = json.loads(path.read_text(encoding="utf-8")), path.stem
    config = config or EnvConfig()
    return SimEnv(parse_world(data, config, name), config)
