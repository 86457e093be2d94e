"""Localizer: element description + screenshot -> pixel coordinates."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

from .core import ElementQuery, Point
from .gateway import ChatRequest, ImagePayload, ModelClient, Turn, UsageLedger
from .images import content_id, downscale, image_size
from .resources import load_template, render_template

log = logging.getLogger(__name__)

_NUM = r"(-?\d+(?:\.\d+)?)"
_TUPLE = re.compile(r"\(\s*" + _NUM + r"\s*,\s*" + _NUM + r"\s*\)")
_OBJECT = re.compile(r"\{[^{}]*\}")


class CoordinateParseError(ValueError):
    pass


class LocalizeError(RuntimeError):
    def __init__(self, message: str, last_text: str = "") -> None:
        super().__init__(message)
        self.last_text = last_text


@dataclass(frozen=True)
class LocalizerConfig:
    model_id: str = "holo1-7b"
    max_edge: int = 1200
    max_retries: int = 3
    # "tuple", "json" or None for either.
    format_hint: str | None = None
    temperature: float = 0.0
    max_output_tokens: int = 64


@dataclass(frozen=True)
class Located:
    point: Point
    out_of_bounds: bool = False
    raw: str = ""


def _json_point(candidate: str) -> tuple[float, float] | None:
    try:
        obj = json.loads(candidate)
    except json.JSONDecodeError:
        return None
    if not isinstance(obj, dict):
        return None
    x, y = obj.get("x"), obj.get("y")
    if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (x, y)):
        return float(x), float(y)
    return None


def parse_coordinates(text: str, format_hint: str | None = None) -> Point:
    """Read ``(x, y)`` tuple text or a ``{"x": .., "y": ..}`` object.

    When both appear, the one earliest in the text wins. Fractional values are
    rounded to the nearest pixel.
    """
    found: list[tuple[int, float, float]] = []
    if format_hint in (None, "tuple"):
        m = _TUPLE.search(text)
        if m:
            found.append((m.start(), float(m.group(1)), float(m.group(2))))
    if format_hint in (None, "json"):
        for m in _OBJECT.finditer(text):
            xy = _json_point(m.group(0))
            if xy is not None:
                found.append((m.start(), *xy))
                break
    if not found:
        raise CoordinateParseError(f"no coordinates found in {text[:80]!r}")
    _, x, y = min(found)
    return Point(round(x), round(y))


def clamp(p: Point, width: int, height: int) -> tuple[Point, bool]:
    cx = min(max(p.x, 0), width - 1)
    cy = min(max(p.y, 0), height - 1)
    return Point(cx, cy), (cx, cy) != (p.x, p.y)


def hit_test(p: Point, bbox: tuple[int, int, int, int]) -> bool:
    """Boundary-inclusive point-in-box test."""
    x1, y1, x2, y2 = bbox
    return x1 <= p.x <= x2 and y1 <= p.y <= y2


def build_locate_request(image: ImagePayload, description: str, config: LocalizerConfig) -> ChatRequest:
    return ChatRequest(
        system=load_template("localizer_system"),
        turns=(Turn("user", render_template(load_template("localizer_user"), description=description), (image,)),),
        max_output_tokens=config.max_output_tokens,
        temperature=config.temperature,
    )


def locate(
    screenshot: bytes,
    query: ElementQuery | str,
    client: ModelClient,
    config: LocalizerConfig | None = None,
    ledger: UsageLedger | None = None,
) -> Located:
    """Resolve ``query`` to a point in the original screenshot's pixel space.

    Screenshots whose longest edge exceeds ``config.max_edge`` are downscaled
    before sending and the answer is mapped back by the inverse factor.
    Out-of-bounds answers are clamped and flagged.
    """
    if not screenshot:
        raise ValueError("empty screenshot")
    config = config or LocalizerConfig()
    description = query.description if isinstance(query, ElementQuery) else query
    width, height = image_size(screenshot)
    sent, factor = downscale(screenshot, config.max_edge)
    sw, sh = (width, height) if factor == 1.0 else image_size(sent)
    request = build_locate_request(ImagePayload(content_id(sent), sent, sw, sh), description, config)

    last = ""
    for i in range(config.max_retries):
        last, _ = client.complete(request, "localizer", ledger)
        try:
            p = parse_coordinates(last, config.format_hint)
        except CoordinateParseError as exc:
            log.info("localizer output rejected (try %d/%d): %s", i + 1, config.max_retries, exc)
            continue
        if factor != 1.0:
            p = Point(round(p.x * factor), round(p.y * factor))
        point, oob = clamp(p, width, height)
        if oob:
            log.warning("localizer point %s outside %dx%d, clamped to %s", p, width, height, point)
        return Located(point, oob, last)
    raise LocalizeError(f"no coordinates for {description!r} after {config.max_retries} tries", last)
