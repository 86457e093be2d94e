"""Live browser over the W3C WebDriver HTTP protocol (chromedriver, geckodriver,
Selenium Grid)."""

from __future__ import annotations

import base64
import io
import time

import httpx
from PIL import Image

from ..core import Action, Answer, Back, Click, GoTo, Refresh, Scroll, Type, Wait
from .base import EnvConfig, EnvError, NavigationTimeout, Observation

ENTER = "\ue007"  # WebDriver key code for Enter


class WebDriverEnv:
    def __init__(
        self,
        endpoint: str,
        config: EnvConfig | None = None,
        capabilities: dict | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.config = config or EnvConfig()
        self.client = client or httpx.Client(timeout=self.config.navigation_timeout_s + 5)
        self.capabilities = capabilities or {
            "browserName": "chrome",
            "goog:chromeOptions": {"args": ["--headless=new", "--hide-scrollbars"]},
        }
        self.session_id: str | None = None

    # ---- wire

    def _call(self, method: str, path: str, body: dict | None = None) -> object:
        url = f"{self.endpoint}/session/{self.session_id}{path}" if self.session_id else f"{self.endpoint}{path}"
        try:
            resp = self.client.request(method, url, json=body if method == "POST" else None)
        except httpx.TimeoutException as exc:
            raise NavigationTimeout(str(exc)) from exc
        except httpx.TransportError as exc:
            raise EnvError(f"webdriver unreachable: {exc}") from exc
        try:
            payload = resp.json()
        except ValueError:
            raise EnvError(f"webdriver returned non-JSON (HTTP {resp.status_code})") from None
        value = payload.get("value") if isinstance(payload, dict) else None
        if resp.status_code >= 400:
            error = value.get("error", "") if isinstance(value, dict) else ""
            if error == "timeout":
                raise NavigationTimeout(value.get("message", "timeout"))
            raise EnvError(f"webdriver {error or resp.status_code}: {value}")
        return value

    def _script(self, script: str, *args: object) -> object:
        return self._call("POST", "/execute/sync", {"script": script, "args": list(args)})

    # ---- lifecycle

    def start(self) -> None:
        value = self._call("POST", "/session", {"capabilities": {"alwaysMatch": self.capabilities}})
        self.session_id = value["sessionId"]  # type: ignore[index]
        self._call("POST", "/timeouts", {"pageLoad": int(self.config.navigation_timeout_s * 1000)})
        self._fit_viewport()

    def _fit_viewport(self) -> None:
        # Window size includes browser chrome; grow it until the viewport fits.
        w, h = self.config.viewport
        self._call("POST", "/window/rect", {"width": w, "height": h})
        inner = self._script("return [window.innerWidth, window.innerHeight];")
        if isinstance(inner, list) and len(inner) == 2:
            dw, dh = w - int(inner[0]), h - int(inner[1])
            if dw or dh:
                self._call("POST", "/window/rect", {"width": w + dw, "height": h + dh})

    def close(self) -> None:
        if self.session_id:
            try:
                self._call("DELETE", "")
            finally:
                self.session_id = None

    # ---- environment interface

    def open(self, url: str) -> Observation:
        if self.session_id is None:
            self.start()
        started = time.monotonic()
        self._call("POST", "/url", {"url": url})
        return self._observe(started)

    def execute(self, action: Action) -> Observation:
        if self.session_id is None:
            raise EnvError("no browser session")
        started = time.monotonic()
        if isinstance(action, (Click, Type)):
            p = action.target.resolved
            if p is None:
                raise ValueError(f"{action.kind} action needs resolved coordinates")
            self._pointer_click(p.x, p.y)
            if isinstance(action, Type):
                self._keys(action.text + ENTER)
        elif isinstance(action, Scroll):
            dy = self.config.scroll_px if action.direction == "down" else -self.config.scroll_px
            self._script("window.scrollBy(0, arguments[0]);", dy)
        elif isinstance(action, Wait):
            time.sleep(self.config.wait_ms / 1000)
        elif isinstance(action, Refresh):
            self._call("POST", "/refresh", {})
        elif isinstance(action, GoTo):
            self._call("POST", "/url", {"url": action.url})
        elif isinstance(action, Back):
            self._call("POST", "/back", {})
        elif isinstance(action, Answer):
            pass
        return self._observe(started)

    def _pointer_click(self, x: int, y: int) -> None:
        actions = {
            "actions": [
                {
                    "type": "pointer",
                    "id": "mouse",
                    "parameters": {"pointerType": "mouse"},
                    "actions": [
                        {"type": "pointerMove", "duration": 0, "origin": "viewport", "x": x, "y": y},
                        {"type": "pointerDown", "button": 0},
                        {"type": "pointerUp", "button": 0},
                    ],
                }
            ]
        }
        self._call("POST", "/actions", actions)
        self._call("DELETE", "/actions")

    def _keys(self, text: str) -> None:
        keys = []
        for ch in text:
            keys += [{"type": "keyDown", "value": ch}, {"type": "keyUp", "value": ch}]
        self._call("POST", "/actions", {"actions": [{"type": "key", "id": "keyboard", "actions": keys}]})
        self._call("DELETE", "/actions")

    def current_url(self) -> str:
        return str(self._call("GET", "/url"))

    def screenshot(self) -> bytes:
        if self.session_id is None:
            raise EnvError("no browser session")
        data = base64.b64decode(str(self._call("GET", "/screenshot")))
        return _fit(data, self.config.viewport)

    def _observe(self, started: float) -> Observation:
        shot = self.screenshot()
        return Observation(shot, self.current_url(), time.monotonic() - started)


def _fit(data: bytes, viewport: tuple[int, int]) -> bytes:
    """Crop or pad a capture to exactly the viewport size."""
    with Image.open(io.BytesIO(data)) as im:
        if im.size == viewport:
            return data
        canvas = Image.new("RGB", viewport, (255, 255, 255))
        canvas.paste(im.convert("RGB").crop((0, 0, *viewport)), (0, 0))
        buf = io.BytesIO()
        canvas.save(buf, format="PNG")
        return buf.getvalue()
