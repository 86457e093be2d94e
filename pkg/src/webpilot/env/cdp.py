"""Live browser over the Chrome DevTools Protocol."""

from __future__ import annotations

import base64
import itertools
import json
import time
from typing import Any, Protocol

import httpx

from ..core import Action, Answer, Back, Click, GoTo, Refresh, Scroll, Type, Wait
from .base import EnvConfig, EnvError, NavigationTimeout, Observation
from .webdriver import _fit


class CdpSession(Protocol):
    def call(self, method: str, params: dict[str, Any] | None = None, timeout: float | None = None) -> dict: ...

    def close(self) -> None: ...


class WebSocketSession:
    """Minimal synchronous CDP client; events are read and dropped."""

    def __init__(self, ws_url: str) -> None:
        from websockets.sync.client import connect

        self._ws = connect(ws_url, max_size=None)
        self._ids = itertools.count(1)

    @classmethod
    def for_endpoint(cls, endpoint: str) -> WebSocketSession:
        """Attach to the first page target of a browser started with --remote-debugging-port."""
        base = endpoint.rstrip("/")
        try:
            targets = httpx.get(f"{base}/json/list", timeout=10).json()
        except httpx.HTTPError as exc:
            raise EnvError(f"devtools endpoint unreachable: {exc}") from exc
        pages = [t for t in targets if t.get("type") == "page"]
        if not pages:
            target = httpx.put(f"{base}/json/new?about:blank", timeout=10).json()
        else:
            target = pages[0]
        return cls(target["webSocketDebuggerUrl"])

    def call(self, method: str, params: dict[str, Any] | None = None, timeout: float | None = None) -> dict:
        msg_id = next(self._ids)
        self._ws.send(json.dumps({"id": msg_id, "method": method, "params": params or {}}))
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            remaining = None if deadline is None else max(0.0, deadline - time.monotonic())
            try:
                raw = self._ws.recv(timeout=remaining)
            except TimeoutError:
                raise NavigationTimeout(f"{method} timed out") from None
            except Exception as exc:  # noqa: BLE001 - connection closed
                raise EnvError(f"devtools connection lost: {exc}") from exc
            msg = json.loads(raw)
            if msg.get("id") == msg_id:
                if "error" in msg:
                    raise EnvError(f"{method}: {msg['error'].get('message')}")
                return msg.get("result", {})

    def close(self) -> None:
        self._ws.close()


class CdpEnv:
    def __init__(self, session: CdpSession, config: EnvConfig | None = None) -> None:
        self.session = session
        self.config = config or EnvConfig()
        w, h = self.config.viewport
        self.session.call("Page.enable")
        self.session.call(
            "Emulation.setDeviceMetricsOverride",
            {"width": w, "height": h, "deviceScaleFactor": 1, "mobile": False},
        )

    def _navigate(self, url: str) -> None:
        self.session.call("Page.navigate", {"url": url})
        self._wait_loaded()

    def _wait_loaded(self) -> None:
        deadline = time.monotonic() + self.config.navigation_timeout_s
        while time.monotonic() < deadline:
            state = self._eval("document.readyState")
            if state == "complete":
                return
            time.sleep(0.1)
        raise NavigationTimeout(f"page did not load within {self.config.navigation_timeout_s}s")

    def _eval(self, expression: str) -> Any:
        result = self.session.call("Runtime.evaluate", {"expression": expression, "returnByValue": True})
        return result.get("result", {}).get("value")

    def _mouse(self, x: int, y: int) -> None:
        for kind in ("mouseMoved", "mousePressed", "mouseReleased"):
            params = {"type": kind, "x": x, "y": y, "button": "left", "clickCount": 1}
            if kind == "mouseMoved":
                params = {"type": kind, "x": x, "y": y}
            self.session.call("Input.dispatchMouseEvent", params)

    def open(self, url: str) -> Observation:
        started = time.monotonic()
        self._navigate(url)
        return self._observe(started)

    def execute(self, action: Action) -> Observation:
        started = time.monotonic()
        if isinstance(action, (Click, Type)):
            p = action.target.resolved
            if p is None:
                raise ValueError(f"{action.kind} action needs resolved coordinates")
            self._mouse(p.x, p.y)
            if isinstance(action, Type):
                self.session.call("Input.insertText", {"text": action.text})
                for kind in ("keyDown", "keyUp"):
                    self.session.call(
                        "Input.dispatchKeyEvent",
                        {"type": kind, "key": "Enter", "code": "Enter", "windowsVirtualKeyCode": 13, "text": "\r"},
                    )
        elif isinstance(action, Scroll):
            dy = self.config.scroll_px if action.direction == "down" else -self.config.scroll_px
            self._eval(f"window.scrollBy(0, {dy})")
        elif isinstance(action, Wait):
            time.sleep(self.config.wait_ms / 1000)
        elif isinstance(action, Refresh):
            self.session.call("Page.reload")
            self._wait_loaded()
        elif isinstance(action, GoTo):
            self._navigate(action.url)
        elif isinstance(action, Back):
            history = self.session.call("Page.getNavigationHistory")
            idx = history.get("currentIndex", 0)
            if idx > 0:
                entry = history["entries"][idx - 1]
                self.session.call("Page.navigateToHistoryEntry", {"entryId": entry["id"]})
                self._wait_loaded()
        elif isinstance(action, Answer):
            pass
        return self._observe(started)

    def screenshot(self) -> bytes:
        result = self.session.call("Page.captureScreenshot", {"format": "png", "fromSurface": True})
        return _fit(base64.b64decode(result["data"]), self.config.viewport)

    def _observe(self, started: float) -> Observation:
        shot = self.screenshot()
        url = self._eval("location.href") or ""
        return Observation(shot, str(url), time.monotonic() - started)

    def close(self) -> None:
        self.session.close()
