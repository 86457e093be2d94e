from __future__ import annotations

import base64
import io
import json
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest
from PIL import Image, ImageChops

from webpilot.core import Answer, Back, Click, ElementQuery, GoTo, Point, Refresh, Scroll, Type, Wait
from webpilot.env import EnvConfig, EnvError, NavigationTimeout, WorldValidationError, load_world
from webpilot.env.cdp import CdpEnv
from webpilot.env.webdriver import ENTER, WebDriverEnv
from webpilot.images import content_id, image_size

from helpers import png, sim, two_page_world


def click(x: int, y: int) -> Click:
    return Click(ElementQuery("target", Point(x, y)))


def type_at(x: int, y: int, text: str) -> Type:
    return Type(ElementQuery("box", Point(x, y)), text)


class TestSimActions:
    def test_click_navigates(self):
        env = sim()
        assert env.execute(click(200, 150)).url == "sim://p2"

    def test_scroll_offset(self):
        env = sim()  # p1 is 2400 tall
        env.execute(Scroll("down"))
        assert env.view.scroll == 900
        env.execute(Scroll("down"))
        assert env.view.scroll == 1200  # clamped at height - viewport
        env.execute(Scroll("up"))
        assert env.view.scroll == 300

    def test_click_on_nothing(self):
        env = sim()
        before = (env.url, dict(env.state), env.screenshot())
        obs = env.execute(click(5, 1100))
        assert (obs.url, dict(env.state), obs.screenshot) == before

    def test_type_and_submit(self):
        env = sim()
        obs = env.execute(type_at(500, 130, "laptop"))
        assert obs.url == "sim://p3" and env.state["q"] == "laptop"

    def test_click_accounts_for_scroll(self):
        world = two_page_world()
        world["pages"][0]["elements"].append(
            {"bbox": [100, 1500, 300, 1600], "label": "Deep", "effect": {"navigate": "p3"}}
        )
        env = load_world(world)
        assert env.execute(Scroll("down")).url == "sim://p1"
        assert env.execute(click(200, 1550 - 900)).url == "sim://p3"

    def test_back_goto_refresh(self):
        env = sim()
        env.execute(click(200, 150))
        assert env.execute(Back()).url == "sim://p1"
        assert env.execute(Back()).url == "sim://p1"  # empty history is a no-op
        assert env.execute(GoTo("sim://p3")).url == "sim://p3"
        env.execute(GoTo("https://elsewhere.example"))
        assert env.page is None
        env.execute(Back())
        env.execute(Refresh())
        assert env.url == "sim://p3" and env.view.scroll == 0

    def test_wait_latency_virtual(self):
        env = load_world(two_page_world(), EnvConfig(wait_ms=2000))
        obs = env.execute(Wait())
        assert obs.step_latency == 2.0

    def test_answer_is_noop(self):
        env = sim()
        assert env.execute(Answer("x")).url == "sim://p1"

    def test_unresolved_click(self):
        with pytest.raises(ValueError):
            sim().execute(Click(ElementQuery("x")))

    def test_timeout_page(self):
        world = two_page_world()
        world["pages"][1]["loads"] = False
        env = load_world(world)
        with pytest.raises(NavigationTimeout):
            env.execute(click(200, 150))
        assert env.screenshot()  # still alive

    def test_crash_page(self):
        world = two_page_world()
        world["pages"][1]["crash"] = True
        env = load_world(world)
        with pytest.raises(EnvError):
            env.execute(click(200, 150))
        with pytest.raises(EnvError):
            env.screenshot()

    def test_reset(self):
        env = sim()
        env.execute(click(900, 150))
        env.execute(click(200, 150))
        env.reset()
        assert env.url == "sim://p1" and env.state == {}


class TestSimRender:
    def test_deterministic(self):
        assert sim().screenshot() == sim().screenshot()

    def test_viewport_size(self):
        assert image_size(sim().screenshot()) == (1200, 1200)
        small = load_world({"start": "a", "pages": [{"id": "a"}]}, EnvConfig(viewport=(800, 600)))
        assert image_size(small.screenshot()) == (800, 600)

    def test_set_state_changes_only_its_region(self):
        env = sim()
        before = Image.open(io.BytesIO(env.screenshot())).convert("RGB")
        env.execute(click(900, 150))
        assert env.state == {"flag": "on"}
        after = Image.open(io.BytesIO(env.screenshot())).convert("RGB")
        box = ImageChops.difference(before, after).getbbox()
        assert box is not None
        x1, y1, x2, y2 = box
        assert 100 <= x1 and x2 <= 601 and 600 <= y1 and y2 <= 651

    def test_unknown_url_renders(self):
        env = sim()
        env.open("https://nowhere.example")
        assert env.page is None and image_size(env.screenshot()) == (1200, 1200)

    def test_same_hashes_across_threads(self):
        script = [click(900, 150), Scroll("down"), Scroll("up"), click(200, 150), Back(), type_at(500, 130, "x")]

        def run(_):
            env = sim()
            return [content_id(env.execute(a).screenshot) for a in script]

        serial = [run(i) for i in range(3)]
        with ThreadPoolExecutor(4) as pool:
            parallel = list(pool.map(run, range(6)))
        assert all(h == serial[0] for h in serial + parallel)


class TestWorldValidation:
    def test_loads_at_start(self):
        env = sim()
        assert env.page.id == "p1"

    def test_missing_page_named(self):
        world = two_page_world()
        world["pages"][0]["elements"][0]["effect"] = {"kind": "navigate", "page": "p9"}
        with pytest.raises(WorldValidationError, match="p9"):
            load_world(world)

    def test_empty_page(self):
        env = load_world({"start": "a", "pages": [{"id": "a"}]})
        for x, y in [(0, 0), (600, 600), (1199, 1199)]:
            assert env.execute(click(x, y)).url == "sim://a"

    def test_bad_start(self):
        with pytest.raises(WorldValidationError):
            load_world({"start": "zz", "pages": [{"id": "a"}]})

    def test_element_outside_page(self):
        with pytest.raises(WorldValidationError):
            load_world({"start": "a", "pages": [{"id": "a", "elements": [{"bbox": [0, 0, 1300, 10], "label": "x"}]}]})

    def test_from_file(self, tmp_path):
        path = tmp_path / "w.json"
        path.write_text(json.dumps(two_page_world()))
        assert load_world(path).world.name == "w"


class FakeWebDriver:
    """Just enough of the W3C protocol to drive WebDriverEnv."""

    def __init__(self, screenshot: bytes, url: str = "about:blank") -> None:
        self.shot = screenshot
        self.url = url
        self.log: list[tuple[str, str, dict | None]] = []
        self.history: list[str] = []
        self.fail_url: str | None = None

    def __call__(self, req: httpx.Request) -> httpx.Response:
        path = req.url.path
        body = json.loads(req.content) if req.content else None
        self.log.append((req.method, path, body))
        ok = lambda v=None: httpx.Response(200, json={"value": v})  # noqa: E731
        if path == "/session" and req.method == "POST":
            return ok({"sessionId": "abc", "capabilities": {}})
        tail = path.removeprefix("/session/abc")
        if tail == "/url" and req.method == "POST":
            if body["url"] == self.fail_url:
                return httpx.Response(500, json={"value": {"error": "timeout", "message": "page load"}})
            self.history.append(self.url)
            self.url = body["url"]
            return ok()
        if tail == "/url":
            return ok(self.url)
        if tail == "/back":
            self.url = self.history.pop() if self.history else self.url
            return ok()
        if tail == "/screenshot":
            return ok(base64.b64encode(self.shot).decode())
        if tail == "/execute/sync":
            if "innerWidth" in body["script"]:
                return ok([1200, 1100])
            return ok()
        return ok()


def webdriver(fake: FakeWebDriver) -> WebDriverEnv:
    return WebDriverEnv("http://wd.local", EnvConfig(wait_ms=1), client=httpx.Client(transport=httpx.MockTransport(fake)))


class TestWebDriver:
    def test_open_creates_session_and_fits_viewport(self):
        fake = FakeWebDriver(png(1200, 1200))
        env = webdriver(fake)
        obs = env.open("https://example.com")
        assert obs.url == "https://example.com"
        rects = [b for m, p, b in fake.log if p.endswith("/window/rect")]
        assert rects == [{"width": 1200, "height": 1200}, {"width": 1200, "height": 1300}]

    def test_click_and_type(self):
        fake = FakeWebDriver(png(1200, 1200))
        env = webdriver(fake)
        env.open("https://example.com")
        env.execute(type_at(10, 20, "hi"))
        acts = [b for m, p, b in fake.log if p.endswith("/actions") and m == "POST"]
        move = acts[0]["actions"][0]["actions"][0]
        assert (move["x"], move["y"], move["origin"]) == (10, 20, "viewport")
        keys = [a["value"] for a in acts[1]["actions"][0]["actions"] if a["type"] == "keyDown"]
        assert keys == ["h", "i", ENTER]

    def test_scroll_and_back(self):
        fake = FakeWebDriver(png(1200, 1200))
        env = webdriver(fake)
        env.open("https://a.example")
        env.execute(GoTo("https://b.example"))
        env.execute(Scroll("down"))
        scripts = [b for m, p, b in fake.log if p.endswith("/execute/sync") and "scrollBy" in b["script"]]
        assert scripts[0]["args"] == [900]
        assert env.execute(Back()).url == "https://a.example"
        env.execute(Wait())
        env.execute(Refresh())

    def test_capture_fitted_to_viewport(self):
        env = webdriver(FakeWebDriver(png(1185, 1300)))
        assert image_size(env.open("https://a.example").screenshot) == (1200, 1200)

    def test_timeout_maps_to_navigation_timeout(self):
        fake = FakeWebDriver(png(1200, 1200))
        fake.fail_url = "https://slow.example"
        env = webdriver(fake)
        env.open("https://a.example")
        with pytest.raises(NavigationTimeout):
            env.execute(GoTo("https://slow.example"))

    def test_unreachable(self):
        def down(req):
            raise httpx.ConnectError("refused", request=req)

        env = WebDriverEnv("http://wd.local", client=httpx.Client(transport=httpx.MockTransport(down)))
        with pytest.raises(EnvError):
            env.open("https://a.example")

    def test_close_deletes_session(self):
        fake = FakeWebDriver(png(1200, 1200))
        env = webdriver(fake)
        env.open("https://a.example")
        env.close()
        assert fake.log[-1][:2] == ("DELETE", "/session/abc")
        with pytest.raises(EnvError):
            env.screenshot()


class FakeCdp:
    def __init__(self, shot: bytes) -> None:
        self.shot = shot
        self.calls: list[tuple[str, dict]] = []
        self.url = "about:blank"
        self.entries = [{"id": 1, "url": "about:blank"}]
        self.index = 0
        self.ready = "complete"

    def call(self, method, params=None, timeout=None):
        params = params or {}
        self.calls.append((method, params))
        if method == "Page.navigate":
            self.entries = self.entries[: self.index + 1] + [{"id": len(self.entries) + 1, "url": params["url"]}]
            self.index = len(self.entries) - 1
            self.url = params["url"]
        elif method == "Page.getNavigationHistory":
            return {"currentIndex": self.index, "entries": self.entries}
        elif method == "Page.navigateToHistoryEntry":
            self.index = next(i for i, e in enumerate(self.entries) if e["id"] == params["entryId"])
            self.url = self.entries[self.index]["url"]
        elif method == "Runtime.evaluate":
            expr = params["expression"]
            value = self.ready if expr == "document.readyState" else self.url if expr == "location.href" else None
            return {"result": {"value": value}}
        elif method == "Page.captureScreenshot":
            return {"data": base64.b64encode(self.shot).decode()}
        return {}

    def close(self):
        self.calls.append(("close", {}))


class TestCdp:
    def test_setup_and_navigation(self):
        fake = FakeCdp(png(1200, 1200))
        env = CdpEnv(fake, EnvConfig(wait_ms=1))
        assert ("Emulation.setDeviceMetricsOverride",
                {"width": 1200, "height": 1200, "deviceScaleFactor": 1, "mobile": False}) in fake.calls
        assert env.open("https://a.example").url == "https://a.example"
        env.execute(GoTo("https://b.example"))
        assert env.execute(Back()).url == "https://a.example"

    def test_click_type(self):
        fake = FakeCdp(png(1200, 1200))
        env = CdpEnv(fake, EnvConfig(wait_ms=1))
        env.open("https://a.example")
        env.execute(type_at(7, 9, "laptop"))
        mouse = [p for m, p in fake.calls if m == "Input.dispatchMouseEvent"]
        assert [p["type"] for p in mouse] == ["mouseMoved", "mousePressed", "mouseReleased"]
        assert all((p["x"], p["y"]) == (7, 9) for p in mouse)
        assert ("Input.insertText", {"text": "laptop"}) in fake.calls
        assert [p["key"] for m, p in fake.calls if m == "Input.dispatchKeyEvent"] == ["Enter", "Enter"]

    def test_scroll_wait_refresh(self):
        fake = FakeCdp(png(1300, 1000))
        env = CdpEnv(fake, EnvConfig(wait_ms=1))
        env.open("https://a.example")
        env.execute(Scroll("up"))
        assert any(m == "Runtime.evaluate" and p["expression"] == "window.scrollBy(0, -900)" for m, p in fake.calls)
        env.execute(Wait())
        obs = env.execute(Refresh())
        assert image_size(obs.screenshot) == (1200, 1200)
        env.close()
        assert fake.calls[-1][0] == "close"

    def test_load_timeout(self):
        fake = FakeCdp(png(1200, 1200))
        fake.ready = "loading"
        env = CdpEnv(fake, EnvConfig(navigation_timeout_s=0.2))
        with pytest.raises(NavigationTimeout):
            env.open("https://a.example")
