"""Content-addressed screenshot storage."""

from __future__ import annotations

import hashlib
import io
import threading
from pathlib import Path

from PIL import Image


def content_id(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def image_size(data: bytes) -> tuple[int, int]:
    with Image.open(io.BytesIO(data)) as im:
        return im.size


def downscale(data: bytes, max_edge: int) -> tuple[bytes, float]:
    """Shrink an image so its longest edge is at most ``max_edge``.

    Returns the (possibly unchanged) PNG bytes and the factor that maps
    coordinates in the returned image back to the original.
    """
    with Image.open(io.BytesIO(data)) as im:
        w, h = im.size
        edge = max(w, h)
        if edge <= max_edge:
            return data, 1.0
        factor = edge / max_edge
        small = im.convert("RGB").resize((round(w / factor), round(h / factor)), Image.BILINEAR)
        buf = io.BytesIO()
        small.save(buf, format="PNG")
        return buf.getvalue(), factor


class ImageStore:
    """Maps content ids to image bytes; optionally mirrored to ``root``."""

    def __init__(self, root: str | Path | None = None) -> None:
        self._images: dict[str, bytes] = {}
        self._lock = threading.Lock()
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def add(self, data: bytes) -> str:
        cid = content_id(data)
        with self._lock:
            if cid not in self._images:
                self._images[cid] = data
                if self.root is not None:
                    path = self.path_for(cid)
                    if not path.exists():
                        path.write_bytes(data)
        return cid

    def path_for(self, cid: str) -> Path:
        assert self.root is not None
        return self.root / (cid.split(":", 1)[-1] + ".png")

    def get(self, cid: str) -> bytes:
        with self._lock:
            if cid in self._images:
                return self._images[cid]
        if self.root is not None:
            path = self.path_for(cid)
            if path.exists():
                data = path.read_bytes()
                with self._lock:
                    self._images[cid] = data
                return data
        raise KeyError(cid)

    def __contains__(self, cid: object) -> bool:
        if not isinstance(cid, str):
            return False
        with self._lock:
            if cid in self._images:
                return True
        return self.root is not None and self.path_for(cid).exists()

    def __len__(self) -> int:
        with self._lock:
            return len(self._images)
