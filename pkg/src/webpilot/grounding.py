"""Click-accuracy evaluation over screenspot-format datasets.

A dataset directory holds ``images/`` and ``index.jsonl`` with one record per
example::

    {"image": "images/abc.png", "instruction": "...", "bbox": [x1, y1, x2, y2], "tag": "calendar"}

A prediction counts as a hit when the point lies inside the box, edges
included.
"""

from __future__ import annotations

import io
import json
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from .core import Point
from .gateway import ModelClient, UsageLedger
from .images import content_id, image_size
from .localizer import Located, LocalizerConfig, hit_test, locate

log = logging.getLogger(__name__)

INDEX_NAME = "index.jsonl"

Locator = Callable[[bytes, str], "Point | Located"]


@dataclass(frozen=True)
class GroundingExample:
    image_path: str
    instruction: str
    bbox: tuple[int, int, int, int]
    source_tag: str = "default"

    def __post_init__(self) -> None:
        x1, y1, x2, y2 = self.bbox
        if x1 > x2 or y1 > y2:
            raise ValueError(f"bbox {self.bbox} is not ordered (x1<=x2, y1<=y2)")


@dataclass
class GroundingReport:
    hits: list[bool]
    tags: list[str]
    predictions: list[Point | None] = field(default_factory=list)
    errors: list[str | None] = field(default_factory=list)
    out_of_bounds: int = 0

    @property
    def total(self) -> int:
        return len(self.hits)

    @property
    def accuracy(self) -> float:
        return sum(self.hits) / self.total if self.hits else 0.0

    def accuracy_by_tag(self) -> dict[str, float]:
        n: dict[str, int] = defaultdict(int)
        k: dict[str, int] = defaultdict(int)
        for hit, tag in zip(self.hits, self.tags):
            n[tag] += 1
            k[tag] += hit
        return {tag: k[tag] / n[tag] for tag in sorted(n)}

    def to_dict(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "hits": sum(self.hits),
            "accuracy": self.accuracy,
            "accuracy_by_tag": self.accuracy_by_tag(),
            "out_of_bounds": self.out_of_bounds,
            "examples": [
                {
                    "tag": tag,
                    "hit": hit,
                    "prediction": [p.x, p.y] if p is not None else None,
                    "error": err,
                }
                for tag, hit, p, err in zip(self.tags, self.hits, self.predictions, self.errors)
            ],
        }


def render_table(reports: dict[str, GroundingReport]) -> str:
    """Aligned text table: one row per model, one column per tag plus Avg (%)."""
    tags = sorted({t for r in reports.values() for t in r.tags})
    header = ["Model", *tags, "Avg"]
    rows = []
    for name, report in reports.items():
        by_tag = report.accuracy_by_tag()
        cells = [f"{100 * by_tag[t]:.2f}" if t in by_tag else "--" for t in tags]
        # Avg is the mean over tag columns, like a per-benchmark average.
        avg = sum(by_tag.values()) / len(by_tag) if by_tag else 0.0
        rows.append([name, *cells, f"{100 * avg:.2f}"])
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(r, widths)))  # noqa: E731
    lines = [fmt(header), "  ".join("-" * w for w in widths), *(fmt(r) for r in rows)]
    return "\n".join(lines)


def load_dataset(root: str | Path) -> list[GroundingExample]:
    root = Path(root)
    index = root / INDEX_NAME
    examples = []
    with index.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                bbox = tuple(int(v) for v in rec["bbox"])
                if len(bbox) != 4:
                    raise ValueError("bbox needs 4 values")
                examples.append(
                    GroundingExample(
                        image_path=rec["image"],
                        instruction=rec["instruction"],
                        bbox=bbox,  # type: ignore[arg-type]
                        source_tag=rec.get("tag", "default"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{index}:{lineno}: bad record: {exc}") from None
    return examples


def _read_all(examples: list[GroundingExample], root: Path | None) -> list[bytes]:
    out = []
    for ex in examples:
        path = Path(ex.image_path)
        if root is not None and not path.is_absolute():
            path = root / path
        data = path.read_bytes()
        w, h = image_size(data)
        x1, y1, x2, y2 = ex.bbox
        if x1 < 0 or y1 < 0 or x2 > w or y2 > h:
            raise ValueError(f"bbox {ex.bbox} outside {w}x{h} image {ex.image_path}")
        out.append(data)
    return out


def evaluate_grounding(
    dataset: list[GroundingExample],
    locator: Locator,
    root: str | Path | None = None,
    parallel: int = 1,
) -> GroundingReport:
    """Run ``locator`` once per example and score hits.

    Every image is read before the first locator call, so unreadable data
    fails fast. A locator exception counts as a miss.
    """
    blobs = _read_all(dataset, Path(root) if root is not None else None)

    def one(i: int) -> tuple[Point | None, bool, str | None]:
        try:
            out = locator(blobs[i], dataset[i].instruction)
        except Exception as exc:  # noqa: BLE001 - any failure is a miss
            return None, False, f"{type(exc).__name__}: {exc}"
        if isinstance(out, Located):
            return out.point, out.out_of_bounds, None
        return out, False, None

    with ThreadPoolExecutor(max_workers=max(1, parallel)) as pool:
        results = list(pool.map(one, range(len(dataset))))
    hits = [p is not None and hit_test(p, ex.bbox) for (p, _, _), ex in zip(results, dataset)]
    return GroundingReport(
        hits=hits,
        tags=[ex.source_tag for ex in dataset],
        predictions=[p for p, _, _ in results],
        errors=[e for _, _, e in results],
        out_of_bounds=sum(oob for _, oob, _ in results),
    )


def model_locator(client: ModelClient, config: LocalizerConfig | None = None, ledger: UsageLedger | None = None) -> Locator:
    def run(image: bytes, instruction: str) -> Located:
        return locate(image, instruction, client, config, ledger)

    return run


def convert_records(records: Iterable[dict[str, Any]], out_dir: str | Path) -> int:
    """Write released grounding rows into the dataset layout above.

    Each row needs ``image`` (bytes, a path, a PIL image or a dict with a
    ``bytes`` entry), ``instruction`` and ``bbox``; the tag comes from ``tag``
    or ``bucket``. Boxes with every value <= 1 are read as fractions of the
    image size.
    """
    from PIL import Image

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    n = 0
    with (out / INDEX_NAME).open("w", encoding="utf-8") as index:
        for row in records:
            img = row["image"]
            if isinstance(img, dict):
                img = img.get("bytes") or Path(img["path"]).read_bytes()
            elif isinstance(img, (str, Path)):
                img = Path(img).read_bytes()
            elif isinstance(img, Image.Image):
                buf = io.BytesIO()
                img.save(buf, format="PNG")
                img = buf.getvalue()
            w, h = image_size(img)
            bbox = [float(v) for v in row["bbox"]]
            if all(v <= 1.0 for v in bbox):
                bbox = [bbox[0] * w, bbox[1] * h, bbox[2] * w, bbox[3] * h]
            name = f"images/{content_id(img).split(':', 1)[1][:16]}.png"
            (out / name).write_bytes(img)
            rec = {
                "image": name,
                "instruction": row["instruction"],
                "bbox": [round(v) for v in bbox],
                "tag": row.get("tag") or row.get("bucket") or "default",
            }
            index.write(json.dumps(rec) + "\n")
            n += 1
    return n
