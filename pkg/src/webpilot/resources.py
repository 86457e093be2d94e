"""Access to the prompt templates and JSON schemas shipped with the package."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

TEMPLATE_VERSION = "v1"


@lru_cache(maxsize=None)
def load_template(name: str, version: str = TEMPLATE_VERSION) -> str:
    path = resources.files("webpilot") / "templates" / version / f"{name}.txt"
    return path.read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def _schema_text(schema_id: str) -> str:
    path = resources.files("webpilot") / "schemas" / f"{schema_id}.schema.json"
    return path.read_text(encoding="utf-8")


def load_schema(schema_id: str) -> dict:
    return json.loads(_schema_text(schema_id))


def render_template(template: str, **values: str) -> str:
    """Fill ``{name}`` placeholders; other braces in the template are left alone."""
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", value)
    return out
