"""Flat ``key = value`` text files used for schemas and run configs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping


class KeyValueError(ValueError):
    pass


def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    """Parse ``key = value`` lines. ``#`` starts a comment; blank lines are skipped.

    Duplicate keys are an error so that silent overrides cannot happen.
    """
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise KeyValueError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise KeyValueError(f"{source}:{lineno}: empty key")
        if key in out:
            raise KeyValueError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path: str | Path) -> dict[str, str]:
    path = Path(path)
    return parse_kv(path.read_text(encoding="utf-8"), source=str(path))


def format_kv(items: Mapping[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def write_kv(path: str | Path, items: Mapping[str, object]) -> None:
    Path(path).write_text(format_kv(items), encoding="utf-8")


def split_list(value: str, sep: str = ",") -> list[str]:
    return [v.strip() for v in value.split(sep) if v.strip()]
