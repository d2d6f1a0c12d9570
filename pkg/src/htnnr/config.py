"""Flat ``key=value`` config files mapped onto dataclasses.

Blank lines and ``#`` comments are skipped. Values are coerced to the type
of the dataclass field's default; unknown keys are rejected by name.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    path = Path(path)
    return parse_kv(path.read_text(), source=str(path))


def _coerce(value: str, like, key: str):
    if isinstance(like, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config key {key!r}: expected a boolean, got {value!r}")
    try:
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {value!r} as {type(like).__name__}") from None
    return value


def apply_kv(instance, mapping: dict[str, str]):
    """Return a copy of dataclass ``instance`` with ``mapping`` applied."""
    fields = {f.name for f in dataclasses.fields(instance)}
    updates = {}
    for key, value in mapping.items():
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        updates[key] = _coerce(value, getattr(instance, key), key)
    return dataclasses.replace(instance, **updates)


def to_kv(instance) -> dict[str, str]:
    return {f.name: str(getattr(instance, f.name)) for f in dataclasses.fields(instance)}
