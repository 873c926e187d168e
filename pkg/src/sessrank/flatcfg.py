"""Flat ``key = value`` text configuration files.

Blank lines and lines starting with ``#`` are ignored. Keys are unique;
values are kept as strings and coerced by the consumer.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

from .errors import ConfigError


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_flat(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_flat(text, str(path))


def format_flat(values: Mapping[str, object]) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in values.items())


def format_value(v: object) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def to_bool(key: str, text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def to_int(key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def to_float(key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None


def coerce_like(key: str, text: str, default: object) -> object:
    """Coerce ``text`` to the type of ``default``."""
    if isinstance(default, bool):
        return to_bool(key, text)
    if isinstance(default, int):
        return to_int(key, text)
    if isinstance(default, float):
        return to_float(key, text)
    return text
