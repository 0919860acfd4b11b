"""Flat dotted key=value config text: parsing, typing, canonical dumping.

Values are typed by syntax: ``true``/``false`` are booleans, bare integers
are ints, anything numeric-looking else is a float, the rest are strings.
Dumps are sorted and fully explicit so saved snapshots carry no hidden
defaults.
"""
from __future__ import annotations

import re
from pathlib import Path

from .errors import ValidationError

__all__ = ["parse_config_text", "load_config_file", "dump_config"]

_INT_RE = re.compile(r"^[+-]?\d+$")


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.lower() == "true":
        return True
    if raw.lower() == "false":
        return False
    if _INT_RE.match(raw):
        return int(raw)
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_config_text(text: str) -> dict:
    """Parse config text into a {dotted.key: typed value} dict."""
    out: dict = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValidationError(f"config line {line_no}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ValidationError(f"config line {line_no}: empty key")
        if key in out:
            raise ValidationError(f"config line {line_no}: duplicate key {key!r}")
        out[key] = _parse_value(raw)
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(flat: dict) -> str:
    """Canonical text form: sorted keys, one ``key=value`` per line."""
    lines = [f"{key}={_format_value(flat[key])}" for key in sorted(flat)]
    return "\n".join(lines) + "\n"
