"""Line-oriented ``key = value`` files with optional ``[section]`` headers.

Blank lines and ``#`` comments are ignored. Sections may repeat (each
occurrence is a separate block); keys before the first header belong to the
unnamed section ``""``.
"""

from __future__ import annotations

import re

_HEADER = re.compile(r"^\[([A-Za-z0-9_.+-]+)\]$")


class KVSyntaxError(ValueError):
    pass


def parse(text: str) -> list[tuple[str, dict[str, str]]]:
    blocks: list[tuple[str, dict[str, str]]] = [("", {})]
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            blocks.append((m.group(1), {}))
            continue
        if "=" not in line:
            raise KVSyntaxError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise KVSyntaxError(f"line {lineno}: empty key")
        section, entries = blocks[-1]
        if key in entries:
            raise KVSyntaxError(f"line {lineno}: duplicate key {key!r} in section [{section}]")
        entries[key] = value
    if not blocks[0][1]:
        blocks.pop(0)
    return blocks


def dump(blocks: list[tuple[str, dict[str, object]]]) -> str:
    lines = []
    for section, entries in blocks:
        if section:
            if lines:
                lines.append("")
            lines.append(f"[{section}]")
        for key, value in entries.items():
            lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return " ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def to_floats(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.replace(",", " ").split())


def to_ints(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.replace(",", " ").split())
