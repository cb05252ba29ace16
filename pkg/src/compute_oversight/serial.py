"""Canonical line-delimited text encoding shared by every artifact file.

Objects are written as JSON with insertion-ordered keys, no whitespace, and
floats rendered in scientific notation using the shortest digit string that
round-trips (``0.5`` -> ``5e-1``).  Integers are written verbatim so that
operation counts above 2**53 survive exactly.
"""

from __future__ import annotations

import json
import math
from decimal import Decimal
from pathlib import Path
from typing import Any, Iterable, Iterator

FORMAT_VERSION = 1


def format_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {x!r} cannot be serialized")
    if x == 0.0:
        return "-0e0" if math.copysign(1.0, x) < 0 else "0e0"
    # repr() is the shortest round-tripping form; Decimal re-expresses the
    # same digits with an explicit exponent.
    return format(Decimal(repr(float(x))).normalize(), "e")


def _encode(obj: Any, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(int(obj)))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(str(k), ensure_ascii=False))
            out.append(":")
            _encode(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _encode(v, out)
        out.append("]")
    elif hasattr(obj, "item"):  # numpy scalar
        _encode(obj.item(), out)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any) -> str:
    """Encode one object as a single canonical line (no trailing newline)."""
    out: list[str] = []
    _encode(obj, out)
    return "".join(out)


def loads(line: str) -> Any:
    return json.loads(line)


def write_lines(path: str | Path, objects: Iterable[Any]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obj in objects:
            fh.write(dumps(obj))
            fh.write("\n")


def read_lines(path: str | Path) -> Iterator[Any]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
