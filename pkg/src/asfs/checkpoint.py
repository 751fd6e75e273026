"""Versioned plain-text parameter container.

Layout::

    #asfs-checkpoint v1
    {"format_version": 1, "seed": 0, "layers": [...], ...}   <- one JSON line
    @ encoder.0.weight 16 20
    <row-major values, %.17g, space separated>
    @ encoder.0.bias 16
    ...

Floats written with 17 significant digits read back bit-identically.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
MAGIC = "#asfs-checkpoint v1"


class CheckpointError(ValueError):
    pass


def _fmt(values: np.ndarray) -> str:
    return " ".join("%.17g" % v for v in values.ravel())


def dumps(header: dict, arrays: dict) -> str:
    header = {"format_version": FORMAT_VERSION, **header}
    lines = [MAGIC, json.dumps(header, sort_keys=True)]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        lines.append("@ " + " ".join([name, *map(str, arr.shape)]))
        lines.append(_fmt(arr))
    return "\n".join(lines) + "\n"


def loads(text: str):
    lines = text.splitlines()
    if len(lines) < 2 or lines[0] != MAGIC:
        raise CheckpointError("not an asfs checkpoint")
    try:
        header = json.loads(lines[1])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {header.get('format_version')}")
    arrays = {}
    body = lines[2:]
    if len(body) % 2:
        raise CheckpointError("truncated parameter block")
    for tag, data in zip(body[::2], body[1::2]):
        if not tag.startswith("@ "):
            raise CheckpointError(f"bad array tag {tag!r}")
        name, *dims = tag[2:].split()
        try:
            values = np.array([float(v) for v in data.split()], dtype=np.float64)
            shape = tuple(int(s) for s in dims)
        except ValueError:
            raise CheckpointError(f"{name}: non-numeric entry") from None
        if values.size != int(np.prod(shape)):
            raise CheckpointError(f"{name}: expected {np.prod(shape)} values, got {values.size}")
        arrays[name] = values.reshape(shape)
    return header, arrays


def save(path, header: dict, arrays: dict):
    Path(path).write_text(dumps(header, arrays))


def load(path):
    return loads(Path(path).read_text())
