"""Plain-text tensor dumps.

::

    tensors 1
    meta <key> <json value>
    tensor <name> <ndim> <dim0> <dim1> ...
    <values, space separated, shortest round-trip repr>

Floats are written with ``repr`` so a save/load round trip is bit exact and
the same tensors always produce the same bytes.
"""
from __future__ import annotations

import json

import numpy as np

HEADER = "tensors 1"


class CheckpointError(ValueError):
    pass


def dumps_tensors(tensors: dict, meta: dict | None = None) -> str:
    lines = [HEADER]
    for key in sorted(meta or {}):
        lines.append(f"meta {key} {json.dumps(meta[key], sort_keys=True)}")
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        lines.append(" ".join(["tensor", name, str(arr.ndim)] + [str(s) for s in arr.shape]))
        lines.append(" ".join(repr(float(x)) for x in arr.ravel()))
    return "\n".join(lines) + "\n"


def loads_tensors(text: str) -> tuple[dict, dict]:
    lines = text.split("\n")
    if not lines or lines[0] != HEADER:
        raise CheckpointError(f"line 1: expected {HEADER!r}")
    tensors, meta = {}, {}
    i = 1
    while i < len(lines) and lines[i]:
        parts = lines[i].split(" ")
        if parts[0] == "meta" and len(parts) >= 3:
            meta[parts[1]] = json.loads(" ".join(parts[2:]))
            i += 1
            continue
        if parts[0] != "tensor" or len(parts) < 3:
            raise CheckpointError(f"line {i + 1}: expected a tensor header")
        try:
            ndim = int(parts[2])
            shape = tuple(int(s) for s in parts[3:3 + ndim])
        except ValueError:
            raise CheckpointError(f"line {i + 1}: bad shape") from None
        if len(shape) != ndim or i + 1 >= len(lines):
            raise CheckpointError(f"line {i + 1}: truncated tensor {parts[1]!r}")
        raw = lines[i + 1].split(" ") if lines[i + 1] else []
        size = int(np.prod(shape, dtype=np.int64))
        if len(raw) != size:
            raise CheckpointError(f"line {i + 2}: expected {size} values, found {len(raw)}")
        try:
            tensors[parts[1]] = np.array([float(x) for x in raw], dtype=np.float64).reshape(shape)
        except ValueError:
            raise CheckpointError(f"line {i + 2}: non-numeric value") from None
        i += 2
    return tensors, meta


def save_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_tensors(tensors, meta))


def load_tensors(path) -> tuple[dict, dict]:
    with open(path, encoding="utf-8") as f:
        return loads_tensors(f.read())
