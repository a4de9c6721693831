"""Checkpoint file: a text manifest followed by raw little-endian float32 tensors.

Layout::

    caqr-checkpoint 1
    backend: box
    ...
    tensor: entity 50,32 0 6400
    end
    <bytes>

Tensor lines give name, shape, byte offset (relative to the first byte after
``end``) and byte length, in file order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = "caqr-checkpoint 1"
_LE32 = np.dtype("<f4")


def save_checkpoint(path, params: dict, meta: dict) -> None:
    lines = [MAGIC]
    for key in sorted(meta):
        value = meta[key]
        if not isinstance(value, str):
            value = json.dumps(value, sort_keys=True)
        if "\n" in value:
            raise CheckpointError(f"metadata {key!r} spans lines")
        lines.append(f"{key}: {value}")
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype=_LE32)
        raw = arr.tobytes()
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"tensor: {name} {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    lines.append("end")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns ``(params, meta)``; params are float32 arrays."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    marker = b"\nend\n"
    cut = data.find(marker)
    if not data.startswith(MAGIC.encode() + b"\n") or cut < 0:
        raise CheckpointError(f"{path}: not a checkpoint file")
    header = data[:cut].decode("utf-8").split("\n")[1:]
    body = data[cut + len(marker):]
    meta, params = {}, {}
    expected = 0
    for line in header:
        key, sep, value = line.partition(": ")
        if not sep:
            raise CheckpointError(f"{path}: malformed manifest line {line!r}")
        if key != "tensor":
            meta[key] = _parse_value(value)
            continue
        try:
            name, shape_s, off_s, nbytes_s = value.split(" ")
            shape = tuple(int(s) for s in shape_s.split(",") if s)
            off, nbytes = int(off_s), int(nbytes_s)
        except ValueError:
            raise CheckpointError(f"{path}: malformed tensor line {line!r}") from None
        if off != expected or nbytes != int(np.prod(shape, dtype=np.int64)) * 4 or off + nbytes > len(body):
            raise CheckpointError(f"{path}: tensor {name} has inconsistent extent")
        params[name] = np.frombuffer(body, dtype=_LE32, count=nbytes // 4, offset=off).reshape(shape).astype(np.float32)
        expected = off + nbytes
    if expected != len(body):
        raise CheckpointError(f"{path}: {len(body) - expected} trailing bytes")
    return params, meta


def _parse_value(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value
