"""Versioned parameter checkpoint container.

Layout::

    b"MALMTLCK"            8-byte magic
    u32  version           little-endian
    u64  header length     little-endian
    header                 UTF-8 JSON: {"meta": ..., "params": [{"name", "shape"}, ...]}
    payload                each parameter's values as little-endian float64, in header order

The header is written with sorted keys and no whitespace, so identical
inputs always produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MALMTLCK"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def dumps(params: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    header = {
        "meta": meta or {},
        "params": [{"name": name, "shape": list(np.shape(arr))} for name, arr in params.items()],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in params.values())
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + body


def loads(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(meta, params)``."""
    if len(data) < _PREFIX.size:
        raise CheckpointError("checkpoint truncated")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    if start + hlen > len(data):
        raise CheckpointError("checkpoint header truncated")
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    pos = start + hlen
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * count > len(data):
            raise CheckpointError(f"payload truncated at {entry['name']}")
        params[entry["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    if pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return header["meta"], params


def save(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(params, meta))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
