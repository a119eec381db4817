"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"DRNNCKPT"            8-byte magic
    u32 version
    u32 header length      followed by that many bytes of UTF-8 JSON
    float64 arrays         concatenated, in the order listed in header["arrays"]

The header JSON is written with sorted keys and no whitespace so identical
content always produces identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DRNNCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


class CheckpointError(ValueError):
    pass


def encode(header, arrays):
    """Serialize ``header`` (a JSON-able dict) plus named arrays to bytes."""
    header = dict(header)
    header["arrays"] = [{"name": name, "shape": list(np.shape(a))} for name, a in arrays]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION, len(blob)), blob]
    for _, a in arrays:
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def decode(data):
    """Inverse of :func:`encode`; returns ``(header, {name: array})``."""
    if len(data) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint")
    magic, version, n = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    offset = start + n
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"truncated array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(data):
        raise CheckpointError("trailing bytes after last array")
    return header, arrays


def write(path, header, arrays):
    Path(path).write_bytes(encode(header, arrays))


def read(path):
    return decode(Path(path).read_bytes())
