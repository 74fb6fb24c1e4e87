"""Versioned single-file checkpoint container.

Layout (all integers little-endian)::

    magic          8 bytes   b"SEMGCKPT"
    format_version uint32
    header_length  uint64
    header         UTF-8 JSON, keys sorted, no insignificant whitespace
    blobs          raw little-endian C-order arrays, back to back

``header["arrays"]`` lists every blob in storage order as
``{"name", "dtype", "shape", "offset", "nbytes"}``; offsets count from the
first blob byte. Everything else in the header is caller metadata.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"SEMGCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(Exception):
    pass


def encode(header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    index, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, order="C")
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    meta = dict(header, arrays=index, format_version=FORMAT_VERSION)
    head = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + b"".join(blobs)


def decode(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(data) < _PREFIX.size:
        raise CheckpointError("file too short for a checkpoint")
    magic, version, head_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start : start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    base = start + head_len
    arrays = {}
    for item in header.pop("arrays"):
        lo = base + item["offset"]
        if lo + item["nbytes"] > len(data):
            raise CheckpointError(f"truncated blob {item['name']}")
        arr = np.frombuffer(data, dtype=np.dtype(item["dtype"]), count=item["nbytes"] // np.dtype(item["dtype"]).itemsize, offset=lo)
        arrays[item["name"]] = arr.reshape(item["shape"]).copy()
    return header, arrays


def save(path, header: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    payload = encode(header, arrays)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return decode(fh.read())
