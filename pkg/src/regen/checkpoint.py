"""Binary checkpoint container shared by the generator and discriminator.

Layout: magic ``RGNC``, u32 version, u64-length-prefixed JSON metadata,
u64-length-prefixed JSON tensor table of (name, dtype, shape, byte-offset)
entries, then the raw little-endian float32 tensor data. Writes are atomic
(temp file + rename) and loads verify magic, version, and payload size.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import CheckpointFormatError

MAGIC = b"RGNC"
VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray], metadata: dict) -> None:
    table = []
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype != np.float32:
            raise CheckpointFormatError(
                f"checkpoint tensors must be float32, got {arr.dtype} for {name}")
        raw = arr.astype("<f4").tobytes()
        table.append([name, "<f4", list(arr.shape), offset])
        blobs.append(raw)
        offset += len(raw)

    meta_bytes = json.dumps(metadata, sort_keys=True).encode()
    table_bytes = json.dumps(table, sort_keys=True).encode()

    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".rgnc-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            fh.write(struct.pack("<Q", len(meta_bytes)))
            fh.write(meta_bytes)
            fh.write(struct.pack("<Q", len(table_bytes)))
            fh.write(table_bytes)
            for raw in blobs:
                fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
    return buf


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad checkpoint magic {magic!r}")
        version = struct.unpack("<I", _read_exact(fh, 4, "version"))[0]
        if version != VERSION:
            raise CheckpointFormatError(
                f"unsupported checkpoint version {version} (expected {VERSION})")
        meta_len = struct.unpack("<Q", _read_exact(fh, 8, "metadata length"))[0]
        metadata = json.loads(_read_exact(fh, meta_len, "metadata"))
        table_len = struct.unpack("<Q", _read_exact(fh, 8, "table length"))[0]
        table = json.loads(_read_exact(fh, table_len, "tensor table"))
        data = fh.read()

    tensors = {}
    for name, dtype, shape, offset in table:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(data):
            raise CheckpointFormatError(f"truncated checkpoint data for tensor {name}")
        tensors[name] = np.frombuffer(
            data, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
    return tensors, metadata
