"""Binary tensor container and checkpoint I/O.

File layout: magic b"DGVA", little-endian u32 version, then for each tensor
u32 name length, utf-8 name, u32 rank, u64 dims, and the payload as
little-endian float64. Writes are atomic (temp file + rename) and the
save -> load -> save round trip is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"DGVA"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_tensors(path, tensors: dict) -> None:
    """Atomically write named float64 tensors; insertion order is preserved."""
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<I", VERSION)
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        payload += struct.pack("<I", len(nb))
        payload += nb
        payload += struct.pack("<I", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        payload += arr.tobytes()
    atomic_write_bytes(path, bytes(payload))


def read_tensors(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 8
    out = {}
    while off < len(data):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", data, off) if rank else ()
        off += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(dims)
        off += 8 * count
        out[name] = arr.copy()
    return out


def atomic_write_bytes(path, payload: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def config_hash(config_dict: dict) -> float:
    """Stable 48-bit hash of a JSON-serializable config, stored as a float."""
    blob = json.dumps(config_dict, sort_keys=True).encode("utf-8")
    digest = hashlib.sha256(blob).digest()
    return float(int.from_bytes(digest[:6], "little"))
