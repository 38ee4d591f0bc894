"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic   8 bytes  b"THMCKPT\\0"
    version u32
    config  32 bytes sha256 of the canonical config JSON
    count   u32      number of tensor records
    records name_len u32, name bytes (utf-8), rank u8, dims u32*rank,
            dtype u8, payload
    crc32   u32      over everything before it

dtype tags: 0 float32, 1 float64, 2 int64, 3 uint8.  Optimizer moments are
stored as ``adam.m/<name>`` and ``adam.v/<name>``, the step as ``adam.step``
and free-form metadata JSON as the uint8 record ``__meta__``.
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .optim import ParamStore

MAGIC = b"THMCKPT\0"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}


class CheckpointError(RuntimeError):
    pass


def config_hash(config: dict) -> bytes:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()


def _tag(arr: np.ndarray) -> int:
    for tag, dt in _DTYPES.items():
        if arr.dtype.kind == dt.kind and arr.dtype.itemsize == dt.itemsize:
            return tag
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def _record(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    tag = _tag(arr)
    raw = name.encode("utf-8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    head += struct.pack("<B", tag)
    return head + arr.astype(_DTYPES[tag], copy=False).tobytes()


def save_checkpoint(store: ParamStore, path, config: dict | None = None, meta: dict | None = None) -> None:
    config = config or {}
    records = []
    for name, t in store.params.items():
        records.append(_record(name, t.data))
    for name in store.params:
        records.append(_record(f"adam.m/{name}", store.m[name]))
        records.append(_record(f"adam.v/{name}", store.v[name]))
    records.append(_record("adam.step", np.array([store.step], dtype=np.int64)))
    meta_blob = json.dumps({"config": config, **(meta or {})}, sort_keys=True).encode()
    records.append(_record("__meta__", np.frombuffer(meta_blob, dtype=np.uint8)))
    body = MAGIC + struct.pack("<I", VERSION) + config_hash(config) + struct.pack("<I", len(records))
    body += b"".join(records)
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    Path(path).write_bytes(body)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], bytes, dict]:
    """Return ``(arrays, config_hash, meta)`` after integrity checks."""
    buf = Path(path).read_bytes()
    if len(buf) < len(MAGIC) + 44:
        raise CheckpointError("checkpoint truncated")
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint integrity check failed (truncated or corrupt)")
    r = _Reader(buf[:-4])
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {VERSION})")
    digest = r.take(32)
    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        (tag,) = r.unpack("<B")
        if tag not in _DTYPES:
            raise CheckpointError(f"unknown dtype tag {tag} for {name!r}")
        dt = _DTYPES[tag]
        size = int(np.prod(dims)) if dims else 1
        arrays[name] = np.frombuffer(r.take(size * dt.itemsize), dtype=dt).reshape(dims).copy()
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes in checkpoint")
    meta = json.loads(arrays.pop("__meta__").tobytes().decode()) if "__meta__" in arrays else {}
    return arrays, digest, meta


def load_checkpoint(path, config: dict | None = None, dtype=None) -> tuple[ParamStore, dict]:
    """Load a :class:`ParamStore`.

    If ``config`` is given its hash must match the stored one.  ``dtype``
    casts the loaded values (float32 files widen exactly into float64).
    """
    arrays, digest, meta = read_checkpoint(path)
    if config is not None and config_hash(config) != digest:
        raise CheckpointError(
            f"config hash mismatch: checkpoint was written for config {meta.get('config')!r}"
        )
    names = [k for k in arrays if not k.startswith("adam.")]
    file_dtype = arrays[names[0]].dtype if names else np.dtype(np.float32)
    store = ParamStore(dtype or file_dtype.newbyteorder("="))
    for name in names:
        store.add(name, arrays[name])
        store.m[name] = arrays[f"adam.m/{name}"].astype(store.dtype)
        store.v[name] = arrays[f"adam.v/{name}"].astype(store.dtype)
    store.step = int(arrays["adam.step"][0]) if "adam.step" in arrays else 0
    return store, meta
