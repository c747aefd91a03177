"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"UWNR"  u16 version
    u32 len, fingerprint (ascii)
    u32 len, config (utf-8 JSON)
    u32 len, metadata (utf-8 JSON)
    u32 record count, then per record:
        u16 len, name (utf-8)   u8 dtype code   u8 rank   rank x u32 dims
        payload, row-major little-endian

dtype code 1 is float32 (the default for exported models); code 2 is
float64, used by training snapshots so that resuming is bit-exact.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError
from .network import Model, NetworkConfig, param_layout
from .numerics import Tensor

MAGIC = b"UWNR"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
DTYPE_CODES = {"float32": 1, "float64": 2}


@dataclass
class Checkpoint:
    fingerprint: str
    config: dict
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def _write_blob(buf, data: bytes) -> None:
    buf.write(struct.pack("<I", len(data)))
    buf.write(data)


def encode(ckpt: Checkpoint, dtype: str = "float32") -> bytes:
    if dtype not in DTYPE_CODES:
        raise CheckpointError(f"unsupported checkpoint dtype {dtype!r}")
    code = DTYPE_CODES[dtype]
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    _write_blob(buf, ckpt.fingerprint.encode("ascii"))
    _write_blob(buf, json.dumps(ckpt.config, sort_keys=True).encode())
    _write_blob(buf, json.dumps(ckpt.meta, sort_keys=True).encode())
    buf.write(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.source}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)


def decode(data: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(data, source)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{source}: not a UWNR checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    try:
        fingerprint = r.blob().decode("ascii")
        config = json.loads(r.blob())
        meta = json.loads(r.blob())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt header ({exc})") from None
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode()
        code, rank = r.unpack("<BB")
        if code not in DTYPES:
            raise CheckpointError(f"{source}: unknown dtype code {code} for {name}")
        dims = r.unpack(f"<{rank}I")
        nbytes = int(np.prod(dims, dtype=np.int64)) * DTYPES[code].itemsize
        arr = np.frombuffer(r.take(nbytes), dtype=DTYPES[code]).reshape(dims)
        if name in tensors:
            raise CheckpointError(f"{source}: duplicate record {name}")
        tensors[name] = arr.astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError(f"{source}: trailing bytes after last record")
    return Checkpoint(fingerprint, config, tensors, meta)


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, ckpt: Checkpoint, dtype: str = "float32") -> None:
    atomic_write(path, encode(ckpt, dtype))


def load(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from None
    return decode(data, str(path))


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- model-level helpers ----------------------------------------------------------

def model_checkpoint(model: Model, moments: Mapping[str, np.ndarray] | None = None,
                     meta: dict | None = None) -> Checkpoint:
    tensors = {name: p.data for name, p in model.params.items()}
    for name, arr in (moments or {}).items():
        tensors[name] = arr
    config = {"kind": "mhb_unet", **asdict(model.config)}
    return Checkpoint(model.config.fingerprint(), config, tensors, dict(meta or {}))


def save_model(path, model, moments=None, meta=None, dtype: str = "float32") -> None:
    save(path, model_checkpoint(model, moments, meta), dtype)


def load_model(path, expected=None):
    """Load a network checkpoint; returns ``(model, moments, meta)``.

    ``expected`` is an optional NetworkConfig whose fingerprint must match.
    """
    ckpt = load(path)
    if ckpt.config.get("kind") != "mhb_unet":
        raise CheckpointError(f"{path}: not a network checkpoint (kind={ckpt.config.get('kind')})")
    cfg = NetworkConfig.from_dict(ckpt.config)
    if cfg.fingerprint() != ckpt.fingerprint:
        raise CheckpointError(f"{path}: stored fingerprint does not match its config")
    if expected is not None and expected.fingerprint() != ckpt.fingerprint:
        raise CheckpointError(
            f"{path}: fingerprint mismatch (file {ckpt.fingerprint}, expected {expected.fingerprint()})")
    params = {}
    for name, shape, _ in param_layout(cfg):
        if name not in ckpt.tensors:
            raise CheckpointError(f"{path}: missing parameter {name}")
        arr = ckpt.tensors.pop(name)
        if arr.shape != shape:
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {shape}")
        params[name] = Tensor(arr, name=name)
    moments = {k: v for k, v in ckpt.tensors.items() if k.startswith("adam.")}
    extra = set(ckpt.tensors) - set(moments)
    if extra:
        raise CheckpointError(f"{path}: unexpected records {sorted(extra)[:3]}")
    return Model(cfg, params), moments, ckpt.meta
