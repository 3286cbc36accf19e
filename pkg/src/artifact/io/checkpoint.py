"""SPOT checkpoint container.

Layout (all integers little-endian)::

    b"SPOT" | version u16 | fingerprint 32 bytes | step u64 | n_tensors u32
    n_tensors x ( name_len u16 | name utf-8 | dtype u8 | ndim u8 | dims u32[ndim] | raw data )
    meta_len u32 | meta (canonical JSON, utf-8)

The meta block carries the serialized run config, RNG state, optimizer step
counters and loss curves. Serialization is canonical, so load -> save
reproduces the original bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

import numpy as np

MAGIC = b"SPOT"
VERSION = 1

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1"), 4: np.dtype("<i8")}
_TAGS = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def fingerprint(config_text: str) -> bytes:
    return hashlib.sha256(config_text.encode("utf-8")).digest()


@dataclass
class CheckpointBundle:
    tensors: Dict[str, np.ndarray]
    config_text: str
    step: int = 0
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def fingerprint(self) -> bytes:
        return fingerprint(self.config_text)

    def subset(self, prefix: str) -> Dict[str, np.ndarray]:
        n = len(prefix)
        return {k[n:]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def to_bytes(self) -> bytes:
        out = bytearray()
        out += MAGIC
        out += struct.pack("<H", VERSION)
        out += self.fingerprint
        out += struct.pack("<QI", self.step, len(self.tensors))
        for name, arr in self.tensors.items():
            arr = np.asarray(arr)
            tag = _TAGS.get(arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype)
            if tag is None:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
            raw_name = name.encode("utf-8")
            out += struct.pack("<H", len(raw_name)) + raw_name
            out += struct.pack("<BB", tag, arr.ndim)
            out += struct.pack(f"<{arr.ndim}I", *arr.shape)
            out += np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        meta = dict(self.meta)
        meta["config"] = self.config_text
        blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
        out += struct.pack("<I", len(blob)) + blob
        return bytes(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "CheckpointBundle":
        view = memoryview(buf)
        pos = 0

        def take(n: int, what: str):
            nonlocal pos
            if pos + n > len(view):
                raise CheckpointError(f"truncated checkpoint while reading {what} at byte offset {pos}")
            chunk = view[pos : pos + n]
            pos += n
            return chunk

        if bytes(take(4, "magic")) != MAGIC:
            raise CheckpointError("bad magic at byte offset 0: not a SPOT checkpoint")
        (version,) = struct.unpack("<H", take(2, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} at byte offset 4")
        fp = bytes(take(32, "fingerprint"))
        step, count = struct.unpack("<QI", take(12, "header"))
        tensors: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", take(2, "name length"))
            name = bytes(take(nlen, "name")).decode("utf-8")
            tag, ndim = struct.unpack("<BB", take(2, "dtype"))
            if tag not in _DTYPES:
                raise CheckpointError(f"unknown dtype tag {tag} for {name!r} at byte offset {pos - 2}")
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
            dt = _DTYPES[tag]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            arr = np.frombuffer(take(nbytes, f"tensor {name!r}"), dtype=dt).reshape(shape)
            tensors[name] = arr.astype(dt.newbyteorder("="), copy=True)
        (mlen,) = struct.unpack("<I", take(4, "meta length"))
        meta = json.loads(bytes(take(mlen, "meta")).decode("utf-8"))
        if pos != len(view):
            raise CheckpointError(f"{len(view) - pos} trailing bytes after meta block at byte offset {pos}")
        config_text = meta.pop("config")
        bundle = cls(tensors=tensors, config_text=config_text, step=step, meta=meta)
        if bundle.fingerprint != fp:
            raise CheckpointError("stored fingerprint does not match the embedded config")
        return bundle


def save_checkpoint(bundle: CheckpointBundle, path) -> None:
    Path(path).write_bytes(bundle.to_bytes())


def load_checkpoint(path, expected_config: str | None = None, allow_mismatch: bool = False) -> CheckpointBundle:
    bundle = CheckpointBundle.from_bytes(Path(path).read_bytes())
    if expected_config is not None and not allow_mismatch and bundle.fingerprint != fingerprint(expected_config):
        raise CheckpointError(f"{path}: config fingerprint mismatch (pass allow_mismatch to override)")
    return bundle
