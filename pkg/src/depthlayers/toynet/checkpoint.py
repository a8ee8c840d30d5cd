"""Binary checkpoint format.

Layout (little-endian)::

    b"DLYR"  uint32 version
    uint32 meta_len, meta_len bytes of UTF-8 JSON
    uint32 n_arrays
    n_arrays x { uint16 name_len, name (UTF-8), uint8 ndim, ndim x uint32 dims,
                 prod(dims) x float64 }

The JSON block holds the architecture, optimizer step and free-form run
metadata; arrays hold parameters and (optionally) Adam moments under
``adam.m.<name>`` / ``adam.v.<name>``.
"""
from __future__ import annotations

import io
import json
import struct
from collections import OrderedDict

import numpy as np

from ..fileio import atomic_write_bytes
from .model import Architecture, ModelParams
from .optim import AdamWState

MAGIC = b"DLYR"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(arrays: dict, meta: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def decode(data: bytes) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("not a DLYR checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(bytes(take(meta_len)).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    arrays = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return arrays, meta


def save_checkpoint(path, params: ModelParams, state: AdamWState | None = None, meta: dict | None = None):
    arrays = OrderedDict(params.arrays())
    meta = dict(meta or {})
    meta["architecture"] = {"widths": list(params.arch.widths), "low_channels": params.arch.low_channels}
    if state is not None:
        meta["optimizer"] = {"step": state.step, "skipped": state.skipped}
        for k in params.names():
            if k in state.m:
                arrays[f"adam.m.{k}"] = state.m[k]
                arrays[f"adam.v.{k}"] = state.v[k]
    atomic_write_bytes(path, encode(arrays, meta))


def load_checkpoint(path) -> tuple[ModelParams, AdamWState | None, dict]:
    with open(path, "rb") as fh:
        arrays, meta = decode(fh.read())
    arch_meta = meta.get("architecture", {})
    arch = Architecture(widths=tuple(arch_meta.get("widths", (16, 32, 64))),
                        low_channels=int(arch_meta.get("low_channels", 8)))
    params = ModelParams.from_arrays(arch, {k: v for k, v in arrays.items() if not k.startswith("adam.")})
    state = None
    if "optimizer" in meta:
        opt = meta["optimizer"]
        state = AdamWState(step=int(opt["step"]), skipped=int(opt.get("skipped", 0)))
        for k in params.names():
            if f"adam.m.{k}" in arrays:
                state.m[k] = arrays[f"adam.m.{k}"]
                state.v[k] = arrays[f"adam.v.{k}"]
    return params, state, meta
