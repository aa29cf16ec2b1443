"""Self-describing binary checkpoints.

Layout (little-endian)::

    b"PYRN" | u32 format version | u32 len | utf-8 key=value header
    | u32 record count | records

Each record is ``u32 len | name | u32 len | numpy dtype str | u32 ndim |
u32 dims... | raw data``. Record names are ``param/<name>``, ``adam.m/<name>``,
``adam.v/<name>``, ``bn.mean/<layer>`` and ``bn.var/<layer>``. The header
holds the model configuration followed by ``state.*`` keys.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, PyramNet

MAGIC = b"PYRN"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)


def _write_str(buf, s):
    raw = s.encode("utf-8")
    buf.write(_U32.pack(len(raw)))
    buf.write(raw)


def encode(config, arrays, state=None):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_U32.pack(FORMAT_VERSION))
    header = config.to_text() + "".join(f"state.{k}={v}\n" for k, v in (state or {}).items())
    _write_str(buf, header)
    buf.write(_U32.pack(len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        _write_str(buf, name)
        _write_str(buf, arr.dtype.str)
        buf.write(_U32.pack(arr.ndim))
        for d in arr.shape:
            buf.write(_U32.pack(d))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, blob, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return _U32.unpack(self.take(4))[0]

    def string(self):
        return self.take(self.u32()).decode("utf-8")


def decode(blob, path="<bytes>"):
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a PYRN checkpoint")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = r.string()
    model_lines, state = [], {}
    for line in header.splitlines():
        if line.startswith("state."):
            key, _, value = line[len("state.") :].partition("=")
            state[key] = value
        else:
            model_lines.append(line)
    config = ModelConfig.from_text("\n".join(model_lines))
    arrays = {}
    for _ in range(r.u32()):
        name = r.string()
        dtype = np.dtype(r.string())
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(count * dtype.itemsize), dtype=dtype).reshape(shape).copy()
    if r.pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - r.pos} trailing bytes")
    return Checkpoint(config, state, arrays)


def model_arrays(model, adam=None):
    arrays = {}
    for name, p in model.parameters().items():
        arrays[f"param/{name}"] = p.data
    if adam is not None:
        for name in model.parameters():
            if name in adam.m:
                arrays[f"adam.m/{name}"] = adam.m[name]
                arrays[f"adam.v/{name}"] = adam.v[name]
    for name, st in model.bn_states().items():
        arrays[f"bn.mean/{name}"] = st.running_mean
        arrays[f"bn.var/{name}"] = st.running_var
    return arrays


def save(path, model, adam=None, state=None):
    """Write atomically: a partially written file never replaces a good one."""
    path = Path(path)
    state = dict(state or {})
    state.setdefault("dtype", model.dtype.str)
    if adam is not None:
        state.update(adam_t=adam.t, lr=adam.lr, beta1=adam.beta1, beta2=adam.beta2, epsilon=adam.epsilon)
    blob = encode(model.config, model_arrays(model, adam), state)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    return path


def load(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode(path.read_bytes(), str(path))


def restore(model, ckpt, adam=None):
    """Copy checkpoint arrays into ``model`` (and ``adam``), checking names and shapes."""
    arrays = ckpt.arrays
    for name, p in model.parameters().items():
        key = f"param/{name}"
        if key not in arrays:
            raise CheckpointError(f"parameter {name!r} missing from checkpoint")
        if arrays[key].shape != p.shape:
            raise CheckpointError(
                f"parameter {name!r}: checkpoint shape {arrays[key].shape} != model shape {p.shape}"
            )
        p.data = arrays[key].astype(model.dtype)
    for name, st in model.bn_states().items():
        for attr, key in (("running_mean", f"bn.mean/{name}"), ("running_var", f"bn.var/{name}")):
            if key not in arrays or arrays[key].shape != getattr(st, attr).shape:
                raise CheckpointError(f"batch-norm statistics {key!r} missing or mis-shaped")
            setattr(st, attr, arrays[key].astype(model.dtype))
    extra = [k for k in arrays if k.startswith("param/") and k[6:] not in model.parameters()]
    if extra:
        raise CheckpointError(f"checkpoint parameter {extra[0][6:]!r} has no counterpart in the model")
    if adam is not None:
        adam.t = int(ckpt.state.get("adam_t", 0))
        for name in model.parameters():
            if f"adam.m/{name}" in arrays:
                adam.m[name] = arrays[f"adam.m/{name}"].astype(model.dtype)
                adam.v[name] = arrays[f"adam.v/{name}"].astype(model.dtype)
    return model


def load_model(path, dtype=None):
    """Build a model from the configuration stored in a checkpoint and fill its weights."""
    ckpt = load(path)
    dtype = np.dtype(dtype or ckpt.state.get("dtype", "<f4"))
    model = PyramNet(ckpt.config, dtype=dtype)
    restore(model, ckpt)
    return model, ckpt
