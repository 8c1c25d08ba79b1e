"""Binary ``GGAN`` checkpoint container.

Layout (little-endian throughout)::

    b"GGAN" | u32 format_version | str component | str mode | u32 epoch
    u32 n_params   { str name | u32 ndim | u32 dim * ndim | f64 * prod(dims) }
    u32 n_optim    { str name | u64 t | f64 lr, beta1, beta2, eps | array m | array v }
    str rng_state (JSON, may be empty)
    str metadata (JSON)

where ``str`` is ``u32 byte length`` followed by UTF-8 bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import AdamState

MAGIC = b"GGAN"
FORMAT_VERSION = 1
COMPONENTS = ("generator", "discriminator", "codec", "classifier")


class CheckpointError(ValueError):
    pass


@dataclass
class ModelCheckpoint:
    component: str
    mode: str
    params: dict[str, np.ndarray]
    optimizer: dict[str, AdamState] = field(default_factory=dict)
    rng_state: dict | None = None
    epoch: int = 0
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise CheckpointError(f"unknown component tag {self.component!r}")


def _w_str(buf, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack("<I", len(b)))
    buf.write(b)


def _w_array(buf, a: np.ndarray) -> None:
    a = np.asarray(a, dtype="<f8")
    buf.write(struct.pack("<I", a.ndim))
    buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.write(np.ascontiguousarray(a).tobytes())


def to_bytes(ckpt: ModelCheckpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.format_version))
    _w_str(buf, ckpt.component)
    _w_str(buf, ckpt.mode)
    buf.write(struct.pack("<I", ckpt.epoch))
    buf.write(struct.pack("<I", len(ckpt.params)))
    for name, arr in ckpt.params.items():
        _w_str(buf, name)
        _w_array(buf, arr)
    buf.write(struct.pack("<I", len(ckpt.optimizer)))
    for name, st in ckpt.optimizer.items():
        _w_str(buf, name)
        buf.write(struct.pack("<Q4d", st.t, st.lr, st.beta1, st.beta2, st.epsilon))
        _w_array(buf, st.m)
        _w_array(buf, st.v)
    _w_str(buf, json.dumps(ckpt.rng_state, sort_keys=True) if ckpt.rng_state else "")
    _w_str(buf, json.dumps(ckpt.metadata, sort_keys=True))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def array(self) -> np.ndarray:
        (ndim,) = self.unpack("<I")
        shape = self.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def from_bytes(data: bytes) -> ModelCheckpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a GGAN checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    component = r.string()
    mode = r.string()
    (epoch,) = r.unpack("<I")
    (n_params,) = r.unpack("<I")
    params = {}
    for _ in range(n_params):
        name = r.string()
        params[name] = r.array()
    (n_opt,) = r.unpack("<I")
    optimizer = {}
    for _ in range(n_opt):
        name = r.string()
        t, lr, b1, b2, eps = r.unpack("<Q4d")
        m = r.array()
        v = r.array()
        optimizer[name] = AdamState(m, v, t, b1, b2, eps, lr)
    rng_text = r.string()
    metadata = json.loads(r.string())
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint")
    return ModelCheckpoint(
        component, mode, params, optimizer, json.loads(rng_text) if rng_text else None,
        epoch, metadata, version,
    )


def save(ckpt: ModelCheckpoint, path) -> str:
    """Write ``ckpt`` and return the SHA-256 of the file contents."""
    data = to_bytes(ckpt)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path, component: str | None = None) -> ModelCheckpoint:
    ckpt = from_bytes(Path(path).read_bytes())
    if component is not None and ckpt.component != component:
        raise CheckpointError(f"{path}: expected a {component} checkpoint, got {ckpt.component}")
    return ckpt


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bit_gen = getattr(np.random, state["bit_generator"])()
    bit_gen.state = state
    return np.random.Generator(bit_gen)
