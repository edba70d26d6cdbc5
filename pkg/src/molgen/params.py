"""Named parameters with Adam state, plus the binary checkpoint format.

Checkpoints are versioned containers of (name, shape, little-endian float64)
entries covering parameters, non-trainable buffers, and optimizer moments,
preceded by a JSON header that makes the file self-describing.  A write
followed by a read is bit-exact.  Files are written atomically (temp file
plus rename) so interrupted runs never leave truncated checkpoints.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from molgen.errors import MissingGradient
from molgen.tensor import Tensor

_MAGIC = b"MGCKPT01"
_KIND_PARAM, _KIND_BUFFER, _KIND_ADAM_M, _KIND_ADAM_V = 0, 1, 2, 3


class ParamStore:
    """Uniquely named trainable tensors, buffers, and Adam moments."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}
        self.step = 0

    def parameter(self, name: str, init: np.ndarray) -> Tensor:
        if name in self._params or name in self._buffers:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(init, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        self._adam_m[name] = np.zeros_like(t.data)
        self._adam_v[name] = np.zeros_like(t.data)
        return t

    def buffer(self, name: str, init: np.ndarray) -> np.ndarray:
        if name in self._params or name in self._buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        arr = np.array(init, dtype=np.float64)
        self._buffers[name] = arr
        return arr

    def get(self, name: str) -> Tensor:
        return self._params[name]

    def get_buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params or name in self._buffers

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for t in self._params.values():
            if t.grad is not None:
                total += float((t.grad * t.grad).sum())
        return float(np.sqrt(total))

    def clip_gradients(self, max_norm: float) -> float:
        """Scale all gradients so the global norm is at most `max_norm`."""
        norm = self.grad_norm()
        if norm > max_norm:
            scale = max_norm / norm
            for t in self._params.values():
                if t.grad is not None:
                    t.grad = t.grad * scale
        return norm

    def n_values(self) -> int:
        return sum(t.size for t in self._params.values())


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard bias-corrected Adam update over every trainable parameter."""
    for name, t in store.items():
        if t.grad is None:
            raise MissingGradient(f"parameter {name!r} has no gradient")
    store.step += 1
    t_step = store.step
    for name, p in store.items():
        g = p.grad
        m = store._adam_m[name]
        v = store._adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t_step)
        v_hat = v / (1.0 - beta2**t_step)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


# -- checkpoint I/O ------------------------------------------------------------

def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp.{os.getpid()}")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _pack_entry(name: str, kind: int, arr: np.ndarray) -> bytes:
    name_b = name.encode("utf-8")
    head = struct.pack("<HBB", len(name_b), kind, arr.ndim)
    shape = struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + name_b + shape + arr.astype("<f8").tobytes()


def save_checkpoint(path: str | Path, store: ParamStore, header: dict) -> None:
    header = dict(header)
    header["adam_step"] = store.step
    header_b = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [_MAGIC, struct.pack("<I", len(header_b)), header_b]
    entries: list[tuple[str, int, np.ndarray]] = []
    for name, p in store.items():
        entries.append((name, _KIND_PARAM, p.data))
        entries.append((name, _KIND_ADAM_M, store._adam_m[name]))
        entries.append((name, _KIND_ADAM_V, store._adam_v[name]))
    for name, arr in store._buffers.items():
        entries.append((name, _KIND_BUFFER, arr))
    chunks.append(struct.pack("<I", len(entries)))
    chunks.extend(_pack_entry(*e) for e in entries)
    atomic_write_bytes(path, b"".join(chunks))


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    blob = Path(path).read_bytes()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(_MAGIC)
    (header_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    header = json.loads(blob[off : off + header_len].decode("utf-8"))
    off += header_len
    (n_entries,) = struct.unpack_from("<I", blob, off)
    off += 4

    store = ParamStore()
    for _ in range(n_entries):
        name_len, kind, ndim = struct.unpack_from("<HBB", blob, off)
        off += 4
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        shape = struct.unpack_from(f"<{ndim}I", blob, off) if ndim else ()
        off += 4 * ndim
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += count * 8
        if kind == _KIND_PARAM:
            store.parameter(name, arr)
        elif kind == _KIND_BUFFER:
            store.buffer(name, arr)
        elif kind == _KIND_ADAM_M:
            store._adam_m[name] = arr
        elif kind == _KIND_ADAM_V:
            store._adam_v[name] = arr
        else:
            raise ValueError(f"{path}: unknown entry kind {kind}")
    store.step = int(header.get("adam_step", 0))
    return store, header
