"""Tape-based reverse-mode differentiation over numpy arrays.

Only the handful of operations the level GAN needs are provided.  Every op
records a closure on the active :class:`Tape`; :func:`backward` replays the
tape in reverse and accumulates gradients into ``Tensor.grad``.

Parameters and activations default to float32.  Reductions (sums, means,
batch statistics) accumulate in float64.  Gradient checks build the same
graph in float64 by passing float64 data.
"""

from __future__ import annotations

import json
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9


class ShapeMismatch(ValueError):
    pass


class NotScalar(ValueError):
    pass


class NoTape(RuntimeError):
    pass


class UninitializedStats(RuntimeError):
    pass


class NonFiniteValue(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Backward


@dataclass
class Tape:
    """Ordered log of differentiable operations."""

    records: list[_Record] = field(default_factory=list)
    consumed: bool = False

    def __len__(self):
        return len(self.records)


_TAPES: list[Tape] = []


@contextmanager
def tape() -> Iterator[Tape]:
    t = Tape()
    _TAPES.append(t)
    try:
        yield t
    finally:
        _TAPES.remove(t)


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _check_finite(arr: np.ndarray, op: str) -> None:
    # NaN/Inf always poison the sum; a non-finite sum of finite values (overflow) is rechecked exactly
    if not np.isfinite(np.add.reduce(arr, axis=None)) and not np.isfinite(arr).all():
        raise NonFiniteValue(f"{op} produced NaN or Inf")


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward: Backward, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    t = active_tape()
    if t is not None and any(x.requires_grad for x in inputs):
        out.requires_grad = True
        out._tape = t
        t.records.append(_Record(out, inputs, backward))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

    Gradients add onto whatever is already stored, so a parameter used twice
    (or across two losses) receives the sum.
    """
    if loss.data.size != 1:
        raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
    t = loss._tape
    if t is None:
        raise NoTape("loss was not produced under an active tape")
    if t.consumed:
        raise NoTape("tape has already been replayed")
    seed = np.ones_like(loss.data)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for rec in reversed(t.records):
        g_out = rec.out.grad
        if g_out is None:
            continue
        grads = rec.backward(g_out)
        for x, g in zip(rec.inputs, grads):
            if g is None or not x.requires_grad:
                continue
            # gradient arrays are never mutated in place, so aliasing is harmless
            g = np.asarray(g, dtype=x.data.dtype).reshape(x.shape)
            x.grad = g if x.grad is None else x.grad + g
    t.consumed = True
    t.records.clear()


def _sum64(arr: np.ndarray, axis, dtype) -> np.ndarray:
    return arr.sum(axis=axis, dtype=np.float64).astype(dtype)


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 3-D inputs are treated as stacks with a shared batch axis."""
    if a.data.ndim not in (2, 3) or a.data.ndim != b.data.ndim:
        raise ShapeMismatch(f"matmul expects two 2-D or two 3-D tensors, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul shapes {a.shape} and {b.shape} do not align")

    def bw(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x [N, in] -> x @ w.T + b with w [out, in]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeMismatch(f"linear: bias {b.shape} does not match weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def bw(g):
        gb = _sum64(g, 0, b.dtype) if b is not None else None
        return g @ w.data, g.T @ x.data, gb

    inputs = (x, w) if b is None else (x, w, b)
    return _make(out, inputs, bw, "linear")


def conv1x1(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-position channel map: out[n,o,r,c] = sum_i w[o,i] x[n,i,r,c] + bias[o].

    Accepts a single sample [C, H, W] or a batch [N, C, H, W].
    """
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or w.data.ndim != 2 or w.shape[1] != xd.shape[1]:
        raise ShapeMismatch(f"conv1x1: input {x.shape} incompatible with weight {w.shape}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeMismatch(f"conv1x1: bias {bias.shape} does not match weight {w.shape}")
    n, ci, h, wd = xd.shape
    co = w.shape[0]
    flat = xd.reshape(n, ci, h * wd)
    out = w.data @ flat
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, co, h, wd)

    def bw(g):
        g3 = g.reshape(n, co, h * wd)
        gx = (w.data.T @ g3).reshape(n, ci, h, wd)
        gw = (g3 @ flat.transpose(0, 2, 1)).sum(axis=0)
        gb = _sum64(g3, (0, 2), bias.dtype) if bias is not None else None
        return (gx[0] if single else gx), gw, gb

    inputs = (x, w) if bias is None else (x, w, bias)
    return _make(out[0] if single else out, inputs, bw, "conv1x1")


# -- normalization ------------------------------------------------------------


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    initialized: bool = False
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPSILON

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: RunningStats, mode: str = "train") -> Tensor:
    """Per-channel normalization of an [N, C, H, W] batch.

    Train mode normalizes with batch statistics and folds them into ``state``
    (the first train step seeds the running values directly).  Eval mode uses
    the running statistics.
    """
    if x.data.ndim != 4:
        raise ShapeMismatch(f"batchnorm expects [N, C, H, W], got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeMismatch(f"batchnorm: gamma/beta must have shape ({C},)")
    dtype = x.dtype
    axes = (0, 2, 3)

    def col(v):
        return np.asarray(v, dtype=dtype)[None, :, None, None]

    if mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.data.mean(axis=axes, dtype=np.float64)
        centered = x.data - col(mean)
        var = np.mean(centered * centered, axis=axes, dtype=np.float64)
        invstd = 1.0 / np.sqrt(var + state.eps)
        xhat = centered * col(invstd)
        unbiased = var * m / (m - 1) if m > 1 else var
        if state.initialized:
            state.mean = (state.momentum * state.mean + (1 - state.momentum) * mean).astype(state.mean.dtype)
            state.var = (state.momentum * state.var + (1 - state.momentum) * unbiased).astype(state.var.dtype)
        else:
            state.mean = mean.astype(state.mean.dtype)
            state.var = unbiased.astype(state.var.dtype)
            state.initialized = True

        def bw(g):
            gbeta = g.sum(axis=axes, dtype=np.float64)
            ggamma = np.sum(g * xhat, axis=axes, dtype=np.float64)
            k = gamma.data.astype(np.float64) * invstd / m
            # dL/dx = gamma*invstd/m * (m*g - sum(g) - xhat*sum(g*xhat))
            gx = col(k) * (m * g - col(gbeta) - xhat * col(ggamma))
            return gx, ggamma.astype(gamma.dtype), gbeta.astype(beta.dtype)

    elif mode == "eval":
        if not state.initialized:
            raise UninitializedStats("batchnorm evaluated before any training step")
        invstd = 1.0 / np.sqrt(state.var.astype(np.float64) + state.eps)
        xhat = (x.data - col(state.mean)) * col(invstd)

        def bw(g):
            gx = g * col(gamma.data.astype(np.float64) * invstd)
            return gx, np.sum(g * xhat, axis=axes, dtype=np.float64).astype(gamma.dtype), g.sum(axis=axes, dtype=np.float64).astype(beta.dtype)

    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")

    out = col(gamma.data) * xhat + col(beta.data)
    return _make(out, (x, gamma, beta), bw, "batchnorm")


# -- elementwise and structural -------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bw, "softmax")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis (each row sums to one)."""
    return softmax(x, axis=-1)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis (axis -3: [.., C, H, W])."""
    if a.data.ndim != b.data.ndim or a.data.ndim < 3:
        raise ShapeMismatch(f"concat_channels: incompatible ranks {a.shape}, {b.shape}")
    if a.shape[:-3] != b.shape[:-3] or a.shape[-2:] != b.shape[-2:]:
        raise ShapeMismatch(f"concat_channels: shapes {a.shape} and {b.shape} differ off the channel axis")
    ca = a.shape[-3]

    def bw(g):
        return g[..., :ca, :, :], g[..., ca:, :, :]

    return _make(np.concatenate([a.data, b.data], axis=-3), (a, b), bw, "concat_channels")


def scale_add(a: Tensor, b: Tensor, alpha) -> Tensor:
    """a + alpha * b, where alpha is a float or a single-element Tensor."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"scale_add: shapes {a.shape} and {b.shape} differ")
    if isinstance(alpha, Tensor):
        if alpha.data.size != 1:
            raise ShapeMismatch("scale_add: alpha must be a scalar")
        k = alpha.data.reshape(())

        def bw(g):
            ga = np.sum(g * b.data, dtype=np.float64).astype(alpha.dtype).reshape(alpha.shape)
            return g, g * k, ga

        return _make(a.data + k * b.data, (a, b, alpha), bw, "scale_add")

    k = float(alpha)
    return _make(a.data + np.asarray(k, dtype=a.dtype) * b.data, (a, b), lambda g: (g, g * k), "scale_add")


def add(a: Tensor, b: Tensor) -> Tensor:
    return scale_add(a, b, 1.0)


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    """scale * x + shift for constant scalars."""
    s = np.asarray(scale, dtype=x.dtype)
    return _make(s * x.data + np.asarray(shift, dtype=x.dtype), (x,), lambda g: (g * s,), "affine")


def add_batch_broadcast(x: Tensor, p: Tensor) -> Tensor:
    """x [N, *S] + p [*S], p shared across the batch."""
    if x.shape[1:] != p.shape:
        raise ShapeMismatch(f"add_batch_broadcast: {x.shape} vs {p.shape}")

    def bw(g):
        return g, _sum64(g, 0, p.dtype)

    return _make(x.data + p.data[None], (x, p), bw, "add_batch_broadcast")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_spatial(e: Tensor, height: int, width: int) -> Tensor:
    """[N, C] -> [N, C, H, W] by repeating each vector over all positions."""
    if e.data.ndim != 2:
        raise ShapeMismatch(f"broadcast_spatial expects [N, C], got {e.shape}")
    out = np.broadcast_to(e.data[:, :, None, None], e.shape + (height, width)).copy()
    return _make(out, (e,), lambda g: (_sum64(g, (2, 3), e.dtype),), "broadcast_spatial")


def global_avg_pool(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, C]."""
    if x.data.ndim != 4:
        raise ShapeMismatch(f"global_avg_pool expects [N, C, H, W], got {x.shape}")
    hw = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3), dtype=np.float64).astype(x.dtype)

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None] / hw, x.shape).astype(x.dtype),)

    return _make(out, (x,), bw, "global_avg_pool")


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype)
    return _make(out, (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),), "sum")


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(dtype=np.float64), dtype=x.dtype)
    return _make(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),), "mean")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: shapes {a.shape} and {b.shape} differ")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = b"CESAGAN\x00"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float32 arrays with a JSON header.

    Layout: 8-byte magic, uint32 version, uint32 header length, UTF-8 JSON
    header ({"meta": ..., "entries": [{"name", "shape"}...]}), then each
    array's little-endian float32 bytes in header order.
    """
    entries = []
    blobs = []
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps({"meta": meta or {}, "entries": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_arrays(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + hlen])
    offset = 16 + hlen
    arrays = {}
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float32)
        offset += 4 * n
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return header["meta"], arrays
