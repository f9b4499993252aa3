"""Small dense-matrix reverse-mode differentiation with an Adam optimiser.

Every value is a 2-D float64 array. Operations executed while a :class:`Tape`
is active are recorded in creation order, which is already topological, so the
backward pass is a single reverse sweep.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class NonFiniteError(FloatingPointError):
    """A forward value or gradient contained NaN or infinity."""


_active: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a 1x1 tensor")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, name={self.name})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Records differentiable operations; use as a context manager."""

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Tensor] = []
        self.check_finite = check_finite

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def backward(self, loss: Tensor) -> None:
        if loss.shape != (1, 1):
            raise ShapeError("backward needs a scalar (1x1) loss")
        loss.grad = np.ones((1, 1))
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if self.check_finite and not np.all(np.isfinite(g)):
                    raise NonFiniteError(f"non-finite gradient flowing into {parent.name or 'tensor'}")
                parent.grad = g if parent.grad is None else parent.grad + g


def _record(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.parents = parents
    out.requires_grad = any(p.requires_grad for p in parents)
    out.backward_fn = backward_fn if out.requires_grad else None
    tape = _active[-1] if _active else None
    if tape is not None:
        if tape.check_finite and not np.all(np.isfinite(data)):
            raise NonFiniteError("operation produced a non-finite value")
        if out.requires_grad:
            tape.nodes.append(out)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- primitives -----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _record(ad @ bd, (a, b), back)


def spmm(s: sp.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times tensor (neighbour aggregation, pooling)."""
    if s.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm {s.shape} @ {x.shape}")
    st = s.T.tocsr()

    def back(g):
        return (np.asarray(st @ g),)

    return _record(np.asarray(s @ x.data), (x,), back)


def segment_sum(x: Tensor, segments: np.ndarray, count: int) -> Tensor:
    """Sum rows of ``x`` into ``count`` groups given each row's group id."""
    segments = np.asarray(segments)
    if segments.shape != (x.shape[0],):
        raise ShapeError("one segment id per row required")
    pool = sp.csr_matrix(
        (np.ones(len(segments)), (segments, np.arange(len(segments)))), shape=(count, x.shape[0])
    )
    return spmm(pool, x)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a (1, cols) row broadcast over rows of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:

        def back(g):
            return g, g

        return _record(a.data + b.data, (a, b), back)
    if b.shape == (1, a.shape[1]):

        def back_row(g):
            return g, g.sum(axis=0, keepdims=True)

        return _record(a.data + b.data, (a, b), back_row)
    raise ShapeError(f"add {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub {a.shape} - {b.shape}")

    def back(g):
        return g, -g

    return _record(a.data - b.data, (a, b), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return _record(np.where(mask, x.data, 0.0), (x,), back)


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope)

    def back(g):
        return (g * factor,)

    return _record(x.data * factor, (x,), back)


def hinge(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise ``max(0, a - b)``; subgradient 0 where ``a == b``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"hinge {a.shape} vs {b.shape}")
    diff = a.data - b.data
    mask = diff > 0

    def back(g):
        gm = g * mask
        return gm, -gm

    return _record(np.where(mask, diff, 0.0), (a, b), back)


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)

    def back(g):
        return (g * sign,)

    return _record(np.abs(x.data), (x,), back)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along columns."""
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeError("concat needs equal row counts")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return [g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts))]

    return _record(np.concatenate([p.data for p in parts], axis=1), tuple(parts), back)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def back(g):
        return (g * c,)

    return _record(x.data * c, (x,), back)


def scalar_mul(x: Tensor, w: Tensor) -> Tensor:
    """Multiply ``x`` by a learnable 1x1 tensor ``w``."""
    if w.shape != (1, 1):
        raise ShapeError("scalar_mul needs a 1x1 weight")
    wv = w.data[0, 0]
    xd = x.data

    def back(g):
        return g * wv, np.array([[np.sum(g * xd)]])

    return _record(xd * wv, (x, w), back)


def add_scalar(x: Tensor, c: float) -> Tensor:
    def back(g):
        return (g,)

    return _record(x.data + float(c), (x,), back)


def mul_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Elementwise product with a constant array of the same shape."""
    c = np.asarray(c, dtype=np.float64).reshape(x.shape)

    def back(g):
        return (g * c,)

    return _record(x.data * c, (x,), back)


def row_sq_norm(x: Tensor) -> Tensor:
    """Squared L2 norm of each row, shape (rows, 1)."""
    xd = x.data

    def back(g):
        return (2.0 * xd * g,)

    return _record(np.sum(xd * xd, axis=1, keepdims=True), (x,), back)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape

    def back(g):
        return (np.full(shape, g[0, 0]),)

    return _record(np.array([[x.data.sum()]]), (x,), back)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


# -- optimisation ---------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]
) -> dict[str, np.ndarray]:
    """Bias-corrected Adam update; returns new parameter arrays.

    The whole step is rejected (state untouched) if any gradient is non-finite.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    out = dict(params)
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = params[name] - state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return out


# -- checkpoints ----------------------------------------------------------------

MAGIC = b"MFCKPT"
VERSION = 1


def save_tensors(path: str | os.PathLike, tensors: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    """Write named 2-D float64 tensors plus a JSON sidecar (``<path>.json``)."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], dtype="<f8")
            if arr.ndim != 2:
                raise ShapeError(f"checkpoint tensor {name!r} is not 2-D")
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<II", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())
    sidecar = Path(str(path) + ".json")
    sidecar.write_text(json.dumps(meta or {}, indent=2, sort_keys=True) + "\n")


def load_tensors(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode()
            rows, cols = struct.unpack("<II", f.read(8))
            data = np.frombuffer(f.read(8 * rows * cols), dtype="<f8").reshape(rows, cols)
            out[name] = data.astype(np.float64)
    sidecar = Path(str(path) + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return out, meta
