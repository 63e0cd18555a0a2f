"""Minimal reverse-mode differentiation over float64 numpy arrays.

Operations record themselves on the active :class:`Tape` whenever one of
their inputs requires a gradient.  ``backward(loss, tape)`` replays the tape
in reverse and accumulates into ``Tensor.grad``::

    with Tape() as tape:
        loss = mse(linear(x, W, b), y)
    backward(loss, tape)
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp


class DiffError(ValueError):
    pass


class DimensionError(DiffError):
    pass


class BatchTooSmallError(DiffError):
    pass


class EmptySequenceError(DiffError):
    pass


class RankError(DiffError):
    pass


class NonFiniteError(DiffError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise RankError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered log of differentiable ops.  Confined to the creating thread."""

    _local = threading.local()

    def __init__(self):
        self.records: list[_Record] = []
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        self._prev = getattr(Tape._local, "active", None)
        Tape._local.active = self
        return self

    def __exit__(self, *exc) -> None:
        Tape._local.active = self._prev

    def __len__(self) -> int:
        return len(self.records)

    @staticmethod
    def active() -> "Tape | None":
        return getattr(Tape._local, "active", None)


class ParamSet:
    """Named parameters, iterated in sorted-name order."""

    def __init__(self, params: dict[str, Tensor] | None = None, frozen: bool = False):
        self._params: dict[str, Tensor] = {}
        self.frozen = False
        for k, v in (params or {}).items():
            self[k] = v
        if frozen:
            self.freeze()

    def __setitem__(self, name: str, t: Tensor) -> None:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        if self.frozen:
            t.requires_grad, t.grad = False, None
        self._params[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for k in sorted(self._params):
            yield k, self._params[k]

    def names(self) -> list[str]:
        return sorted(self._params)

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.items()]

    def freeze(self) -> None:
        self.frozen = True
        for t in self._params.values():
            t.requires_grad, t.grad = False, None

    def unfreeze(self) -> None:
        self.frozen = False
        for t in self._params.values():
            t.requires_grad = True
            t.grad = np.zeros_like(t.data)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op}: non-finite values in output")


def _emit(op: str, out: np.ndarray, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    _check_finite(out, op)
    tape = Tape.active()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    y = Tensor(out, name=op)
    if needs:
        y.requires_grad = True
        y.grad = None
        tape.records.append(_Record(inputs, y, bwd))
    return y


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/dt into ``t.grad`` for every reachable ``t`` that requires it."""
    if loss.data.size != 1:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise DiffError("loss is not on the tape (no input requires grad)")
    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owners: dict[int, Tensor] = {id(loss): loss}
    for rec in reversed(tape.records):
        g = adj.get(id(rec.output))
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            k = id(t)
            owners[k] = t
            adj[k] = adj[k] + gi if k in adj else gi
    for k, t in owners.items():
        t.grad = adj[k].copy() if t.grad is None else t.grad + adj[k]


# ---------------------------------------------------------------- ops


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0]:
        raise DimensionError(f"linear: x{x.shape} incompatible with W{W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise DimensionError(f"linear: bias{b.shape} incompatible with W{W.shape}")
    xd, Wd = x.data, W.data
    out = xd @ Wd
    if b is not None:
        out = out + b.data

    def bwd(g):
        return (g @ Wd.T, xd.T @ g, g.sum(axis=0)) if b is not None else (g @ Wd.T, xd.T @ g)

    return _emit("linear", out, (x, W, b) if b is not None else (x, W), bwd)


def matmul(x: Tensor, W: Tensor) -> Tensor:
    return linear(x, W)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: {a.shape} vs {b.shape}")
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub: {a.shape} vs {b.shape}")
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit("sum", np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.data.ndim != 2 for p in parts):
        raise DimensionError(f"concat_cols: {[p.shape for p in parts]}")
    cuts = np.cumsum([p.shape[1] for p in parts])[:-1]
    out = np.concatenate([p.data for p in parts], axis=1)
    return _emit("concat", out, tuple(parts), lambda g: tuple(np.split(g, cuts, axis=1)))


def gather_rows(W: Tensor, idx: np.ndarray) -> Tensor:
    """``W[idx]``: one-hot(idx) @ W without materializing the one-hot."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= W.shape[0]):
        raise DimensionError(f"gather_rows: index out of range for {W.shape}")
    shape = W.shape

    def bwd(g):
        gw = np.zeros(shape)
        np.add.at(gw, idx, g)
        return (gw,)

    return _emit("gather", W.data[idx], (W,), bwd)


def spmm(A: sp.spmatrix, x: Tensor) -> Tensor:
    """Sparse constant matrix times dense tensor."""
    if A.shape[1] != x.shape[0]:
        raise DimensionError(f"spmm: A{A.shape} incompatible with x{x.shape}")
    At = A.T.tocsr()
    return _emit("spmm", np.asarray(A @ x.data), (x,), lambda g: (np.asarray(At @ g),))


def _segment_bounds(offsets: Sequence[int], n: int) -> list[tuple[int, int]]:
    bounds = list(zip(offsets[:-1], offsets[1:]))
    if offsets[0] != 0 or offsets[-1] != n:
        raise DimensionError(f"segments {offsets[0]}..{offsets[-1]} do not cover {n} rows")
    for a, b in bounds:
        if b <= a:
            raise EmptySequenceError("pooling over an empty segment")
    return bounds


def segment_mean(x: Tensor, offsets: Sequence[int]) -> Tensor:
    """Column means over contiguous row segments ``offsets[i]:offsets[i+1]``."""
    xd = x.data
    bounds = _segment_bounds(offsets, xd.shape[0])
    out = np.stack([xd[a:b].sum(axis=0) / (b - a) for a, b in bounds])

    def bwd(g):
        gx = np.empty_like(xd)
        for i, (a, b) in enumerate(bounds):
            gx[a:b] = g[i] / (b - a)
        return (gx,)

    return _emit("segment_mean", out, (x,), bwd)


def segment_max(x: Tensor, offsets: Sequence[int]) -> Tensor:
    """Column max per segment; gradient goes to the first argmax row."""
    xd = x.data
    bounds = _segment_bounds(offsets, xd.shape[0])
    arg = np.stack([a + np.argmax(xd[a:b], axis=0) for a, b in bounds])
    cols = np.arange(xd.shape[1])
    out = xd[arg, cols]

    def bwd(g):
        gx = np.zeros_like(xd)
        for i in range(len(bounds)):
            gx[arg[i], cols] += g[i]
        return (gx,)

    return _emit("segment_max", out, (x,), bwd)


def mean_pool_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.shape[0] == 0:
        raise EmptySequenceError(f"mean_pool_rows needs T >= 1 rows, got {x.shape}")
    return reshape(segment_mean(x, [0, x.shape[0]]), (x.shape[1],))


def max_pool_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.shape[0] == 0:
        raise EmptySequenceError(f"max_pool_rows needs T >= 1 rows, got {x.shape}")
    return reshape(segment_max(x, [0, x.shape[0]]), (x.shape[1],))


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def fresh(cls, dim: int) -> "BatchNormState":
        return cls(np.zeros(dim), np.ones(dim))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               mode: str = "train") -> Tensor:
    xd = x.data
    if xd.ndim != 2 or gamma.shape != (xd.shape[1],) or beta.shape != (xd.shape[1],):
        raise DimensionError(f"batch_norm: x{x.shape} gamma{gamma.shape} beta{beta.shape}")
    if mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (xd - state.running_mean) * inv
        gd = gamma.data

        def bwd_eval(g):
            return (g * gd * inv, (g * xhat).sum(axis=0), g.sum(axis=0))

        return _emit("batch_norm", xhat * gd + beta.data, (x, gamma, beta), bwd_eval)
    if mode != "train":
        raise ValueError(f"unknown batch_norm mode {mode!r}")
    n = xd.shape[0]
    if n < 2:
        raise BatchTooSmallError(f"batch_norm in train mode needs N >= 2, got {n}")
    mu = xd.mean(axis=0)
    var = xd.var(axis=0)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (xd - mu) * inv
    m = state.momentum
    state.running_mean = (1 - m) * state.running_mean + m * mu
    state.running_var = (1 - m) * state.running_var + m * var * n / (n - 1)
    gd = gamma.data

    def bwd(g):
        gxhat = g * gd
        gx = inv / n * (n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))
        return (gx, (g * xhat).sum(axis=0), g.sum(axis=0))

    return _emit("batch_norm", xhat * gd + beta.data, (x, gamma, beta), bwd)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mse: {a.shape} vs {b.shape}")
    d = a.data - b.data
    n = d.size

    def bwd(g):
        ga = 2.0 * g * d / n
        return (ga, -ga)

    return _emit("mse", np.array((d * d).sum() / n), (a, b), bwd)


def sq_dist_mean(a: Tensor, b: Tensor) -> Tensor:
    """Mean over rows of the squared L2 distance between rows of ``a`` and ``b``."""
    if a.shape != b.shape or a.data.ndim != 2:
        raise DimensionError(f"sq_dist_mean: {a.shape} vs {b.shape}")
    d = a.data - b.data
    n = d.shape[0]

    def bwd(g):
        ga = 2.0 * g * d / n
        return (ga, -ga)

    return _emit("sq_dist_mean", np.array((d * d).sum(axis=1).mean()), (a, b), bwd)


# ------------------------------------------------------- verification


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f`` must be a pure function of ``x`` (stateful ops such as train-mode
    batch norm should be given a fresh state inside ``f``).
    """
    x0 = x.data.copy()
    probe = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        y = f(probe)
    if y.data.size != 1:
        raise RankError(f"grad_check needs a scalar function, got shape {y.shape}")
    if y.requires_grad:
        backward(y, tape)
        analytic = probe.grad
    else:
        analytic = np.zeros_like(x0)
    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        xp[i] += eps
        xm[i] -= eps
        fp = f(Tensor(xp.reshape(x0.shape))).item()
        fm = f(Tensor(xm.reshape(x0.shape))).item()
        flat[i] = (fp - fm) / (2 * eps)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0


def init_uniform(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(d_in)
    return rng.uniform(-bound, bound, size=(d_in, d_out))
