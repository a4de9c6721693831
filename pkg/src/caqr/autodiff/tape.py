"""Reverse-mode differentiation over dense arrays of rank <= 2.

A :class:`Tape` records every primitive as ``(output, inputs, adjoint)``;
:func:`backward` replays the records in reverse and returns gradients keyed
by parameter name. Values are plain numpy arrays wrapped in :class:`Var`.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import DomainError, NonScalarRoot, ShapeMismatch
from . import special


class Var:
    __slots__ = ("tape", "data", "index")

    def __init__(self, tape: "Tape", data: np.ndarray, index: int):
        self.tape = tape
        self.data = data
        self.index = index

    @property
    def shape(self):
        return self.data.shape

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.data.shape})"

    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(other, self)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    def __rmul__(self, other):
        return self.tape.mul(other, self)

    def __truediv__(self, other):
        return self.tape.div(self, other)

    def __rtruediv__(self, other):
        return self.tape.div(other, self)

    def __neg__(self):
        return self.tape.mul(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)


def ordered_sum(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise sum that does not depend on the order of ``arrays``.

    Values are sorted per element before a sequential accumulation, so any
    permutation of the inputs yields bit-identical output.
    """
    if len(arrays) == 1:
        return arrays[0].copy()
    stacked = np.sort(np.stack(arrays), axis=0)
    acc = stacked[0].copy()
    for k in range(1, len(stacked)):
        acc = acc + stacked[k]
    return acc


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tape:
    """Append-only operation record.

    With ``record=False`` operations compute values only; use it for
    inference and finite differences.
    """

    def __init__(self, dtype=np.float64, record: bool = True):
        self.dtype = np.dtype(dtype)
        self.record = record
        self.values: list[Var] = []
        self.records: list[tuple[int, tuple[int, ...], Callable]] = []
        self.params: dict[str, Var] = {}

    # -- leaves ---------------------------------------------------------------

    def _new(self, data: np.ndarray) -> Var:
        if data.ndim > 2:
            raise ShapeMismatch(f"rank {data.ndim} > 2")
        v = Var(self, data, len(self.values))
        self.values.append(v)
        return v

    def param(self, name: str, array) -> Var:
        v = self._new(np.asarray(array, dtype=self.dtype))
        self.params[name] = v
        return v

    def const(self, array) -> Var:
        return self._new(np.asarray(array, dtype=self.dtype))

    def lift(self, x) -> Var:
        return x if isinstance(x, Var) else self.const(x)

    def _emit(self, data, inputs: Sequence[Var], adjoint: Callable) -> Var:
        out = self._new(data)
        if self.record:
            self.records.append((out.index, tuple(v.index for v in inputs), adjoint))
        return out

    # -- elementwise arithmetic ------------------------------------------------

    def _pair(self, a, b):
        a, b = self.lift(a), self.lift(b)
        if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
            raise ShapeMismatch(f"{a.shape} vs {b.shape}")
        return a, b

    def add(self, a, b) -> Var:
        a, b = self._pair(a, b)
        sa, sb = a.shape, b.shape
        return self._emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a, b) -> Var:
        a, b = self._pair(a, b)
        sa, sb = a.shape, b.shape
        return self._emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))

    def mul(self, a, b) -> Var:
        a, b = self._pair(a, b)
        x, y = a.data, b.data
        return self._emit(
            x * y, (a, b), lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape))
        )

    def div(self, a, b) -> Var:
        a, b = self._pair(a, b)
        x, y = a.data, b.data
        if np.any(y == 0):
            raise DomainError("division by zero")
        out = x / y
        return self._emit(
            out,
            (a, b),
            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * out / y, y.shape)),
        )

    def add_bias(self, x: Var, bias: Var) -> Var:
        """``x`` (n, m) plus a length-m row vector on every row."""
        if x.data.ndim != 2 or bias.shape != (x.shape[1],):
            raise ShapeMismatch(f"bias {bias.shape} for {x.shape}")
        return self._emit(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)))

    # -- linear algebra and reshaping ------------------------------------------

    def matmul(self, a: Var, b: Var) -> Var:
        a, b = self.lift(a), self.lift(b)
        x, y = a.data, b.data
        if x.ndim == 0 or y.ndim == 0 or x.shape[-1] != y.shape[0]:
            raise ShapeMismatch(f"matmul {x.shape} @ {y.shape}")

        def adjoint(g):
            if x.ndim == 2 and y.ndim == 2:
                return g @ y.T, x.T @ g
            if x.ndim == 2:  # matrix-vector
                return np.outer(g, y), x.T @ g
            if y.ndim == 2:  # vector-matrix
                return y @ g, np.outer(x, g)
            return g * y, g * x

        return self._emit(x @ y, (a, b), adjoint)

    def concat(self, xs: Sequence[Var], axis: int = -1) -> Var:
        xs = [self.lift(x) for x in xs]
        data = np.concatenate([x.data for x in xs], axis=axis)
        sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

        def adjoint(g):
            return tuple(np.split(g, sizes, axis=axis))

        return self._emit(data, xs, adjoint)

    def slice(self, x: Var, start: int, stop: int) -> Var:
        """Columns ``start:stop`` of the last axis."""
        shape = x.shape

        def adjoint(g):
            out = np.zeros(shape, dtype=g.dtype)
            out[..., start:stop] = g
            return (out,)

        return self._emit(x.data[..., start:stop], (x,), adjoint)

    def reshape(self, x: Var, shape) -> Var:
        old = x.shape
        return self._emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))

    def gather(self, table: Var, idx) -> Var:
        """Rows ``table[idx]``; repeated indices accumulate in the adjoint."""
        idx = np.asarray(idx, dtype=np.int64)
        shape = table.shape

        def adjoint(g):
            out = np.zeros(shape, dtype=g.dtype)
            np.add.at(out, idx, g)
            return (out,)

        return self._emit(table.data[idx], (table,), adjoint)

    def segment_sum(self, x: Var, segments, num_segments: int, weights=None) -> Var:
        """Row ``s`` of the output is the (weighted) sum of rows of ``x`` in segment ``s``."""
        segments = np.asarray(segments, dtype=np.int64)
        w = np.ones(len(segments), dtype=self.dtype) if weights is None else np.asarray(weights, dtype=self.dtype)
        if x.data.ndim != 2 or len(segments) != x.shape[0] or len(w) != x.shape[0]:
            raise ShapeMismatch("segment_sum needs one segment id and weight per row")
        out = np.zeros((num_segments, x.shape[1]), dtype=self.dtype)
        np.add.at(out, segments, x.data * w[:, None])
        return self._emit(out, (x,), lambda g: (g[segments] * w[:, None],))

    def sum(self, x: Var, axis: Optional[int] = None) -> Var:
        shape = x.shape
        if axis is None:
            return self._emit(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, g, dtype=x.data.dtype),))
        return self._emit(
            x.data.sum(axis=axis), (x,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)
        )

    def mean(self, x: Var) -> Var:
        return self.mul(self.sum(x), 1.0 / x.data.size)

    def l1norm(self, x: Var, axis: Optional[int] = None) -> Var:
        return self.sum(self.abs(x), axis=axis)

    def l2norm(self, x: Var, axis: Optional[int] = None) -> Var:
        data = x.data
        out = np.sqrt((data * data).sum(axis=axis))

        def adjoint(g):
            denom = out if axis is None else np.expand_dims(out, axis)
            gg = g if axis is None else np.expand_dims(g, axis)
            safe = np.where(denom > 0, denom, 1.0)
            # subgradient 0 at the origin
            return (np.where(denom > 0, gg * data / safe, 0.0),)

        return self._emit(np.asarray(out), (x,), adjoint)

    # -- unary nonlinearities ----------------------------------------------------

    def relu(self, x: Var) -> Var:
        mask = x.data > 0
        return self._emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))

    def abs(self, x: Var) -> Var:
        sign = np.sign(x.data)
        return self._emit(np.abs(x.data), (x,), lambda g: (g * sign,))

    def sigmoid(self, x: Var) -> Var:
        s = _sigmoid(x.data)
        return self._emit(s, (x,), lambda g: (g * s * (1.0 - s),))

    def softplus(self, x: Var) -> Var:
        s = _sigmoid(x.data)
        return self._emit(_softplus(x.data), (x,), lambda g: (g * s,))

    def exp(self, x: Var) -> Var:
        out = np.exp(x.data)
        return self._emit(out, (x,), lambda g: (g * out,))

    def log(self, x: Var) -> Var:
        if np.any(x.data <= 0):
            raise DomainError("log of nonpositive value")
        d = x.data
        return self._emit(np.log(d), (x,), lambda g: (g / d,))

    def clamp(self, x: Var, lo: float, hi: float) -> Var:
        inside = (x.data >= lo) & (x.data <= hi)
        return self._emit(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))

    def lgamma(self, x: Var) -> Var:
        d, dt = x.data, self.dtype
        # evaluated in 64-bit, stored at the tape precision
        return self._emit(special.lgamma(d).astype(dt), (x,), lambda g: ((g * special.digamma(d)).astype(dt),))

    def digamma(self, x: Var) -> Var:
        d, dt = x.data, self.dtype
        return self._emit(special.digamma(d).astype(dt), (x,), lambda g: ((g * special.trigamma(d)).astype(dt),))

    # -- reductions over lists of equal-shaped tensors -------------------------

    def _check_list(self, xs):
        xs = [self.lift(x) for x in xs]
        if not xs:
            raise ShapeMismatch("empty list")
        shape = xs[0].shape
        if any(x.shape != shape for x in xs):
            raise ShapeMismatch("list elements differ in shape")
        return xs

    def sum_list(self, xs: Sequence[Var]) -> Var:
        xs = self._check_list(xs)
        n = len(xs)
        return self._emit(ordered_sum([x.data for x in xs]), xs, lambda g: (g,) * n)

    def mean_list(self, xs: Sequence[Var]) -> Var:
        xs = self._check_list(xs)
        return self.mul(self.sum_list(xs), 1.0 / len(xs))

    def min_list(self, xs: Sequence[Var]) -> Var:
        """Elementwise minimum; ties send the adjoint to the earliest argument."""
        xs = self._check_list(xs)
        stacked = np.stack([x.data for x in xs])
        arg = np.argmin(stacked, axis=0)  # first occurrence on ties

        def adjoint(g):
            return tuple(np.where(arg == k, g, 0.0) for k in range(len(xs)))

        return self._emit(stacked.min(axis=0), xs, adjoint)

    def softmax_list(self, xs: Sequence[Var]) -> list[Var]:
        """Softmax across the list, independently for every element position."""
        xs = self._check_list(xs)
        stacked = np.stack([x.data for x in xs])
        m = stacked.max(axis=0)
        e = [np.exp(x.data - m) for x in xs]
        z = ordered_sum(e)
        probs = [ek / z for ek in e]
        outs = []
        for k in range(len(xs)):
            pk = probs[k]

            def adjoint(g, pk=pk, k=k):
                # d p_k / d x_j = p_k (delta_kj - p_j)
                return tuple(g * pk * ((1.0 if j == k else 0.0) - probs[j]) for j in range(len(xs)))

            outs.append(self._emit(pk, xs, adjoint))
        return outs

    # -- misc ---------------------------------------------------------------------

    def stop_gradient(self, x: Var) -> Var:
        return self.const(x.data.copy())


def backward(tape: Tape, root: Var, params: Optional[Sequence[str]] = None) -> dict[str, np.ndarray]:
    """Gradients of scalar ``root`` for every registered parameter.

    Parameters not reachable from ``root`` get zeros of matching shape.
    """
    if root.data.size != 1:
        raise NonScalarRoot(f"root has shape {root.shape}")
    grads: list = [None] * len(tape.values)
    grads[root.index] = np.ones_like(root.data)
    for out, inputs, adjoint in reversed(tape.records):
        g = grads[out]
        if g is None:
            continue
        for i, gi in zip(inputs, adjoint(g)):
            if gi is None:
                continue
            grads[i] = gi if grads[i] is None else grads[i] + gi
    names = tape.params.keys() if params is None else params
    out = {}
    for name in names:
        v = tape.params[name]
        g = grads[v.index]
        out[name] = np.zeros_like(v.data) if g is None else np.asarray(g, dtype=v.data.dtype).reshape(v.shape)
    return out
