"""A small reverse-mode tape over numpy arrays.

Each primitive computes its forward value eagerly and records a closure
mapping the output cotangent to the cotangents of its ``Var`` inputs.
Plain arrays passed to a primitive are constants and receive no gradient.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class TapeError(RuntimeError):
    pass


class Var:
    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(#{self.index}, shape={self.value.shape})"


class Tape:
    """Records primitives in order; :meth:`backward` replays them in reverse."""

    def __init__(self):
        self._records: list[tuple[int, tuple, Callable | None]] = []

    def __len__(self) -> int:
        return len(self._records)

    def leaf(self, value) -> Var:
        var = Var(self, len(self._records), np.asarray(value, dtype=np.float64))
        self._records.append((var.index, (), None))
        return var

    def record(self, value: np.ndarray, parents: Sequence, vjp: Callable) -> Var:
        """``vjp(g)`` must return one cotangent (or ``None``) per entry of ``parents``."""
        var = Var(self, len(self._records), value)
        self._records.append((var.index, tuple(parents), vjp))
        return var

    def backward(self, out: Var, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
        if not isinstance(out, Var) or out.tape is not self or out.index >= len(self._records):
            raise TapeError("output was not recorded on this tape")
        if seed is None:
            if out.value.size != 1:
                raise TapeError("backward from a non-scalar output needs an explicit seed")
            seed = np.ones_like(out.value)
        grads: dict[int, np.ndarray] = {out.index: np.asarray(seed, dtype=np.float64)}
        for index, parents, vjp in reversed(self._records[: out.index + 1]):
            g = grads.pop(index, None) if vjp is not None else None
            if g is None:
                continue
            for parent, pg in zip(parents, vjp(g)):
                if not isinstance(parent, Var) or pg is None:
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + pg
                else:
                    grads[parent.index] = pg
        return grads

    def grad(self, out: Var, wrt: Var, seed: np.ndarray | None = None) -> np.ndarray:
        g = self.backward(out, seed).get(wrt.index)
        return np.zeros_like(wrt.value) if g is None else g


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TapeError("at least one input must be a Var")


def _const(value_: np.ndarray, *xs):
    """Return ``value_`` as a plain array when no input is a Var (no recording)."""
    return not any(isinstance(x, Var) for x in xs)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# generic primitives


def add(a, b):
    out = value(a) + value(b)
    if _const(out, a, b):
        return out
    sa, sb = value(a).shape, value(b).shape
    return _tape_of(a, b).record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def scale(a, c: float):
    out = value(a) * c
    if _const(out, a):
        return out
    return a.tape.record(out, (a,), lambda g: (g * c,))


def multiply(a, b):
    va, vb = value(a), value(b)
    out = va * vb
    if _const(out, a, b):
        return out
    return _tape_of(a, b).record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * vb, va.shape) if isinstance(a, Var) else None,
            _unbroadcast(g * va, vb.shape) if isinstance(b, Var) else None,
        ),
    )


def concat(xs: Sequence, axis: int = -1):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if _const(out, *xs):
        return out
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) if isinstance(x, Var) else None
            for i, x in enumerate(xs)
        )

    return _tape_of(*xs).record(out, tuple(xs), vjp)


def take_slice(x, start: int, stop: int, shape=None):
    """``x[start:stop]`` of a flat vector, optionally reshaped."""
    vx = value(x)
    out = vx[start:stop]
    if shape is not None:
        out = out.reshape(shape)
    if _const(out, x):
        return out
    n = vx.shape[0]

    def vjp(g):
        full = np.zeros(n)
        full[start:stop] = g.reshape(-1)
        return (full,)

    return x.tape.record(out, (x,), vjp)


def sparse_apply(S: sp.spmatrix, x):
    """``S @ x`` for a constant sparse matrix (gather, scatter, pooling)."""
    out = S @ value(x)
    if _const(out, x):
        return out
    St = S.T.tocsr()
    return x.tape.record(out, (x,), lambda g: (St @ g,))


def dense(x, W, b=None):
    """Affine map ``x @ W + b``."""
    vx, vW = value(x), value(W)
    out = vx @ vW
    if b is not None:
        out = out + value(b)
    if _const(out, x, W, b):
        return out

    def vjp(g):
        gx = g @ vW.T if isinstance(x, Var) else None
        gW = vx.T @ g if isinstance(W, Var) else None
        gb = g.sum(axis=0) if isinstance(b, Var) else None
        return gx, gW, gb

    return _tape_of(x, W, b).record(out, (x, W, b), vjp)


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x):
    vx = value(x)
    s = sigmoid_array(vx)
    out = vx * s
    if _const(out, x):
        return out
    return x.tape.record(out, (x,), lambda g: (g * (s * (1.0 + vx * (1.0 - s))),))


def mean_abs(x):
    """Mean absolute value; subgradient 0 at exactly zero."""
    vx = value(x)
    out = np.array(np.abs(vx).mean())
    if _const(out, x):
        return out
    n = vx.size
    return x.tape.record(out, (x,), lambda g: (g * np.sign(vx) / n,))


def total(xs: Sequence):
    """Sum of scalar Vars."""
    acc = xs[0]
    for x in xs[1:]:
        acc = add(acc, x)
    return acc
