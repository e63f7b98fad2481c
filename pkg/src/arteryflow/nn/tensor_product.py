"""Clebsch-Gordan tensor products with learnable path weights."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ..autodiff import Var, _const, _tape_of, value
from ..so3 import IrrepsLayout, SteerableTensor, clebsch_gordan


class LayoutMismatchError(ValueError):
    pass


def allowed_paths(in1: IrrepsLayout, in2: IrrepsLayout, out: IrrepsLayout) -> tuple[tuple[int, int, int], ...]:
    """Every ``(i1, i2, io)`` obeying the triangle rule and parity product."""
    paths = []
    for io, (_, ir_o) in enumerate(out):
        for i1, (_, ir1) in enumerate(in1):
            for i2, (_, ir2) in enumerate(in2):
                if abs(ir1.l - ir2.l) <= ir_o.l <= ir1.l + ir2.l and ir1.p * ir2.p == ir_o.p:
                    paths.append((i1, i2, io))
    return tuple(paths)


@dataclass(frozen=True, eq=False)
class TensorProductMap:
    """Bilinear equivariant map ``in1 x in2 -> out``.

    Weights are stored path by path, each path as a ``(mul1, mul2, mul_out)``
    block in C order.  The map is evaluated through a dense kernel
    ``K[i, j, o]`` assembled linearly from the weights, so one dense matmul
    replaces a loop over paths.
    """

    layout_in1: IrrepsLayout
    layout_in2: IrrepsLayout
    layout_out: IrrepsLayout
    paths: tuple[tuple[int, int, int], ...] = field(default=None)

    def __post_init__(self):
        if self.paths is None:
            object.__setattr__(self, "paths", allowed_paths(self.layout_in1, self.layout_in2, self.layout_out))
        sizes = (len(self.layout_in1.entries), len(self.layout_in2.entries), len(self.layout_out.entries))
        for i1, i2, io in self.paths:
            if not all(0 <= i < n for i, n in zip((i1, i2, io), sizes)):
                raise ValueError(f"path {(i1, i2, io)} indexes outside the layouts")
            l1 = self.layout_in1.entries[i1][1]
            l2 = self.layout_in2.entries[i2][1]
            lo = self.layout_out.entries[io][1]
            if not (abs(l1.l - l2.l) <= lo.l <= l1.l + l2.l) or l1.p * l2.p != lo.p:
                raise ValueError(f"path {(i1, i2, io)} violates the selection rules")

    def _path_shape(self, path) -> tuple[int, int, int]:
        i1, i2, io = path
        return self.layout_in1.entries[i1][0], self.layout_in2.entries[i2][0], self.layout_out.entries[io][0]

    @property
    def weight_count(self) -> int:
        return sum(int(np.prod(self._path_shape(p))) for p in self.paths)

    def fan_in(self) -> np.ndarray:
        """Contributing ``mul1 * mul2`` combinations per output entry."""
        fan = np.zeros(len(self.layout_out), dtype=np.int64)
        for p in self.paths:
            m1, m2, _ = self._path_shape(p)
            fan[p[2]] += m1 * m2
        return fan

    def init_weights(self, rng: np.random.Generator) -> np.ndarray:
        fan = self.fan_in()
        chunks = []
        for p in self.paths:
            bound = 1.0 / np.sqrt(fan[p[2]])
            chunks.append(rng.uniform(-bound, bound, int(np.prod(self._path_shape(p)))))
        return np.concatenate(chunks) if chunks else np.zeros(0)

    @cached_property
    def _basis(self) -> sp.csr_matrix:
        """Sparse ``(d1*d2*d3, n_weights)`` map from weights to the flat kernel."""
        d1, d2, d3 = self.layout_in1.dim, self.layout_in2.dim, self.layout_out.dim
        s1, s2, s3 = self.layout_in1.slices(), self.layout_in2.slices(), self.layout_out.slices()
        rows, cols, vals = [], [], []
        woff = 0
        for p in self.paths:
            i1, i2, io = p
            m1, m2, m3 = self._path_shape(p)
            ir1 = self.layout_in1.entries[i1][1]
            ir2 = self.layout_in2.entries[i2][1]
            iro = self.layout_out.entries[io][1]
            C = clebsch_gordan(ir1.l, ir2.l, iro.l)
            a, b, c = np.nonzero(C)
            cv = C[a, b, c]
            u, v, w = np.meshgrid(np.arange(m1), np.arange(m2), np.arange(m3), indexing="ij")
            u, v, w = u.reshape(-1, 1), v.reshape(-1, 1), w.reshape(-1, 1)
            ii = s1[i1].start + u * ir1.dim + a
            jj = s2[i2].start + v * ir2.dim + b
            oo = s3[io].start + w * iro.dim + c
            rows.append(((ii * d2 + jj) * d3 + oo).reshape(-1))
            cols.append(np.broadcast_to(woff + (u * m2 + v) * m3 + w, ii.shape).reshape(-1))
            vals.append(np.broadcast_to(cv, ii.shape).reshape(-1))
            woff += m1 * m2 * m3
        if rows:
            rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        return sp.csr_matrix((vals, (rows, cols)), shape=(d1 * d2 * d3, self.weight_count))

    def kernel(self, weights: np.ndarray) -> np.ndarray:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (self.weight_count,):
            raise LayoutMismatchError(f"expected {self.weight_count} weights, got {w.shape}")
        return (self._basis @ w).reshape(self.layout_in1.dim, self.layout_in2.dim, self.layout_out.dim)

    def weight_grad(self, kernel_grad: np.ndarray) -> np.ndarray:
        return self._basis.T @ kernel_grad.reshape(-1)


def tp_apply(tp: TensorProductMap, x, y, w):
    """Row-wise tensor product of ``x`` (N, d1) and ``y`` (N, d2) into (N, d3).

    Any of ``x``, ``y``, ``w`` may be a :class:`Var`; plain arrays are constants.
    """
    vx, vy, vw = value(x), value(y), value(w)
    d1, d2, d3 = tp.layout_in1.dim, tp.layout_in2.dim, tp.layout_out.dim
    if vx.shape[-1] != d1 or vy.shape[-1] != d2:
        raise LayoutMismatchError(
            f"inputs of width {vx.shape[-1]}, {vy.shape[-1]} do not match layouts {d1}, {d2}"
        )
    vx2, vy2 = np.atleast_2d(vx), np.atleast_2d(vy)
    n = max(len(vx2), len(vy2))
    vx2 = np.broadcast_to(vx2, (n, d1))
    vy2 = np.broadcast_to(vy2, (n, d2))
    # contract x with the kernel first: (n, d1) @ (d1, d2*d3), then with y
    K = tp.kernel(vw).reshape(d1, d2 * d3)
    T = (vx2 @ K).reshape(n, d2, d3)
    out = np.einsum("nbo,nb->no", T, vy2)
    if vx.ndim == 1 and vy.ndim == 1:
        out = out[0]
    if _const(out, x, y, w):
        return out

    def vjp(g):
        g2 = np.atleast_2d(g)
        gT = (vy2[:, :, None] * g2[:, None, :]).reshape(n, d2 * d3)
        gw = tp.weight_grad(vx2.T @ gT) if isinstance(w, Var) else None
        gx = gy = None
        if isinstance(x, Var):
            gx = gT @ K.T
            gx = gx.reshape(vx.shape) if vx.ndim == 2 else gx.sum(axis=0)
        if isinstance(y, Var):
            gy = np.einsum("nbo,no->nb", T, g2)
            gy = gy.reshape(vy.shape) if vy.ndim == 2 else gy.sum(axis=0)
        return gx, gy, gw

    return _tape_of(x, y, w).record(out, (x, y, w), vjp)


def tensor_product(
    tp: TensorProductMap, a: SteerableTensor, b: SteerableTensor, weights: np.ndarray
) -> SteerableTensor:
    if a.layout != tp.layout_in1 or b.layout != tp.layout_in2:
        raise LayoutMismatchError("input layouts do not match the tensor-product map")
    return SteerableTensor(tp.layout_out, tp_apply(tp, a.coefficients, b.coefficients, weights))
