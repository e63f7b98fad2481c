"""Gated nonlinearity, per-graph normalisation, pooling and message aggregation."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..autodiff import Var, _const, _tape_of, sigmoid_array, sparse_apply, value
from ..so3 import Irrep, IrrepsLayout, SteerableTensor

NORM_EPS = 1e-5


class MissingGateError(ValueError):
    pass


# ---------------------------------------------------------------------------
# gates
#
# Layout convention: all l=0 entries come first, then the l>0 entries.  The
# last G scalar channels are gates, G being the number of l>0 irrep copies;
# gate i scales copy i.  The remaining scalars go through SiLU.


def gate_input_layout(out: IrrepsLayout) -> IrrepsLayout:
    scalars = [(m, ir) for m, ir in out if ir.l == 0]
    gated = [(m, ir) for m, ir in out if ir.l > 0]
    n_gates = sum(m for m, _ in gated)
    gates = [(n_gates, Irrep(0, 1))] if n_gates else []
    return IrrepsLayout(tuple(scalars + gates + gated))


def _gate_structure(layout: IrrepsLayout):
    seen_nonscalar = False
    for _, ir in layout:
        if ir.l > 0:
            seen_nonscalar = True
        elif seen_nonscalar:
            raise MissingGateError("gated layouts must list all l=0 entries first")
    n_scalar = layout.num_scalars
    n_gates = sum(m for m, ir in layout if ir.l > 0)
    if n_gates > n_scalar:
        raise MissingGateError(f"layout {layout} has {n_scalar} scalars but needs {n_gates} gates")
    comp_gate = []
    for i, (sl, l) in enumerate(b for b in layout.blocks() if b[1] > 0):
        comp_gate.extend([i] * (2 * l + 1))
    out_layout = IrrepsLayout(
        tuple(([(n_scalar - n_gates, Irrep(0, 1))] if n_scalar > n_gates else []) + [(m, ir) for m, ir in layout if ir.l > 0])
    )
    return n_scalar - n_gates, n_gates, np.array(comp_gate, dtype=np.int64), out_layout


def gate_output_layout(layout: IrrepsLayout) -> IrrepsLayout:
    return _gate_structure(layout)[3]


def gate_apply(x, layout: IrrepsLayout):
    n_free, n_gates, comp_gate, _ = _gate_structure(layout)
    vx = value(x)
    if vx.shape[-1] != layout.dim:
        raise MissingGateError("input width does not match layout")
    s = vx[..., :n_free]
    sig_s = sigmoid_array(s)
    gates = sigmoid_array(vx[..., n_free : n_free + n_gates])
    ns = vx[..., n_free + n_gates :]
    gexp = gates[..., comp_gate]
    out = np.concatenate([s * sig_s, ns * gexp], axis=-1)
    if _const(out, x):
        return out
    M = np.zeros((len(comp_gate), n_gates))
    M[np.arange(len(comp_gate)), comp_gate] = 1.0

    def vjp(g):
        gs = g[..., :n_free] * (sig_s * (1.0 + s * (1.0 - sig_s)))
        gn = g[..., n_free:]
        gg = ((gn * ns) @ M) * gates * (1.0 - gates)
        return (np.concatenate([gs, gg, gn * gexp], axis=-1),)

    return x.tape.record(out, (x,), vjp)


def gated_nonlinearity(t: SteerableTensor) -> SteerableTensor:
    return SteerableTensor(gate_output_layout(t.layout), gate_apply(t.coefficients, t.layout))


# ---------------------------------------------------------------------------
# graph-wise normalisation


def norm_param_count(layout: IrrepsLayout) -> int:
    """Scale for every channel copy plus a shift for every scalar."""
    copies = sum(m for m, _ in layout)
    return copies + layout.num_scalars


def norm_init(layout: IrrepsLayout) -> np.ndarray:
    copies = sum(m for m, _ in layout)
    return np.concatenate([np.ones(copies), np.zeros(layout.num_scalars)])


def _segments(graph_ids: np.ndarray):
    ids = np.asarray(graph_ids)
    uniq, inv = np.unique(ids, return_inverse=True)
    n = len(ids)
    S = sp.csr_matrix((np.ones(n), (inv, np.arange(n))), shape=(len(uniq), n))
    counts = np.asarray(S.sum(axis=1)).ravel()
    return S, inv, counts


def graph_norm_apply(x, layout: IrrepsLayout, graph_ids=None, affine=None, eps: float = NORM_EPS):
    """Normalise per graph: scalars to zero mean / unit variance, l>0 copies by RMS norm.

    ``affine`` (optional, length :func:`norm_param_count`) holds one scale
    per channel copy followed by one shift per scalar channel.
    """
    vx = value(x)
    n, d = vx.shape
    if d != layout.dim:
        raise ValueError("input width does not match layout")
    graph_ids = np.zeros(n, dtype=np.int64) if graph_ids is None else np.asarray(graph_ids)
    S, inv, counts = _segments(graph_ids)

    blocks = list(layout.blocks())
    scalar_cols = np.array([sl.start for sl, l in blocks if l == 0], dtype=np.int64)
    vec_blocks = [(sl, l) for sl, l in blocks if l > 0]
    # component -> copy index among the l>0 copies
    vec_cols = np.concatenate([np.arange(sl.start, sl.stop) for sl, _ in vec_blocks]) if vec_blocks else np.zeros(0, np.int64)
    vec_copy = np.concatenate([[i] * (sl.stop - sl.start) for i, (sl, _) in enumerate(vec_blocks)]).astype(np.int64) if vec_blocks else np.zeros(0, np.int64)
    n_vec = len(vec_blocks)
    copy_scale_index = np.empty(len(blocks), dtype=np.int64)  # scale slot per block in layout order
    copy_scale_index[:] = np.arange(len(blocks))
    scalar_scale = copy_scale_index[[i for i, (_, l) in enumerate(blocks) if l == 0]]
    vec_scale = copy_scale_index[[i for i, (_, l) in enumerate(blocks) if l > 0]]

    va = norm_init(layout) if affine is None else value(affine)
    gamma = va[: len(blocks)]
    beta = va[len(blocks) :]

    out = np.empty_like(vx)
    # scalars
    xs = vx[:, scalar_cols]
    mu = (S @ xs) / counts[:, None]
    xc = xs - mu[inv]
    var = (S @ xc**2) / counts[:, None]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std[inv]
    out[:, scalar_cols] = xhat * gamma[scalar_scale] + beta
    # l > 0 copies
    xv = vx[:, vec_cols]
    sq = np.zeros((n, n_vec))
    if n_vec:
        sq = (xv**2) @ _onehot(vec_copy, n_vec)
    ms = (S @ sq) / counts[:, None]
    inv_rms = 1.0 / np.sqrt(ms + eps)
    yv = xv * inv_rms[inv][:, vec_copy]
    out[:, vec_cols] = yv * gamma[vec_scale][vec_copy]

    if _const(out, x, affine):
        return out

    def vjp(g):
        gx = np.zeros_like(vx) if isinstance(x, Var) else None
        gs = g[:, scalar_cols]
        gv = g[:, vec_cols]
        ga = np.zeros_like(va) if isinstance(affine, Var) else None
        if ga is not None:
            ga[scalar_scale] = (gs * xhat).sum(axis=0)
            ga[len(blocks) :] = gs.sum(axis=0)
            if n_vec:
                ga[vec_scale] = ((gv * yv) @ _onehot(vec_copy, n_vec)).sum(axis=0)
        if gx is not None:
            dxhat = gs * gamma[scalar_scale]
            m1 = (S @ dxhat) / counts[:, None]
            m2 = (S @ (dxhat * xhat)) / counts[:, None]
            gx[:, scalar_cols] = inv_std[inv] * (dxhat - m1[inv] - xhat * m2[inv])
            if n_vec:
                dy = gv * gamma[vec_scale][vec_copy]
                r = inv_rms[inv][:, vec_copy]
                # d/dx of x * (ms + eps)^(-1/2), ms = mean over graph of |x_copy|^2
                dot = S @ ((dy * xv) @ _onehot(vec_copy, n_vec))  # (graphs, copies)
                coef = (inv_rms**3) * dot / counts[:, None]
                gx[:, vec_cols] = dy * r - xv * coef[inv][:, vec_copy]
        return gx, ga

    return _tape_of(x, affine).record(out, (x, affine), vjp)


def _onehot(index: np.ndarray, width: int) -> np.ndarray:
    M = np.zeros((len(index), width))
    M[np.arange(len(index)), index] = 1.0
    return M


def graph_norm(t: SteerableTensor, graph_ids=None, affine=None) -> SteerableTensor:
    return SteerableTensor(t.layout, graph_norm_apply(t.coefficients, t.layout, graph_ids, affine))


# ---------------------------------------------------------------------------
# pooling and aggregation as constant sparse operators


def pool_matrix(assignment: np.ndarray, n_coarse: int) -> sp.csr_matrix:
    """``(n_coarse, n_fine)`` averaging operator for a pooling assignment."""
    a = np.asarray(assignment, dtype=np.int64)
    counts = np.bincount(a, minlength=n_coarse)
    if (counts == 0).any():
        raise ValueError(f"coarse vertex {int(np.flatnonzero(counts == 0)[0])} receives no source")
    return sp.csr_matrix((1.0 / counts[a], (a, np.arange(len(a)))), shape=(n_coarse, len(a)))


def unpool_matrix(assignment: np.ndarray, n_coarse: int) -> sp.csr_matrix:
    """``(n_fine, n_coarse)`` copy-back operator."""
    a = np.asarray(assignment, dtype=np.int64)
    return sp.csr_matrix((np.ones(len(a)), (np.arange(len(a)), a)), shape=(len(a), n_coarse))


def gather_matrix(index: np.ndarray, n: int) -> sp.csr_matrix:
    idx = np.asarray(index, dtype=np.int64)
    return sp.csr_matrix((np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), n))


def mean_aggregation_matrix(targets: np.ndarray, n: int) -> sp.csr_matrix:
    """``(n, E)`` operator averaging edge messages onto their targets."""
    t = np.asarray(targets, dtype=np.int64)
    deg = np.bincount(t, minlength=n).astype(np.float64)
    w = 1.0 / deg[t]
    return sp.csr_matrix((w, (t, np.arange(len(t)))), shape=(n, len(t)))


def pool_mean(features, assignment: np.ndarray, n_coarse: int | None = None):
    n_coarse = int(np.max(assignment)) + 1 if n_coarse is None else n_coarse
    return sparse_apply(pool_matrix(assignment, n_coarse), features)


def unpool_copy(features, assignment: np.ndarray):
    return sparse_apply(unpool_matrix(assignment, len(value(features))), features)
