"""One-shot symmetry and gradient verification suite.

Each check returns the largest observed error together with its tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .descriptors import compute_descriptors
from .graph import build_hierarchy
from .nn.graph_inputs import prepare_graph
from .nn.layers import gate_apply, graph_norm_apply
from .nn.segnn import SegnnConfig, get_model, param_reader
from .nn.tensor_product import tp_apply
from .so3 import (IrrepsLayout, Rotation, clebsch_gordan, layout_wigner_d, spherical_harmonics,
                  wigner_d)
from .synthetic import TubeSpec, analytic_flow, gen_tube
from .train import l1_loss

SMALL = SegnnConfig(hidden="8x0e + 4x1o + 2x2e", layers_per_scale=1)


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} max error {self.error:.3e}  (tolerance {self.tolerance:.0e})"


def _rel(a, b) -> float:
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


def check_wigner(rng, trials=10, lmax=4) -> CheckResult:
    err = 0.0
    for _ in range(trials):
        r1, r2 = Rotation.random(rng), Rotation.random(rng)
        for l in range(lmax + 1):
            err = max(err, np.abs(wigner_d(l, r1 @ r2) - wigner_d(l, r1) @ wigner_d(l, r2)).max())
    return CheckResult("wigner_d homomorphism", err, 1e-10)


def check_harmonics(rng, trials=10, lmax=4) -> CheckResult:
    layout = IrrepsLayout.spherical_harmonics(lmax)
    err = 0.0
    for _ in range(trials):
        R = Rotation.random(rng)
        x = rng.normal(size=(5, 3))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        lhs = spherical_harmonics(x @ R.matrix.T, lmax)
        rhs = spherical_harmonics(x, lmax) @ layout_wigner_d(layout, R).T
        err = max(err, np.abs(lhs - rhs).max())
    return CheckResult("spherical harmonics", err, 1e-10)


def check_clebsch_gordan(rng, trials=5, lmax=3) -> CheckResult:
    err = 0.0
    for _ in range(trials):
        R = Rotation.random(rng)
        for l1 in range(lmax + 1):
            for l2 in range(lmax + 1):
                for l3 in range(abs(l1 - l2), min(l1 + l2, lmax) + 1):
                    C = clebsch_gordan(l1, l2, l3)
                    D1, D2, D3 = wigner_d(l1, R), wigner_d(l2, R), wigner_d(l3, R)
                    lhs = np.einsum("abc,ai,bj->ijc", C, D1, D2)
                    rhs = np.einsum("ijk,ck->ijc", C, D3)
                    err = max(err, np.abs(lhs - rhs).max())
    return CheckResult("clebsch-gordan intertwining", err, 1e-9)


def check_descriptors(rng, trials=5) -> CheckResult:
    mesh = gen_tube(TubeSpec(bend_angle=0.7, seed=3))
    X = compute_descriptors(mesh).rows.reshape(-1, 3, 3)
    err = 0.0
    for _ in range(trials):
        R = Rotation.random(rng).matrix
        t = rng.uniform(-10, 10, 3)
        X2 = compute_descriptors(mesh.transformed(R, t)).rows.reshape(-1, 3, 3)
        err = max(err, np.abs(X2 - X @ R.T).max())
    return CheckResult("descriptor equivariance", err, 1e-9)


def check_layers(rng, trials=5) -> list[CheckResult]:
    """Tensor product, gate, graph norm and one full message-passing layer."""
    model = get_model(SMALL)
    params = model.init_params(int(rng.integers(1 << 30)))
    P, _ = param_reader(params)
    H, Hg, A = model.hidden, model.gated, model.attrs
    n = 7
    errs = {"tensor product": 0.0, "gated nonlinearity": 0.0, "graph norm": 0.0, "message": 0.0, "update": 0.0}
    for _ in range(trials):
        R = Rotation.random(rng)
        DH, DHg, DA = (layout_wigner_d(L, R) for L in (H, Hg, A))
        fi, fj, agg = (rng.normal(size=(n, H.dim)) for _ in range(3))
        hg = rng.normal(size=(n, Hg.dim))
        u = rng.normal(size=(n, 3))
        a = spherical_harmonics(u / np.linalg.norm(u, axis=1, keepdims=True), SMALL.attr_lmax)
        sq = rng.uniform(0.1, 2.0, n)
        rot = lambda x, D: x @ D.T
        w = P("down0.0.m2")
        errs["tensor product"] = max(errs["tensor product"], _rel(
            tp_apply(model.tp_m2, rot(fi, DH), rot(a, DA), w), rot(tp_apply(model.tp_m2, fi, a, w), DH)))
        errs["gated nonlinearity"] = max(errs["gated nonlinearity"], _rel(
            gate_apply(rot(hg, DHg), Hg), rot(gate_apply(hg, Hg), DH)))
        errs["graph norm"] = max(errs["graph norm"], _rel(
            graph_norm_apply(rot(fi, DH), H), rot(graph_norm_apply(fi, H), DH)))
        m = model.message(P, "down0.0", fi, fj, sq, a)
        m2 = model.message(P, "down0.0", rot(fi, DH), rot(fj, DH), sq, rot(a, DA))
        errs["message"] = max(errs["message"], _rel(m2, rot(m, DH)))
        f = model.update(P, "down0.0", fi, agg, a)
        f2 = model.update(P, "down0.0", rot(fi, DH), rot(agg, DH), rot(a, DA))
        errs["update"] = max(errs["update"], _rel(f2, rot(f, DH)))
    tol = {"message": 1e-9, "update": 1e-9}
    return [CheckResult(k, v, tol.get(k, 1e-10)) for k, v in errs.items()]


def end_to_end_error(mesh, params, config, rotations, translations, poison=None) -> float:
    """Largest relative error of ``f(R p + t) - R f(p)`` over the given motions."""
    model = get_model(config)
    P, _ = param_reader(params)

    def run(m):
        g = prepare_graph(m, build_hierarchy(m), config.attr_lmax, poison_edge=poison)
        return np.asarray(model.forward(P, g, compute_descriptors(m).rows))

    y = run(mesh)
    err = 0.0
    for R, t in zip(rotations, translations):
        err = max(err, _rel(run(mesh.transformed(R, t)), y @ R.T))
    return err


def check_end_to_end(rng, trials=3, poison=False, config=SMALL) -> CheckResult:
    mesh = gen_tube(TubeSpec(axial_segments=13, seed=5))  # 518 vertices
    params = get_model(config).init_params(int(rng.integers(1 << 30)))
    rots = [Rotation.random(rng).matrix for _ in range(trials)]
    ts = [rng.uniform(-10, 10, 3) for _ in range(trials)]
    bad = (0, Rotation.about_axis([1.0, 0.0, 0.0], 0.9).matrix) if poison else None
    return CheckResult("end-to-end equivariance", end_to_end_error(mesh, params, config, rots, ts, bad), 1e-7)


GRAD_SPEC = TubeSpec(radial_rings=2, axial_segments=9, seed=11)  # 190 vertices
GRAD_RATIOS = (0.5, 0.5)


def gradient_check(rng, n_params=50, step=1e-6, config=SMALL, params=None) -> tuple[float, int]:
    """Central differences against the tape on sampled parameters of a small net.

    Returns the largest relative error and the number of parameters compared.
    Parameters are skipped when some output residual lies within 1e-8 of the
    L1 kink, or when the perturbation would cross it.
    """
    mesh = gen_tube(GRAD_SPEC)
    target = analytic_flow(mesh, GRAD_SPEC)
    graph = prepare_graph(mesh, build_hierarchy(mesh, ratios=GRAD_RATIOS), config.attr_lmax)
    X = compute_descriptors(mesh).rows
    model = get_model(config)
    params = params if params is not None else model.init_params(int(rng.integers(1 << 30)))

    tape = ad.Tape()
    P, leaf = param_reader(params, tape)
    out = model.forward(P, graph, X)
    grad = tape.grad(l1_loss(out, target), leaf)
    base_res = np.abs(out.value - target)

    def loss_at(vec):
        Pv, _ = param_reader(params.with_vector(vec))
        y = np.asarray(model.forward(Pv, graph, X))
        return float(l1_loss(y, target)), np.abs(y - target)

    err, used = 0.0, 0
    for i in rng.choice(len(params), size=min(n_params, len(params)), replace=False):
        v = params.vector.copy()
        v[i] += step
        lp, rp = loss_at(v)
        v[i] -= 2 * step
        lm, rm = loss_at(v)
        if min(base_res.min(), rp.min(), rm.min()) < 1e-8:
            continue
        fd = (lp - lm) / (2 * step)
        denom = max(abs(fd), abs(grad[i]))
        if denom > 0:
            err = max(err, abs(fd - grad[i]) / denom)
        used += 1
    return err, used


def check_gradients(rng, n_params=50) -> CheckResult:
    err, used = gradient_check(rng, n_params)
    return CheckResult(f"gradients ({used} params)", err, 1e-4)


def run_all(seed: int = 0, poison: bool = False) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = [check_wigner(rng), check_harmonics(rng), check_clebsch_gordan(rng), check_descriptors(rng)]
    results += check_layers(rng)
    results.append(check_end_to_end(rng, poison=poison))
    results.append(check_gradients(rng))
    return results
