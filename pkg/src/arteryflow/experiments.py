"""Model factory plus the two comparison experiments: rotated test sets and training-set size."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metrics import MetricReport
from .nn.baseline import BaselineConfig, get_baseline
from .nn.segnn import SegnnConfig, get_model, param_reader
from .so3 import Rotation
from .synthetic import Sample, gen_dataset, rigidly_moved
from .train import Prepared, TrainConfig, TrainResult, prepare, train

MODELS = ("segnn", "baseline")

# small networks that train in minutes on one core
SMALL_SEGNN = SegnnConfig(hidden="8x0e + 4x1o + 2x2e", layers_per_scale=1)
SMALL_BASELINE = BaselineConfig(width=32, layers_per_scale=1)


def build_model(kind: str, config: dict | None = None):
    """Return ``(model, attr_lmax)`` for a model name and an optional config dict."""
    if kind == "segnn":
        cfg = SegnnConfig(**config) if config else SMALL_SEGNN
        return get_model(cfg), cfg.attr_lmax
    if kind == "baseline":
        cfg = BaselineConfig(**config) if config else SMALL_BASELINE
        return get_baseline(cfg), 0
    raise ValueError(f"unknown model {kind!r}; choose from {MODELS}")


def predict(model, params, s: Prepared) -> np.ndarray:
    P, _ = param_reader(params)
    return np.asarray(model.forward(P, s.graph, s.X))


def evaluate(model, params, prepared: list[Prepared], labels=None) -> MetricReport:
    preds = [predict(model, params, s) for s in prepared]
    return MetricReport.compute(preds, [s.target for s in prepared], labels)


def random_motions(samples: list[Sample], seed: int, translation_scale: float = 10.0) -> list[Sample]:
    rng = np.random.default_rng([seed, 2])
    out = []
    for s in samples:
        R = Rotation.random(rng).matrix
        out.append(rigidly_moved(s, R, rng.uniform(-translation_scale, translation_scale, 3)))
    return out


def epochs_for_steps(steps: int, n_train: int, batch_size: int) -> int:
    """Epoch count giving (at least) ``steps`` optimiser updates."""
    return max(1, math.ceil(steps / math.ceil(n_train / batch_size)))


@dataclass
class ContrastResult:
    eps: dict[tuple[str, str], float]  # (model, "canonical" | "rotated") -> mean eps
    results: dict[str, TrainResult]

    def ratio(self, model: str) -> float:
        return self.eps[(model, "rotated")] / self.eps[(model, "canonical")]


def rotation_contrast(train: list[Sample], val: list[Sample], test: list[Sample], epochs: int,
                      seed: int = 0, models=MODELS) -> ContrastResult:
    """Train on the given (canonical) samples, then score the test set as is and rigidly moved."""
    moved = random_motions(test, seed)
    eps, results = {}, {}
    for kind in models:
        model, lmax = build_model(kind)
        prep = lambda ss: [prepare(s.mesh, s.velocity, lmax) for s in ss]
        res = fit(model, prep(train), prep(val), epochs, seed)
        results[kind] = res
        eps[(kind, "canonical")] = float(evaluate(model, res.params, prep(test)).eps.mean())
        eps[(kind, "rotated")] = float(evaluate(model, res.params, prep(moved)).eps.mean())
    return ContrastResult(eps, results)


def fit(model, train_set, val_set, epochs: int, seed: int, lr: float = 3e-4) -> TrainResult:
    params = model.init_params(seed)
    cfg = TrainConfig(learning_rate=lr, max_epochs=epochs, patience=epochs, seed=seed)
    return train(model, params, train_set, val_set, cfg)


@dataclass
class EfficiencyResult:
    rows: list[tuple[str, int, int, float]]  # model, n_train, seed, mean test eps

    def median(self, model: str, n: int) -> float:
        return float(np.median([e for m, k, _, e in self.rows if m == model and k == n]))

    def curve(self, model: str, sizes) -> np.ndarray:
        return np.array([self.median(model, n) for n in sizes])

    def to_csv(self) -> str:
        lines = ["model,n_train,seed,eps"]
        lines += [f"{m},{n},{s},{e!r}" for m, n, s, e in self.rows]
        return "\n".join(lines) + "\n"


def data_efficiency(sizes=(2, 4, 8, 16), seeds=(0, 1, 2), epochs: int = 100, data_seed: int = 1,
                    rotate: bool = False, models=MODELS, progress=None, lr: float = 1e-3,
                    steps: int | None = None) -> EfficiencyResult:
    """Train every model on ``n`` tubes of a shared pool for each size and seed.

    Each run trains for ``epochs`` epochs and keeps its best-validation
    parameters, so larger sets also receive proportionally more updates.
    Passing ``steps`` instead fixes the number of optimiser updates per run.
    For one seed the subsets are nested (each size extends the previous one).
    Validation (2 tubes) and test (4 tubes) sets are fixed across all runs.
    """
    pool = gen_dataset(max(sizes) + 6, seed=data_seed, random_rotation=rotate)
    val, test, train_pool = pool[:2], pool[2:6], pool[6:]
    rows = []
    for kind in models:
        model, lmax = build_model(kind)
        prep = lambda ss: [prepare(s.mesh, s.velocity, lmax) for s in ss]
        p_val, p_test, p_pool = prep(val), prep(test), prep(train_pool)
        for n in sizes:
            for seed in seeds:
                order = np.random.default_rng([data_seed, seed]).permutation(len(p_pool))[:n]
                subset = [p_pool[i] for i in sorted(order)]
                n_epochs = epochs if steps is None else epochs_for_steps(steps, n, 2)
                res = fit(model, subset, p_val, n_epochs, seed, lr)
                e = float(evaluate(model, res.params, p_test).eps.mean())
                rows.append((kind, n, seed, e))
                if progress:
                    progress(kind, n, seed, e)
    return EfficiencyResult(rows)


def non_increasing(curve, window: int = 2, slack: float = 0.0) -> bool:
    """Moving-average (window ``window``) curve never rises by more than ``slack`` (relative)."""
    c = np.convolve(np.asarray(curve, dtype=np.float64), np.ones(window) / window, mode="valid")
    return bool(np.all(c[1:] <= c[:-1] * (1 + slack)))
