"""L1 loss, Adam and the mini-batch training loop."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .descriptors import compute_descriptors
from .graph import build_hierarchy
from .nn.graph_inputs import GraphInputs, prepare_graph
from .nn.params import NetworkParameters
from .nn.segnn import param_reader


def l1_loss(pred, target):
    """Mean absolute difference over all components (a Var when ``pred`` is one)."""
    vp, vt = ad.value(pred), np.asarray(target, dtype=np.float64)
    if vp.shape != vt.shape:
        raise ValueError(f"shape mismatch: {vp.shape} vs {vt.shape}")
    return ad.mean_abs(ad.add(pred, -vt))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float = 3e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and state lengths differ")
    bad = ~np.isfinite(grads)
    if bad.any():
        raise FloatingPointError(f"non-finite gradient at {int(bad.sum())} entries (first index {int(np.flatnonzero(bad)[0])})")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grads
    v = beta2 * state.v + (1 - beta2) * grads**2
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 2
    max_epochs: int = 500
    patience: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")


@dataclass(frozen=True)
class Prepared:
    """Everything a forward pass needs for one sample, computed once."""

    graph: GraphInputs
    X: np.ndarray
    target: np.ndarray


def prepare(mesh, velocity, attr_lmax: int = 2, hierarchy=None) -> Prepared:
    hierarchy = hierarchy if hierarchy is not None else build_hierarchy(mesh)
    return Prepared(prepare_graph(mesh, hierarchy, attr_lmax), compute_descriptors(mesh).rows,
                    np.asarray(velocity, dtype=np.float64))


def split_indices(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """80:10:10 split of a shuffled index range; val and test get at least one each."""
    if n < 5:
        raise ValueError("need at least 5 samples for an 80:10:10 split")
    n_hold = max(1, int(round(0.1 * n)))
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[2 * n_hold :]), np.sort(perm[:n_hold]), np.sort(perm[n_hold : 2 * n_hold])


def sample_loss_and_grad(model, params: NetworkParameters, s: Prepared) -> tuple[float, np.ndarray]:
    tape = Tape()
    P, leaf = param_reader(params, tape)
    loss = l1_loss(model.forward(P, s.graph, s.X), s.target)
    return float(loss.value), tape.grad(loss, leaf)


def evaluate_loss(model, params: NetworkParameters, samples: Sequence[Prepared]) -> float:
    P, _ = param_reader(params)
    return float(np.mean([float(l1_loss(model.forward(P, s.graph, s.X), s.target)) for s in samples]))


@dataclass
class TrainResult:
    params: NetworkParameters
    history: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, tr, va in self.history:
            w.writerow([e, repr(tr), repr(va)])
        return buf.getvalue()


def train(model, params: NetworkParameters, train_set: Sequence[Prepared], val_set: Sequence[Prepared],
          config: TrainConfig = TrainConfig(),
          on_epoch: Callable[[int, float, float, NetworkParameters], None] | None = None) -> TrainResult:
    """Adam on summed per-sample L1 gradients; keeps the parameters with the lowest validation loss.

    Without a validation set the training loss, re-evaluated after each epoch's
    updates, fills the validation column and selects the parameters instead.
    The epoch-0 row of the history holds the losses at initialisation.
    """
    if len(train_set) == 0:
        raise ValueError("empty training split")
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros(len(params))
    vec = params.vector.copy()

    def losses(p):
        tr = evaluate_loss(model, p, train_set)
        return tr, (evaluate_loss(model, p, val_set) if len(val_set) else tr)

    tr0, va0 = losses(params)
    result = TrainResult(params, [(0, tr0, va0)], 0)
    best = va0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_set))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            g = np.zeros_like(vec)
            current = params.with_vector(vec)
            for i in order[start : start + config.batch_size]:
                loss, gi = sample_loss_and_grad(model, current, train_set[i])
                epoch_losses.append(loss)
                g += gi
            vec, state = adam_step(vec, g, state, config.learning_rate)
        current = params.with_vector(vec)
        train_loss = float(np.mean(epoch_losses))
        val_loss = evaluate_loss(model, current, val_set if len(val_set) else train_set)
        result.history.append((epoch, train_loss, val_loss))
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss, current)
        if val_loss < best:
            best, result.params, result.best_epoch = val_loss, current, epoch
        elif epoch - result.best_epoch >= config.patience:
            result.stopped_early = True
            break
    return result


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return np.array([v.mean()]) if len(v) else v
    return np.convolve(v, np.ones(window) / window, mode="valid")


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
