"""Velocity-field error metrics: NMAE, approximation error and mean cosine similarity."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

COS_EPS = 1e-12


class NormalizationError(ValueError):
    pass


def _pair(pred, truth):
    y = np.asarray(pred, dtype=np.float64)
    v = np.asarray(truth, dtype=np.float64)
    if y.shape != v.shape or y.ndim != 2 or y.shape[1] != 3:
        raise ValueError(f"expected matching (n, 3) fields, got {y.shape} and {v.shape}")
    return y, v


def nmae(preds: Sequence, truths: Sequence) -> np.ndarray:
    """Per-sample mean row error divided by the largest truth row norm of the whole set."""
    if len(preds) != len(truths) or len(preds) == 0:
        raise ValueError("need equally many, and at least one, predictions and truths")
    pairs = [_pair(y, v) for y, v in zip(preds, truths)]
    denom = max(float(np.linalg.norm(v, axis=1).max(initial=0.0)) for _, v in pairs)
    if denom <= 0:
        raise NormalizationError("all truth fields are zero")
    return np.array([np.linalg.norm(v - y, axis=1).mean() / denom for y, v in pairs])


def approximation_error(pred, truth) -> float:
    y, v = _pair(pred, truth)
    energy = float((v**2).sum())
    if energy == 0:
        raise NormalizationError("truth field has zero energy")
    return float(((v - y) ** 2).sum()) / energy


def cosine_rows(pred, truth) -> tuple[np.ndarray, int]:
    """Row cosines of the non-degenerate rows and the number of excluded rows."""
    y, v = _pair(pred, truth)
    ny, nv = np.linalg.norm(y, axis=1), np.linalg.norm(v, axis=1)
    keep = (ny >= COS_EPS) & (nv >= COS_EPS)
    if not keep.any():
        raise NormalizationError("every row has a near-zero vector")
    cos = (y[keep] * v[keep]).sum(axis=1) / (ny[keep] * nv[keep])
    return np.clip(cos, -1.0, 1.0), int((~keep).sum())


def mean_cosine(pred, truth) -> float:
    return float(cosine_rows(pred, truth)[0].mean())


@dataclass
class MetricReport:
    nmae: np.ndarray
    eps: np.ndarray
    cos: np.ndarray
    excluded: list[int] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)

    @classmethod
    def compute(cls, preds, truths, labels=None) -> "MetricReport":
        eps = [approximation_error(y, v) for y, v in zip(preds, truths)]
        cos, excl = zip(*[cosine_rows(y, v) for y, v in zip(preds, truths)])
        labels = list(labels) if labels is not None else [str(i) for i in range(len(preds))]
        return cls(nmae(preds, truths), np.array(eps), np.array([c.mean() for c in cos]), list(excl), labels)

    def summary(self) -> dict[str, tuple[float, float]]:
        return {k: (float(np.mean(x)), float(np.std(x))) for k, x in
                (("nmae", self.nmae), ("eps", self.eps), ("cos", self.cos))}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample", "nmae", "eps", "cos", "cos_excluded_rows"])
        for row in zip(self.labels, self.nmae, self.eps, self.cos, self.excluded):
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2])), repr(float(row[3])), row[4]])
        return buf.getvalue()

    def table(self, name: str = "model") -> str:
        s = self.summary()
        head = f"{'Model':<12} {'NMAE [%]':>14} {'eps [%]':>14} {'cos':>14}"
        row = (f"{name:<12} {100 * s['nmae'][0]:>6.1f} ± {100 * s['nmae'][1]:<5.1f}"
               f" {100 * s['eps'][0]:>6.1f} ± {100 * s['eps'][1]:<5.1f}"
               f" {s['cos'][0]:>6.2f} ± {s['cos'][1]:<5.2f}")
        return head + "\n" + row + "\n"
