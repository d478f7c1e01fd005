"""Threshold sweeps, ROC/PR summaries, and threshold selection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

TAU_GRID = np.linspace(0.0, 0.5, 100)
CONTAMINATION_GRID = np.linspace(0.005, 0.5, 100)


class UndefinedMetricsError(ValueError):
    """Only one truth class present, so ROC/PR summaries do not exist."""


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class SweepResult:
    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray
    auc: float | None
    ap: float | None

    @property
    def tpr(self) -> np.ndarray:
        return _ratio(self.tp, self.tp + self.fn, 0.0)

    @property
    def fpr(self) -> np.ndarray:
        return _ratio(self.fp, self.fp + self.tn, 0.0)

    @property
    def precision(self) -> np.ndarray:
        return _ratio(self.tp, self.tp + self.fp, 1.0)

    @property
    def recall(self) -> np.ndarray:
        return self.tpr

    @property
    def f1(self) -> np.ndarray:
        return _ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn, 0.0)

    @property
    def accuracy(self) -> np.ndarray:
        return (self.tp + self.tn) / (self.tp + self.fp + self.tn + self.fn)

    @property
    def defined(self) -> bool:
        return self.auc is not None


def _ratio(num, den, empty: float) -> np.ndarray:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.full(num.shape, empty)
    np.divide(num, den, out=out, where=den > 0)
    return out


def confusion(predicted: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, ...]:
    """Integer confusion counts for each row of a (thresholds, steps) prediction matrix."""
    predicted = np.atleast_2d(np.asarray(predicted, dtype=bool))
    truth = np.asarray(truth, dtype=bool)
    tp = (predicted & truth).sum(axis=1)
    fp = (predicted & ~truth).sum(axis=1)
    fn = (~predicted & truth).sum(axis=1)
    tn = (~predicted & ~truth).sum(axis=1)
    return tp, fp, tn, fn


def roc_auc(tpr: np.ndarray, fpr: np.ndarray) -> float:
    x = np.concatenate([[0.0], fpr, [1.0]])
    y = np.concatenate([[0.0], tpr, [1.0]])
    order = np.lexsort((y, x))
    return float(np.trapezoid(y[order], x[order]) if hasattr(np, "trapezoid") else np.trapz(y[order], x[order]))


def average_precision(precision: np.ndarray, recall: np.ndarray) -> float:
    """Σ (R_k − R_{k−1}) P_k over operating points ordered by increasing recall."""
    order = np.lexsort((-precision, recall))
    r = np.concatenate([[0.0], recall[order]])
    p = precision[order]
    return float(np.sum(np.diff(r) * p))


def sweep_predictions(predicted: np.ndarray, truth, thresholds) -> SweepResult:
    truth = np.asarray(truth, dtype=bool)
    tp, fp, tn, fn = confusion(predicted, truth)
    res = SweepResult(np.asarray(thresholds, dtype=float), tp, fp, tn, fn, None, None)
    if truth.all() or not truth.any():
        return res
    return SweepResult(res.thresholds, tp, fp, tn, fn,
                       roc_auc(res.tpr, res.fpr), average_precision(res.precision, res.recall))


def sweep(scores, truth, thresholds=TAU_GRID) -> SweepResult:
    """Classify ``score >= threshold`` at every threshold and summarize."""
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if len(scores) != len(truth):
        raise ValueError("scores and truth differ in length")
    thresholds = np.asarray(thresholds, dtype=float)
    return sweep_predictions(scores[None, :] >= thresholds[:, None], truth, thresholds)


def rank_auc(scores, truth) -> float:
    """Mann–Whitney estimate of AUC with ties counted as one half."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    pos, neg = scores[truth], scores[~truth]
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetricsError("AUC needs both classes")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (len(pos) * len(neg)))


def select_threshold(train: Sequence[SweepResult]) -> tuple[float, float]:
    """Threshold with the best mean F1 over training sweeps; ties go to the smaller one.

    Every sweep must share the same threshold grid. Returns (threshold, mean F1).
    """
    if not train:
        raise SelectionError("no training traces")
    if not any(s.defined for s in train):
        raise SelectionError("training traces contain a single class only")
    grid = train[0].thresholds
    for s in train[1:]:
        if not np.array_equal(s.thresholds, grid):
            raise SelectionError("training sweeps use different grids")
    mean_f1 = np.mean([s.f1 for s in train], axis=0)
    best = float(mean_f1.max())
    candidates = np.flatnonzero(mean_f1 == best)
    i = candidates[np.argmin(grid[candidates])]
    return float(grid[i]), best
