"""Isolation Forest over (belief, action) rows."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .trace import TraceStep

EULER_GAMMA = 0.5772156649015329


def average_path_length(n) -> np.ndarray:
    """Expected path length of an unsuccessful BST search among ``n`` points."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    big = n > 2
    out[n == 2] = 1.0
    m = n[big]
    out[big] = 2.0 * (np.log(m - 1.0) + EULER_GAMMA) - 2.0 * (m - 1.0) / m
    return out


@dataclass(frozen=True)
class _Tree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray


def _grow(X: np.ndarray, rng: np.random.Generator, height_limit: int) -> _Tree:
    feature, threshold, left, right, size = [], [], [], [], []

    def new_node() -> int:
        for arr, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (size, 0)):
            arr.append(v)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(X)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        size[node] = len(idx)
        if depth >= height_limit or len(idx) <= 1:
            continue
        sub = X[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        varying = np.flatnonzero(hi > lo)
        if varying.size == 0:
            continue
        q = int(rng.choice(varying))
        split = rng.uniform(lo[q], hi[q])
        go_left = sub[:, q] < split
        feature[node], threshold[node] = q, split
        l_node, r_node = new_node(), new_node()
        left[node], right[node] = l_node, r_node
        stack.append((l_node, idx[go_left], depth + 1))
        stack.append((r_node, idx[~go_left], depth + 1))
    return _Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(size))


def _path_lengths(tree: _Tree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(len(X), dtype=int)
    depth = np.zeros(len(X))
    active = tree.feature[node] >= 0
    while active.any():
        rows = np.flatnonzero(active)
        f = tree.feature[node[rows]]
        goes_left = X[rows, f] < tree.threshold[node[rows]]
        node[rows] = np.where(goes_left, tree.left[node[rows]], tree.right[node[rows]])
        depth[rows] += 1
        active = tree.feature[node] >= 0
    return depth + average_path_length(tree.size[node])


@dataclass(frozen=True)
class IsolationForest:
    trees: tuple[_Tree, ...]
    subsample_size: int

    @property
    def height_limit(self) -> int:
        return int(math.ceil(math.log2(max(self.subsample_size, 2))))

    def score(self, rows) -> np.ndarray:
        """Anomaly score 2^(−E[h(x)]/c(ψ)); near 1 is anomalous, near 0.5 or below is normal."""
        X = np.asarray(rows, dtype=float)
        mean_path = np.mean([_path_lengths(t, X) for t in self.trees], axis=0)
        norm = float(average_path_length(self.subsample_size))
        if norm == 0.0:
            return np.full(len(X), 0.5)
        return 2.0 ** (-mean_path / norm)


def fit(rows, n_trees: int = 100, subsample_size: int = 256, seed: int = 0) -> IsolationForest:
    X = np.asarray(rows, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("isolation forest needs a non-empty 2-d feature matrix")
    rng = np.random.default_rng(seed)
    psi = min(subsample_size, len(X))
    height = int(math.ceil(math.log2(max(psi, 2))))
    trees = tuple(
        _grow(X[rng.choice(len(X), size=psi, replace=False)], rng, height) for _ in range(n_trees)
    )
    return IsolationForest(trees, psi)


def detect(forest: IsolationForest, rows, contamination: float) -> np.ndarray:
    """Flag the ⌈contamination·n⌉ highest-scoring rows (ties broken by row order)."""
    if not 0.0 < contamination <= 0.5:
        raise ValueError("contamination must lie in (0, 0.5]")
    scores = forest.score(rows)
    k = min(len(scores), max(1, math.ceil(contamination * len(scores) - 1e-12)))
    order = np.argsort(-scores, kind="stable")
    flags = np.zeros(len(scores), dtype=bool)
    flags[order[:k]] = True
    return flags


def feature_rows(steps: Sequence[TraceStep], n_actions: int, names: Sequence[str] | None = None) -> np.ndarray:
    """Belief probabilities followed by the action scaled to [0, 1]."""
    names = tuple(names or steps[0].belief)
    scale = max(n_actions - 1, 1)
    return np.array([[s.belief[n] for n in names] + [s.action / scale] for s in steps], dtype=float)
