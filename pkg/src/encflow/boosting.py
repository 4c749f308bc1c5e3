"""Gradient-boosted trees with second-order (Newton) updates and logistic loss.

Exact greedy splits, no subsampling. Defaults follow the common boosted-tree
reference settings: 100 rounds, depth 6, learning rate 0.3, L2 leaf penalty
1.0, minimum child hessian weight 1.0, base score 0.5. Deterministic: split
ties break toward the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .trees import TreeNode, apply_tree

_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class BoostParams:
    rounds: int = 100
    max_depth: int = 6
    learning_rate: float = 0.3
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    base_score: float = 0.5


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _best_newton_split(X: np.ndarray, g: np.ndarray, h: np.ndarray, reg_lambda: float, min_child_weight: float):
    G, H = g.sum(), h.sum()
    parent = G * G / (H + reg_lambda)
    best = None
    for j in range(X.shape[1]):
        xj = X[:, j]
        order = np.argsort(xj, kind="mergesort")
        xs = xj[order]
        boundary = np.nonzero(xs[1:] != xs[:-1])[0] + 1
        if len(boundary) == 0:
            continue
        gl = np.cumsum(g[order])[boundary - 1]
        hl = np.cumsum(h[order])[boundary - 1]
        gr, hr = G - gl, H - hl
        valid = (hl >= min_child_weight) & (hr >= min_child_weight)
        if not valid.any():
            continue
        gain = 0.5 * (gl**2 / (hl + reg_lambda) + gr**2 / (hr + reg_lambda) - parent)
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] <= _MIN_GAIN:
            continue
        threshold = (xs[boundary[i] - 1] + xs[boundary[i]]) / 2.0
        candidate = (float(gain[i]), -j, -float(threshold))
        if best is None or candidate > best:
            best = candidate
    if best is None:
        return None
    gain, neg_j, neg_thr = best
    return -neg_j, -neg_thr


def _build_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, depth: int, params: BoostParams) -> TreeNode:
    if depth >= params.max_depth:
        split = None
    else:
        split = _best_newton_split(X, g, h, params.reg_lambda, params.min_child_weight)
    if split is None:
        weight = -g.sum() / (h.sum() + params.reg_lambda)
        return TreeNode(proba1=float(weight))  # proba1 slot stores the leaf weight
    feature, threshold = split
    mask = X[:, feature] <= threshold
    return TreeNode(
        feature=feature,
        threshold=threshold,
        left=_build_tree(X[mask], g[mask], h[mask], depth + 1, params),
        right=_build_tree(X[~mask], g[~mask], h[~mask], depth + 1, params),
    )


class BoostedTrees:
    def __init__(self, params: Optional[BoostParams] = None):
        self.params = params or BoostParams()
        self.trees: list = []
        self.base_margin = 0.0

    def fit(self, X: np.ndarray, y: np.ndarray) -> "BoostedTrees":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        p = self.params
        self.base_margin = float(np.log(p.base_score / (1.0 - p.base_score)))
        margin = np.full(len(y), self.base_margin)
        self.trees = []
        for _ in range(p.rounds):
            prob = _sigmoid(margin)
            g = prob - y
            h = prob * (1.0 - prob)
            tree = _build_tree(X, g, h, 0, p)
            self.trees.append(tree)
            margin = margin + p.learning_rate * apply_tree(tree, X)
        return self

    def margin(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.full(len(X), self.base_margin)
        for tree in self.trees:
            out += self.params.learning_rate * apply_tree(tree, X)
        return out

    def predict_proba1(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.margin(X))


def log_loss(y: np.ndarray, proba1: np.ndarray) -> float:
    eps = 1e-12
    p = np.clip(np.asarray(proba1, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(y, dtype=np.float64)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())
