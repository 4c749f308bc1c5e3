"""From-scratch decision tree with a gain-ratio split criterion.

Binary numeric splits at midpoints between distinct sorted values. When a node
is impure and any valid split exists, the best gain-ratio split is taken even
at zero gain (XOR-style data must still separate), so training accuracy on
consistent data reaches 100% with unlimited depth. Ties break toward the
lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    proba1: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"proba1": self.proba1}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TreeNode":
        if "proba1" in payload:
            return cls(proba1=float(payload["proba1"]))
        return cls(
            feature=int(payload["feature"]),
            threshold=float(payload["threshold"]),
            left=cls.from_dict(payload["left"]),
            right=cls.from_dict(payload["right"]),
        )


def _entropy(n1: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Binary entropy of counts, elementwise; 0 log 0 = 0."""
    n = np.asarray(n, dtype=np.float64)
    p = np.divide(n1, n, out=np.zeros_like(n, dtype=np.float64), where=n > 0)
    out = np.zeros_like(p)
    for q in (p, 1.0 - p):
        mask = q > 0
        out[mask] -= q[mask] * np.log2(q[mask])
    return out


def _best_gain_ratio_split(X: np.ndarray, y: np.ndarray):
    """Best (ratio, feature, threshold) over all candidate splits, or None."""
    n = len(y)
    total1 = y.sum()
    parent_entropy = _entropy(np.array([total1]), np.array([n]))[0]
    best = None
    for j in range(X.shape[1]):
        xj = X[:, j]
        order = np.argsort(xj, kind="mergesort")
        xs, ys = xj[order], y[order]
        boundary = np.nonzero(xs[1:] != xs[:-1])[0] + 1  # split before these positions
        if len(boundary) == 0:
            continue
        prefix1 = np.cumsum(ys)
        n_left = boundary.astype(np.float64)
        n1_left = prefix1[boundary - 1].astype(np.float64)
        n_right = n - n_left
        n1_right = total1 - n1_left
        child = (n_left / n) * _entropy(n1_left, n_left) + (n_right / n) * _entropy(n1_right, n_right)
        gain = parent_entropy - child
        pl, pr = n_left / n, n_right / n
        split_info = -(pl * np.log2(pl) + pr * np.log2(pr))
        ratio = gain / split_info
        i = int(np.argmax(ratio))
        candidate = (float(ratio[i]), -j, -float((xs[boundary[i] - 1] + xs[boundary[i]]) / 2.0))
        if best is None or candidate > best:
            best = candidate
    if best is None:
        return None
    ratio, neg_j, neg_thr = best
    return ratio, -neg_j, -neg_thr


class GainRatioTree:
    def __init__(self, min_samples_split: int = 2, max_depth: Optional[int] = None):
        self.min_samples_split = min_samples_split
        self.max_depth = max_depth
        self.root: Optional[TreeNode] = None

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GainRatioTree":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.root = self._build(X, y, depth=0)
        return self

    def _build(self, X: np.ndarray, y: np.ndarray, depth: int) -> TreeNode:
        proba1 = float(y.mean()) if len(y) else 0.0
        if (
            len(y) < self.min_samples_split
            or proba1 in (0.0, 1.0)
            or (self.max_depth is not None and depth >= self.max_depth)
        ):
            return TreeNode(proba1=proba1)
        split = _best_gain_ratio_split(X, y)
        if split is None:
            return TreeNode(proba1=proba1)
        _, feature, threshold = split
        mask = X[:, feature] <= threshold
        return TreeNode(
            feature=feature,
            threshold=threshold,
            left=self._build(X[mask], y[mask], depth + 1),
            right=self._build(X[~mask], y[~mask], depth + 1),
            proba1=proba1,
        )

    def predict_proba1(self, X: np.ndarray) -> np.ndarray:
        return apply_tree(self.root, np.asarray(X, dtype=np.float64))


def apply_tree(root: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X), dtype=np.float64)
    stack = [(root, np.arange(len(X)))]
    while stack:
        node, idx = stack.pop()
        if len(idx) == 0:
            continue
        if node.is_leaf:
            out[idx] = node.proba1
            continue
        mask = X[idx, node.feature] <= node.threshold
        stack.append((node.left, idx[mask]))
        stack.append((node.right, idx[~mask]))
    return out
