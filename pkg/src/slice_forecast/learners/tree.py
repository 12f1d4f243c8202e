"""CART regression tree: variance-minimizing binary splits on flattened windows.

Split search scans features in index order and thresholds ascending, keeping
the first strictly-better candidate, so rebuilding from the same data is
bit-exact. Candidate thresholds are midpoints of consecutive sorted unique
values.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .base import TrainedModel, flatten, register


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, value: float) -> None:
        self.feature: int = -1
        self.threshold: float = 0.0
        self.left: Optional["_Node"] = None
        self.right: Optional["_Node"] = None
        self.value = value

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _best_split(X: np.ndarray, y: np.ndarray, features: np.ndarray,
                min_leaf: int):
    """(feature, threshold) minimizing summed child SSE, or None.

    Vectorized across the candidate features; ties resolve to the lowest
    feature index, then the lowest threshold, by the flat argmin order.
    """
    n = len(y)
    Xf = X[:, features]
    order = np.argsort(Xf, axis=0, kind="stable")
    xs = np.take_along_axis(Xf, order, axis=0)
    ys = y[order]
    csum = np.cumsum(ys, axis=0)
    csq = np.cumsum(ys * ys, axis=0)
    total_sum, total_sq = csum[-1], csq[-1]

    counts = np.arange(1, n, dtype=float)[:, None]   # rows left of each cut
    ls, lq = csum[:-1], csq[:-1]
    sse = (lq - ls * ls / counts) + ((total_sq - lq)
                                     - (total_sum - ls) ** 2 / (n - counts))
    invalid = xs[1:] == xs[:-1]                      # no boundary between equals
    if min_leaf > 1:
        pos_bad = (counts < min_leaf) | (n - counts < min_leaf)
        invalid |= pos_bad
    sse[invalid] = np.inf
    # feature-major flat order: lowest feature wins, then lowest threshold
    flat = np.argmin(sse.T.ravel())
    best_sse = sse.T.ravel()[flat]
    if not np.isfinite(best_sse):
        return None
    f_idx, pos = divmod(int(flat), n - 1)
    threshold = (xs[pos, f_idx] + xs[pos + 1, f_idx]) / 2.0
    return float(best_sse), int(features[f_idx]), float(threshold)


def _grow(X: np.ndarray, y: np.ndarray, depth: int, hp, rng) -> _Node:
    node = _Node(float(y.mean()))
    if len(y) < 2 * hp.min_samples_leaf or len(y) < 2:
        return node
    if hp.max_depth is not None and depth >= hp.max_depth:
        return node
    if np.all(y == y[0]):
        return node
    n_features = X.shape[1]
    if rng is not None and hp.feature_frac < 1.0:
        size = max(1, int(np.ceil(hp.feature_frac * n_features)))
        features = np.sort(rng.choice(n_features, size=size, replace=False))
    else:
        features = np.arange(n_features)
    split = _best_split(X, y, features, hp.min_samples_leaf)
    if split is None:
        return node
    _, j, threshold = split
    mask = X[:, j] <= threshold
    node.feature = j
    node.threshold = threshold
    node.left = _grow(X[mask], y[mask], depth + 1, hp, rng)
    node.right = _grow(X[~mask], y[~mask], depth + 1, hp, rng)
    return node


def build_tree(X: np.ndarray, y: np.ndarray, hp, rng=None) -> _Node:
    return _grow(X, y, 0, hp, rng)


def tree_apply(node: _Node, q: np.ndarray) -> float:
    while not node.is_leaf:
        node = node.left if q[node.feature] <= node.threshold else node.right
    return node.value


def tree_fit(train, hp, seed, valid=None):
    X = flatten(train.X)
    y = train.y.ravel()
    root = build_tree(X, y, hp)
    return {"root": root}, {"n_leaves": count_leaves(root)}


def tree_predict(model: TrainedModel, window: np.ndarray) -> float:
    return tree_apply(model.params["root"], window.reshape(-1))


def count_leaves(node: _Node) -> int:
    if node.is_leaf:
        return 1
    return count_leaves(node.left) + count_leaves(node.right)


register("tree", tree_fit, tree_predict)
