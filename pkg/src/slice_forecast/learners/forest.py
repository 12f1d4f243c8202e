"""Random forest: bagged CART trees with per-split feature subsampling.

Tree i draws from numpy Generator(seed + i), so a forest built serially or
across workers is identical; a 1-tree forest without bootstrap and with all
features reproduces the plain tree bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .base import LearnerError, TrainedModel, flatten, register
from .tree import build_tree, tree_apply


def forest_fit(train, hp, seed, valid=None):
    if hp.n_trees < 1:
        raise LearnerError("n_trees must be >= 1")
    if not 0.0 < hp.feature_frac <= 1.0:
        raise LearnerError("feature_frac must be in (0, 1]")
    X = flatten(train.X)
    y = train.y.ravel()
    n = X.shape[0]
    roots = []
    for i in range(hp.n_trees):
        rng = np.random.default_rng(seed + i)
        if hp.bootstrap:
            idx = rng.integers(0, n, size=n)
            Xi, yi = X[idx], y[idx]
        else:
            Xi, yi = X, y
        roots.append(build_tree(Xi, yi, hp, rng))
    return {"roots": roots}, {"n_trees": hp.n_trees}


def forest_predict(model: TrainedModel, window: np.ndarray) -> float:
    q = window.reshape(-1)
    preds = [tree_apply(root, q) for root in model.params["roots"]]
    return float(np.mean(preds))


register("forest", forest_fit, forest_predict)
