"""K-nearest-neighbors regression on flattened windows."""

from __future__ import annotations

import numpy as np

from .base import LearnerError, TrainedModel, flatten, register


def knn_fit(train, hp, seed, valid=None):
    X = flatten(train.X)
    y = train.y.ravel().copy()
    if hp.k > X.shape[0]:
        raise LearnerError(f"k={hp.k} exceeds training size {X.shape[0]}")
    if hp.k < 1:
        raise LearnerError("k must be >= 1")
    params = {"k": hp.k, "train_x": X.copy(), "train_y": y}
    return params, {}


def knn_predict(model: TrainedModel, window: np.ndarray) -> float:
    p = model.params
    q = window.reshape(-1)
    d2 = ((p["train_x"] - q) ** 2).sum(axis=1)
    # stable sort: equidistant neighbors resolve to the lower training index
    order = np.argsort(d2, kind="stable")[: p["k"]]
    return float(p["train_y"][order].mean())


register("knn", knn_fit, knn_predict)
