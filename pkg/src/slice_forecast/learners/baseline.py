"""Persistence baseline: repeat the last observed target value.

Needs a dataset built with the lagged target included as a window channel;
anything a real model must beat should at least beat this.
"""

from __future__ import annotations

import numpy as np

from .base import LearnerError, TrainedModel, register


def persistence_fit(train, hp, seed, valid=None):
    if train.target_channel is None:
        raise LearnerError(
            "lagged target unavailable: build the dataset with include_lagged_target")
    return {"target_channel": train.target_channel}, {}


def persistence_predict(model: TrainedModel, window: np.ndarray) -> float:
    channel = model.params["target_channel"]
    return float(window[-1, channel])


register("persistence", persistence_fit, persistence_predict)
