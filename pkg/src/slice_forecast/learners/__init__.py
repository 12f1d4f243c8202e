"""One-step-ahead regressors sharing a single fit/predict contract."""

from .base import (Hyperparams, LearnerError, TrainedModel, fit, flatten,
                   forecast_ms, model_kinds, predict, predict_batch)
from . import baseline, forest, knn, linear, mlp, tree  # noqa: F401  (register kinds)

__all__ = [
    "Hyperparams", "LearnerError", "TrainedModel", "fit", "flatten",
    "forecast_ms", "model_kinds", "predict", "predict_batch",
]
