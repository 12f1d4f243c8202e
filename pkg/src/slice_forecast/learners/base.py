"""Shared learner contract: fit(dataset, hp, seed) -> model, predict -> scalar.

Models consume scaled windows and emit target-scaled predictions; callers
inverse-scale at the evaluation or serving boundary. Every learner is
registered here so the tuner, CLI and service can dispatch by kind.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ..datasetgen import Scaler, WindowedDataset


class LearnerError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    # shared neural-training knobs (the tuned search space)
    batch_size: int = 16
    learning_rate: float = 0.01
    epochs: int = 50
    patience: int = 10
    optimizer: str = "adam"
    num_layers: int = 2
    hidden_size: int = 100
    # present in the search space for parity with recurrent models; none of
    # the in-scope learners consume it, but the tuner records it per trial
    bidirectional: bool = False
    # per-model extensions
    k: int = 5
    max_depth: Optional[int] = None
    min_samples_leaf: int = 1
    n_trees: int = 25
    feature_frac: float = 1.0
    bootstrap: bool = True
    ridge_lambda: float = 1.0

    def replace(self, **kwargs) -> "Hyperparams":
        return replace(self, **kwargs)


@dataclass
class TrainedModel:
    kind: str
    params: object
    hyperparams: Hyperparams
    seed: int
    feature_names: tuple[str, ...]
    window: int
    scaler: Optional[Scaler] = None
    target_channel: Optional[int] = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


FitFn = Callable[..., object]
PredictFn = Callable[[TrainedModel, np.ndarray], float]

_REGISTRY: dict[str, tuple[FitFn, PredictFn]] = {}


def register(kind: str, fit_fn: FitFn, predict_fn: PredictFn) -> None:
    _REGISTRY[kind] = (fit_fn, predict_fn)


def model_kinds() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def flatten(X: np.ndarray) -> np.ndarray:
    """(m, w, f) window tensor -> (m, w*f) matrix; learners are tabular."""
    return X.reshape(X.shape[0], -1)


def fit(kind: str, train: WindowedDataset, hp: Hyperparams, seed: int,
        scaler: Optional[Scaler] = None,
        valid: Optional[WindowedDataset] = None) -> TrainedModel:
    """Train a model of `kind`; wall time lands in metadata, not in files."""
    if kind not in _REGISTRY:
        raise LearnerError(f"unknown model kind {kind!r} (have {model_kinds()})")
    fit_fn, _ = _REGISTRY[kind]
    start = time.perf_counter()
    params, metadata = fit_fn(train, hp, seed, valid=valid)
    elapsed = time.perf_counter() - start
    metadata = dict(metadata)
    metadata["train_time_s"] = elapsed
    return TrainedModel(kind=kind, params=params, hyperparams=hp, seed=seed,
                        feature_names=train.feature_names, window=train.window,
                        scaler=scaler, target_channel=train.target_channel,
                        metadata=metadata)


def predict(model: TrainedModel, window: np.ndarray) -> float:
    """One-step-ahead prediction for a single (w, features) window."""
    window = np.asarray(window, dtype=float)
    if window.shape != (model.window, model.n_features):
        raise LearnerError(
            f"window shape {window.shape} does not match model "
            f"({model.window}, {model.n_features})")
    _, predict_fn = _REGISTRY[model.kind]
    return float(predict_fn(model, window))


def predict_batch(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    """Predictions for an (m, w, features) tensor."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 3 or X.shape[1:] != (model.window, model.n_features):
        raise LearnerError(
            f"tensor shape {X.shape} does not match model "
            f"(m, {model.window}, {model.n_features})")
    return np.array([predict(model, X[i]) for i in range(X.shape[0])])


def forecast_ms(model: TrainedModel, raw_window: np.ndarray) -> float:
    """Scale a raw metric window, predict, and inverse-scale to milliseconds.

    The serving layer and its differential tests share this single path.
    """
    if model.scaler is None:
        raise LearnerError("model carries no scaler; cannot accept raw windows")
    raw_window = np.asarray(raw_window, dtype=float)
    if raw_window.shape != (model.window, model.n_features):
        raise LearnerError(
            f"window shape {raw_window.shape} does not match model "
            f"({model.window}, {model.n_features})")
    scaler = model.scaler
    scaled = np.empty_like(raw_window)
    for j, name in enumerate(model.feature_names):
        if name in scaler.feature_names:
            i = scaler.feature_names.index(name)
            scaled[:, j] = (raw_window[:, j] - scaler.feature_mean[i]) / scaler.feature_std[i]
        else:
            # lagged-target channel: scaled with the target statistics
            scaled[:, j] = (raw_window[:, j] - scaler.target_mean) / scaler.target_std
    pred_scaled = predict(model, scaled)
    return float(scaler.inverse_target(pred_scaled))
