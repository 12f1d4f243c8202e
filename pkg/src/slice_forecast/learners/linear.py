"""Ridge regression on flattened windows, closed form with free intercept.

Centering the design and target makes the intercept unpenalized; the
coefficients come from an augmented least-squares system solved by SVD, which
stays well conditioned for any lambda >= 0.
"""

from __future__ import annotations

import numpy as np

from .base import LearnerError, TrainedModel, flatten, register


def ridge_solve(X: np.ndarray, y: np.ndarray, lam: float):
    """Return (coef, intercept) for min ||Xb + b0 - y||^2 + lam ||b||^2."""
    if lam < 0:
        raise LearnerError("ridge_lambda must be >= 0")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    n_feat = X.shape[1]
    if lam == 0.0:
        coef, _, rank, _ = np.linalg.lstsq(Xc, yc, rcond=None)
        if rank < n_feat:
            raise LearnerError(
                "singular system with ridge_lambda=0; set ridge_lambda > 0")
    else:
        A = np.vstack([Xc, np.sqrt(lam) * np.eye(n_feat)])
        b = np.concatenate([yc, np.zeros(n_feat)])
        coef, _, _, _ = np.linalg.lstsq(A, b, rcond=None)
    intercept = y_mean - float(x_mean @ coef)
    return coef, intercept


def ridge_fit(train, hp, seed, valid=None):
    X = flatten(train.X)
    y = train.y.ravel()
    coef, intercept = ridge_solve(X, y, hp.ridge_lambda)
    return {"coef": coef, "intercept": intercept}, {}


def ridge_predict(model: TrainedModel, window: np.ndarray) -> float:
    p = model.params
    return float(window.reshape(-1) @ p["coef"] + p["intercept"])


register("ridge", ridge_fit, ridge_predict)
