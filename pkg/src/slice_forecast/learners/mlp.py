"""Fully connected regressor trained with minibatch SGD or Adam.

ReLU hidden layers, linear output, mean-squared-error loss, Glorot-uniform
init, and early stopping against a time-ordered validation tail with
best-epoch weight restore. loss_and_grads is a pure function of the weights
so the analytic gradients can be checked against finite differences.
"""

from __future__ import annotations

import numpy as np

from .base import LearnerError, TrainedModel, flatten, register

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def init_weights(layer_sizes: list[int], rng: np.random.Generator) -> list:
    """[(W, b), ...] with W ~ U(+-sqrt(6/(fan_in+fan_out))), b = 0."""
    weights = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights.append((W, np.zeros(fan_out)))
    return weights


def forward(weights: list, X: np.ndarray) -> np.ndarray:
    h = X
    for W, b in weights[:-1]:
        h = np.maximum(h @ W + b, 0.0)
    W, b = weights[-1]
    return (h @ W + b).ravel()


def loss_and_grads(weights: list, X: np.ndarray, y: np.ndarray):
    """MSE loss and its gradients w.r.t. every W and b."""
    acts = [X]
    h = X
    for W, b in weights[:-1]:
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    W_out, b_out = weights[-1]
    preds = (h @ W_out + b_out).ravel()
    err = preds - y
    n = len(y)
    loss = float(np.mean(err * err))

    grads = [None] * len(weights)
    delta = (2.0 * err / n)[:, None]
    grads[-1] = (acts[-1].T @ delta, delta.sum(axis=0))
    back = delta @ W_out.T
    for layer in range(len(weights) - 2, -1, -1):
        back = back * (acts[layer + 1] > 0.0)
        W, _ = weights[layer]
        grads[layer] = (acts[layer].T @ back, back.sum(axis=0))
        if layer > 0:
            back = back @ W.T
    return loss, grads


class _Adam:
    def __init__(self, weights: list, lr: float) -> None:
        self.lr = lr
        self.t = 0
        self.m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in weights]
        self.v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in weights]

    def step(self, weights: list, grads: list) -> list:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        out = []
        for i, ((W, b), (gW, gb)) in enumerate(zip(weights, grads)):
            mW, mb = self.m[i]
            vW, vb = self.v[i]
            mW = ADAM_BETA1 * mW + (1 - ADAM_BETA1) * gW
            mb = ADAM_BETA1 * mb + (1 - ADAM_BETA1) * gb
            vW = ADAM_BETA2 * vW + (1 - ADAM_BETA2) * gW * gW
            vb = ADAM_BETA2 * vb + (1 - ADAM_BETA2) * gb * gb
            self.m[i] = (mW, mb)
            self.v[i] = (vW, vb)
            W = W - self.lr * (mW / c1) / (np.sqrt(vW / c2) + ADAM_EPS)
            b = b - self.lr * (mb / c1) / (np.sqrt(vb / c2) + ADAM_EPS)
            out.append((W, b))
        return out


class _Sgd:
    def __init__(self, weights: list, lr: float) -> None:
        self.lr = lr

    def step(self, weights: list, grads: list) -> list:
        return [(W - self.lr * gW, b - self.lr * gb)
                for (W, b), (gW, gb) in zip(weights, grads)]


def _copy(weights: list) -> list:
    return [(W.copy(), b.copy()) for W, b in weights]


def mlp_fit(train, hp, seed, valid=None):
    X = flatten(train.X)
    y = train.y.ravel()
    if valid is not None:
        Xv = flatten(valid.X)
        yv = valid.y.ravel()
    else:
        # time-ordered tail so early stopping never peeks ahead of training
        n_valid = max(1, int(round(0.1 * len(y))))
        if n_valid >= len(y):
            n_valid = len(y) - 1
        if n_valid < 1:
            raise LearnerError("need at least 2 windows to hold out validation")
        Xv, yv = X[-n_valid:], y[-n_valid:]
        X, y = X[:-n_valid], y[:-n_valid]

    rng = np.random.default_rng(seed)
    layer_sizes = [X.shape[1]] + [hp.hidden_size] * hp.num_layers + [1]
    weights = init_weights(layer_sizes, rng)
    if hp.optimizer == "adam":
        opt = _Adam(weights, hp.learning_rate)
    elif hp.optimizer == "sgd":
        opt = _Sgd(weights, hp.learning_rate)
    else:
        raise LearnerError(f"unknown optimizer {hp.optimizer!r}")

    best_weights = _copy(weights)
    best_loss = np.inf
    best_epoch = -1
    epochs_run = 0
    n = len(y)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is handled
        for epoch in range(hp.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, hp.batch_size):
                idx = perm[start:start + hp.batch_size]  # last partial batch kept
                loss, grads = loss_and_grads(weights, X[idx], y[idx])
                if not np.isfinite(loss):
                    raise LearnerError(
                        f"non-finite training loss at epoch {epoch}; "
                        f"try a smaller learning_rate than {hp.learning_rate}")
                weights = opt.step(weights, grads)
            epochs_run = epoch + 1
            valid_loss = float(np.mean((forward(weights, Xv) - yv) ** 2))
            if not np.isfinite(valid_loss):
                raise LearnerError(
                    f"non-finite validation loss at epoch {epoch}; "
                    f"try a smaller learning_rate than {hp.learning_rate}")
            if valid_loss < best_loss:
                best_loss = valid_loss
                best_weights = _copy(weights)
                best_epoch = epoch
            elif epoch - best_epoch >= hp.patience:
                break

    train_loss = float(np.mean((forward(best_weights, X) - y) ** 2))
    params = {"weights": best_weights, "layer_sizes": layer_sizes}
    meta = {"epochs_run": epochs_run, "best_epoch": best_epoch,
            "final_train_loss": train_loss,
            "final_valid_loss": float(best_loss) if np.isfinite(best_loss) else None}
    return params, meta


def mlp_predict(model: TrainedModel, window: np.ndarray) -> float:
    return float(forward(model.params["weights"], window.reshape(1, -1))[0])


register("mlp", mlp_fit, mlp_predict)
