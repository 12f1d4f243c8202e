"""Categorical tree-structured Parzen estimator over a finite search space.

Every dimension is a finite ordered value set, so the good/bad densities are
smoothed categorical counts: after a uniform startup phase the suggester
splits past trials at the gamma-quantile of their objectives, draws
candidates from the good-trial density l(x), and keeps the candidate with the
largest product of l(x)/g(x) across dimensions.
"""

from __future__ import annotations

import csv
import math
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .datasetgen import Scaler, WindowedDataset
from .evaluation import mae as _mae
from .evaluation import mape as _mape
from .learners import Hyperparams, LearnerError, fit, predict_batch

SearchSpace = dict[str, tuple]


class TuningError(ValueError):
    pass


@dataclass
class TrialResult:
    number: int
    assignment: dict
    objective: Optional[float]      # None when the trial failed
    train_time_s: float
    seed: int
    status: str                     # "ok" | "failed"
    note: str = ""

    @property
    def hyperparams(self) -> Hyperparams:
        return hyperparams_from_assignment(self.assignment)


@dataclass
class StudyResult:
    best: TrialResult
    trials: list[TrialResult]
    space: SearchSpace
    seed: int
    model_kind: str = ""
    objective_name: str = ""

    def transcript(self) -> list[tuple]:
        """Deterministic study record (wall times excluded on purpose)."""
        return [(t.number, tuple(sorted(t.assignment.items())), t.objective,
                 t.status) for t in self.trials]


# Table-style space: shared training knobs plus per-model extensions.
_SHARED_DIMS: SearchSpace = {
    "batch_size": (8, 16, 32),
    "learning_rate": (0.1, 0.01, 0.001),
    "epochs": (20, 50, 100),
    "patience": (5, 10, 50),
    "optimizer": ("adam", "sgd"),
    "num_layers": (1, 2, 3, 4, 5),
    "hidden_size": (50, 100, 200),
    "bidirectional": (True, False),
}

_MODEL_DIMS: dict[str, SearchSpace] = {
    "mlp": dict(_SHARED_DIMS),
    "knn": {"k": (1, 3, 5, 10, 25)},
    "tree": {"max_depth": (3, 5, 10, 20, None),
             "min_samples_leaf": (1, 2, 5, 10)},
    "forest": {"n_trees": (10, 25, 50),
               "feature_frac": (0.3, 0.6, 1.0),
               "max_depth": (5, 10, 20, None),
               "min_samples_leaf": (1, 2, 5)},
    "ridge": {"ridge_lambda": (0.01, 0.1, 1.0, 10.0)},
}


def default_space(model_kind: str) -> SearchSpace:
    if model_kind not in _MODEL_DIMS:
        raise TuningError(f"no default search space for {model_kind!r}")
    return dict(_MODEL_DIMS[model_kind])


def hyperparams_from_assignment(assignment: dict) -> Hyperparams:
    known = {k: v for k, v in assignment.items() if hasattr(Hyperparams(), k)}
    return Hyperparams(**known)


def validate_member(space: SearchSpace, assignment: dict) -> None:
    for name, value in assignment.items():
        if name not in space:
            raise TuningError(f"dimension {name!r} not in the search space")
        if value not in space[name]:
            raise TuningError(f"value {value!r} not in dimension {name!r}")


def tpe_suggest(history: Sequence[TrialResult], space: SearchSpace,
                gamma: float = 0.25, rng: Optional[random.Random] = None,
                n_startup: int = 10, n_candidates: int = 24) -> dict:
    """Suggest one assignment; uniform during startup, density ratio after."""
    if not space or any(len(v) == 0 for v in space.values()):
        raise TuningError("empty search space")
    if not 0.0 < gamma < 1.0:
        raise TuningError("gamma must be in (0, 1)")
    rng = rng or random.Random()
    names = sorted(space)

    scored = [t for t in history if t.status == "ok" and t.objective is not None]
    if len(scored) < n_startup:
        return {name: space[name][rng.randrange(len(space[name]))] for name in names}

    scored.sort(key=lambda t: (t.objective, t.number))
    n_good = max(1, math.ceil(gamma * len(scored)))
    good, bad = scored[:n_good], scored[n_good:]

    def density(trials, name):
        values = space[name]
        counts = {v: 1 for v in values}  # add-one smoothing
        for t in trials:
            v = t.assignment.get(name)
            if v in counts:
                counts[v] += 1
        total = sum(counts.values())
        return {v: counts[v] / total for v in values}

    l_dens = {name: density(good, name) for name in names}
    g_dens = {name: density(bad, name) for name in names}

    best_candidate, best_score = None, -math.inf
    for _ in range(n_candidates):
        candidate = {}
        for name in names:
            values = space[name]
            weights = [l_dens[name][v] for v in values]
            r = rng.random() * sum(weights)
            acc = 0.0
            pick = values[-1]
            for v, w in zip(values, weights):
                acc += w
                if r < acc:
                    pick = v
                    break
            candidate[name] = pick
        score = 0.0
        for name in names:
            score += math.log(l_dens[name][candidate[name]]) \
                - math.log(g_dens[name][candidate[name]])
        if score > best_score:  # ties keep the first-drawn candidate
            best_candidate, best_score = candidate, score
    return best_candidate


def optimize(objective_fn: Callable[[dict], float], space: SearchSpace,
             n_trials: int, seed: int, gamma: float = 0.25,
             n_startup: int = 10, n_candidates: int = 24,
             suggest: str = "tpe") -> tuple[TrialResult, list[TrialResult]]:
    """Run a study against an arbitrary objective; failures are recorded."""
    if n_trials < 1:
        raise TuningError("n_trials must be >= 1")
    rng = random.Random(seed)
    trials: list[TrialResult] = []
    for number in range(n_trials):
        if suggest == "random":
            names = sorted(space)
            assignment = {n: space[n][rng.randrange(len(space[n]))] for n in names}
        else:
            assignment = tpe_suggest(trials, space, gamma, rng,
                                     n_startup=n_startup, n_candidates=n_candidates)
        validate_member(space, assignment)
        trial_seed = (seed * 1_000_003 + number) % (2 ** 31)
        start = time.perf_counter()
        try:
            value = float(objective_fn(assignment))
            status, note = "ok", ""
            if not math.isfinite(value):
                value, status, note = None, "failed", "non-finite objective"
        except (LearnerError, FloatingPointError, ValueError) as exc:
            value, status, note = None, "failed", str(exc)
        trials.append(TrialResult(number, assignment, value,
                                  time.perf_counter() - start, trial_seed,
                                  status, note))
    scored = [t for t in trials if t.status == "ok"]
    if not scored:
        raise TuningError("all trials failed")
    best = min(scored, key=lambda t: (t.objective, t.number))
    return best, trials


def split_validation_tail(train: WindowedDataset,
                          frac: float = 0.1) -> tuple[WindowedDataset, WindowedDataset]:
    """Hold out the last `frac` of the train windows, time ordered."""
    m = train.n_windows
    n_valid = max(1, int(round(frac * m)))
    if n_valid >= m:
        raise TuningError("not enough windows to hold out a validation tail")
    cut = m - n_valid

    def slice_ds(lo, hi, tag):
        return WindowedDataset(train.X[lo:hi], train.y[lo:hi], train.window,
                               train.stride, train.feature_names,
                               provenance=train.provenance, split_tag=tag,
                               target_channel=train.target_channel)
    return slice_ds(0, cut, train.split_tag), slice_ds(cut, m, train.split_tag + ":valid")


def run_study(train: WindowedDataset, model_kind: str, n_trials: int, seed: int,
              scaler: Optional[Scaler] = None, objective: str = "mape",
              space: Optional[SearchSpace] = None, gamma: float = 0.25,
              n_startup: int = 10, n_candidates: int = 24) -> StudyResult:
    """Tune a learner on the train split; the test split is never seen here.

    Trials fit on the leading 90% of the train windows and are scored on the
    same time-ordered tail the MLP uses for early stopping.
    """
    if objective not in ("mape", "mae"):
        raise TuningError(f"objective must be mape or mae, not {objective!r}")
    space = dict(space) if space is not None else default_space(model_kind)
    core, valid = split_validation_tail(train)
    actual = valid.y.ravel()
    if scaler is not None:
        actual = scaler.inverse_target(actual)

    trial_counter = {"n": 0}

    def objective_fn(assignment: dict) -> float:
        hp = hyperparams_from_assignment(assignment)
        trial_seed = (seed * 1_000_003 + trial_counter["n"]) % (2 ** 31)
        trial_counter["n"] += 1
        model = fit(model_kind, core, hp, trial_seed, scaler=scaler,
                    valid=valid if model_kind == "mlp" else None)
        preds = predict_batch(model, valid.X)
        if scaler is not None:
            preds = scaler.inverse_target(preds)
        if objective == "mape":
            return _mape(np.asarray(actual), np.asarray(preds), zero_policy="exclude")
        return _mae(np.asarray(actual), np.asarray(preds))

    best, trials = optimize(objective_fn, space, n_trials, seed, gamma=gamma,
                            n_startup=n_startup, n_candidates=n_candidates)
    return StudyResult(best=best, trials=trials, space=space, seed=seed,
                       model_kind=model_kind, objective_name=objective)


def trials_to_csv(study: StudyResult, path) -> None:
    """`trial,params...,objective,train_time_s,status` rows."""
    names = sorted(study.space)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial"] + names + ["objective", "train_time_s", "status"])
        for t in study.trials:
            row = [t.number] + [t.assignment.get(n) for n in names]
            row += ["" if t.objective is None else format(t.objective, ".17g"),
                    format(t.train_time_s, ".6f"), t.status]
            writer.writerow(row)


def render_best_table(study: StudyResult) -> str:
    """Aligned text table of the winning configuration."""
    lines = [f"model: {study.model_kind}   objective: {study.objective_name} "
             f"= {study.best.objective:.6g}   trials: {len(study.trials)}"]
    width = max(len(n) for n in study.best.assignment)
    for name in sorted(study.best.assignment):
        lines.append(f"  {name:<{width}}  {study.best.assignment[name]}")
    return "\n".join(lines)
