"""Regression metrics and model comparison reports.

All metrics operate in the target's own unit (milliseconds here); MAPE is
kept as a ratio internally and only rendered as a percentage. Because the
simulated latencies are strictly positive, a zero actual value normally means
a degenerate configuration, so the bare mape() refuses it unless a zero
policy is chosen.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .datasetgen import Scaler, WindowedDataset
from .learners import TrainedModel, predict_batch


class EvaluationError(ValueError):
    pass


def _check(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if len(a) == 0 or len(a) != len(p):
        raise EvaluationError(f"need equal nonzero lengths, got {len(a)} and {len(p)}")
    return a, p


def mae(actual, predicted) -> float:
    a, p = _check(actual, predicted)
    return float(np.mean(np.abs(a - p)))


def mse(actual, predicted) -> float:
    a, p = _check(actual, predicted)
    return float(np.mean((a - p) ** 2))


def rmse(actual, predicted) -> float:
    return math.sqrt(mse(actual, predicted))


def mape(actual, predicted, zero_policy: str = "raise",
         epsilon: float = 1e-9) -> float:
    """Mean |a-p|/|a| as a ratio (multiply by 100 only for display).

    zero_policy: "raise" refuses zero actuals, "exclude" drops those points
    (count available via mape_excluded_points), "epsilon" floors |a|.
    """
    a, p = _check(actual, predicted)
    zeros = a == 0.0
    denom = np.abs(a)
    if zeros.any():
        if zero_policy == "raise":
            raise EvaluationError(
                f"{int(zeros.sum())} zero actual value(s); choose the "
                "zero_policy guard ('exclude' or 'epsilon') to proceed")
        if zero_policy == "exclude":
            a, p = a[~zeros], p[~zeros]
            denom = np.abs(a)
            if len(a) == 0:
                raise EvaluationError("all actual values are zero")
        elif zero_policy == "epsilon":
            denom = np.maximum(denom, epsilon)  # floors the denominator only
        else:
            raise EvaluationError(f"unknown zero_policy {zero_policy!r}")
    return float(np.mean(np.abs(a - p) / denom))


def mape_excluded_points(actual) -> int:
    return int(np.sum(np.asarray(actual, dtype=float).ravel() == 0.0))


@dataclass
class EvalReport:
    model_kind: str
    dataset_id: str
    mae: float
    mse: float
    rmse: float
    mape: float
    training_time_s: float
    n_test: int
    actual_ms: np.ndarray
    predicted_ms: np.ndarray
    seed: int = 0
    mape_excluded: int = 0


def evaluate(model: TrainedModel, test: WindowedDataset,
             scaler: Optional[Scaler] = None, dataset_id: str = "") -> EvalReport:
    """Score a model on a test split; predictions inverse-scaled to ms first."""
    if test.n_windows < 1:
        raise EvaluationError("empty test split")
    if test.feature_names != model.feature_names:
        raise EvaluationError(
            f"feature mismatch: model has {list(model.feature_names)}, "
            f"test split has {list(test.feature_names)}")
    scaler = scaler if scaler is not None else model.scaler
    preds = predict_batch(model, test.X)
    actual = test.y.ravel()
    if scaler is not None:
        preds = scaler.inverse_target(preds)
        actual = scaler.inverse_target(actual)
    m = mse(actual, preds)
    return EvalReport(
        model_kind=model.kind,
        dataset_id=dataset_id or test.provenance,
        mae=mae(actual, preds),
        mse=m,
        rmse=math.sqrt(m),
        mape=mape(actual, preds, zero_policy="exclude"),
        training_time_s=float(model.metadata.get("train_time_s", 0.0)),
        n_test=len(actual),
        actual_ms=np.asarray(actual, dtype=float),
        predicted_ms=np.asarray(preds, dtype=float),
        seed=model.seed,
        mape_excluded=mape_excluded_points(actual))


@dataclass
class ComparisonRow:
    model_kind: str
    n_runs: int
    mape_mean: float
    mape_std: float
    mae_mean: float
    mae_std: float
    rmse_mean: float


@dataclass
class ComparisonTable:
    dataset_id: str
    rows: list[ComparisonRow] = field(default_factory=list)


def compare(reports: Sequence[EvalReport]) -> ComparisonTable:
    """Rank model kinds by mean MAPE; std across repeated seeds (population)."""
    if not reports:
        raise EvaluationError("nothing to compare")
    ids = {r.dataset_id for r in reports}
    if len(ids) > 1:
        raise EvaluationError(f"mixed dataset ids: {sorted(ids)}")
    by_kind: dict[str, list[EvalReport]] = {}
    for r in reports:
        by_kind.setdefault(r.model_kind, []).append(r)
    rows = []
    for kind, group in by_kind.items():
        mapes = np.array([r.mape for r in group])
        maes = np.array([r.mae for r in group])
        rmses = np.array([r.rmse for r in group])
        rows.append(ComparisonRow(kind, len(group),
                                  float(mapes.mean()), float(mapes.std()),
                                  float(maes.mean()), float(maes.std()),
                                  float(rmses.mean())))
    rows.sort(key=lambda row: (row.mape_mean, row.model_kind))
    return ComparisonTable(dataset_id=reports[0].dataset_id, rows=rows)


def report_to_csv(reports: Sequence[EvalReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_kind", "dataset_id", "seed", "mae", "mse",
                         "rmse", "mape", "training_time_s", "n_test"])
        for r in reports:
            writer.writerow([r.model_kind, r.dataset_id, r.seed,
                             format(r.mae, ".17g"), format(r.mse, ".17g"),
                             format(r.rmse, ".17g"), format(r.mape, ".17g"),
                             format(r.training_time_s, ".6f"), r.n_test])


def overlay_to_csv(report: EvalReport, path) -> None:
    """`step,actual_ms,predicted_ms` data behind the prediction overlay plot."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "actual_ms", "predicted_ms"])
        for i, (a, p) in enumerate(zip(report.actual_ms, report.predicted_ms)):
            writer.writerow([i, format(a, ".17g"), format(p, ".17g")])


def comparison_to_csv(table: ComparisonTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_kind", "n_runs", "mape_mean", "mape_std",
                         "mae_mean", "mae_std", "rmse_mean"])
        for row in table.rows:
            writer.writerow([row.model_kind, row.n_runs,
                             format(row.mape_mean, ".17g"),
                             format(row.mape_std, ".17g"),
                             format(row.mae_mean, ".17g"),
                             format(row.mae_std, ".17g"),
                             format(row.rmse_mean, ".17g")])


def render_comparison(table: ComparisonTable) -> str:
    """Aligned text ranking; MAPE shown as a percentage here only."""
    header = f"{'model':<12} {'runs':>4} {'MAPE %':>12} {'±std':>10} {'MAE ms':>12} {'RMSE ms':>12}"
    lines = [f"dataset: {table.dataset_id}", header, "-" * len(header)]
    for row in table.rows:
        lines.append(f"{row.model_kind:<12} {row.n_runs:>4} "
                     f"{100 * row.mape_mean:>12.4f} {100 * row.mape_std:>10.4f} "
                     f"{row.mae_mean:>12.4f} {row.rmse_mean:>12.4f}")
    return "\n".join(lines)
