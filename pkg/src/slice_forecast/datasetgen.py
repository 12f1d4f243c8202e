"""Leakage-free windowed datasets from a cleaned time-series table.

Conventions pinned for reproducibility: the train split is the first
ceil(rows * train_frac) rows, the scaler uses population standard deviations
fitted on the train split only, and window i covers rows [i, i+w) with its
target one step beyond at row i+w. Windows never cross the split boundary
because each split is windowed separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .telemetry import TimeSeriesTable


class DatasetError(ValueError):
    pass


@dataclass
class Scaler:
    feature_names: tuple[str, ...]
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float
    target_std: float
    fitted: bool = True

    def inverse_target(self, scaled) -> np.ndarray:
        if not self.fitted:
            raise DatasetError("scaler is not fitted")
        return np.asarray(scaled, dtype=float) * self.target_std + self.target_mean

    def scale_target(self, raw) -> np.ndarray:
        if not self.fitted:
            raise DatasetError("scaler is not fitted")
        return (np.asarray(raw, dtype=float) - self.target_mean) / self.target_std

    def scale_features(self, raw: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise DatasetError("scaler is not fitted")
        return (np.asarray(raw, dtype=float) - self.feature_mean) / self.feature_std

    def inverse_features(self, scaled: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise DatasetError("scaler is not fitted")
        return np.asarray(scaled, dtype=float) * self.feature_std + self.feature_mean


@dataclass
class WindowedDataset:
    X: np.ndarray                         # (m, w, features)
    y: np.ndarray                         # (m, 1)
    window: int
    stride: int
    feature_names: tuple[str, ...]
    provenance: str = ""
    split_tag: str = ""
    target_channel: Optional[int] = None  # set when the lagged target is a channel

    @property
    def n_windows(self) -> int:
        return self.X.shape[0]


def time_split(table: TimeSeriesTable, train_frac: Optional[float] = 0.8,
               test_rows: Optional[int] = None) -> tuple[TimeSeriesTable, TimeSeriesTable]:
    """Chronological split; the ratio wins if both knobs are set."""
    rows = table.n_rows
    if train_frac is not None:
        if not 0.0 < train_frac < 1.0:
            raise DatasetError("train_frac must be in (0, 1)")
        # Fraction keeps ceil exact for decimal fractions (0.8 * 100 is 80, not 81).
        n_train = int(math.ceil(Fraction(str(train_frac)) * rows))
    elif test_rows is not None:
        n_train = rows - test_rows
    else:
        raise DatasetError("need train_frac or test_rows")
    if n_train <= 0 or n_train >= rows:
        raise DatasetError(f"split leaves an empty side (train={n_train}, rows={rows})")
    train = TimeSeriesTable(table.timestamps[:n_train].copy(), list(table.columns),
                            table.values[:n_train].copy(), table.target,
                            table.dropped_columns)
    test = TimeSeriesTable(table.timestamps[n_train:].copy(), list(table.columns),
                           table.values[n_train:].copy(), table.target,
                           table.dropped_columns)
    return train, test


def fit_scaler(train: TimeSeriesTable) -> Scaler:
    """Per-column mean/std (population) from the train split only."""
    features = train.feature_names()
    cols = np.stack([train.column(name) for name in features], axis=1) \
        if features else np.empty((train.n_rows, 0))
    mean = cols.mean(axis=0)
    std = cols.std(axis=0)
    target = train.column(train.target)
    t_mean, t_std = float(target.mean()), float(target.std())
    zero = [name for name, s in zip(features, std) if s == 0.0]
    if t_std == 0.0:
        zero.append(train.target)
    if zero:
        raise DatasetError(
            f"zero variance in train column(s) {zero}; drop them before scaling")
    return Scaler(tuple(features), mean, std, t_mean, t_std)


def apply_scaler(scaler: Scaler, table: TimeSeriesTable) -> TimeSeriesTable:
    """Z-score a table with train statistics; never refits."""
    if not scaler.fitted:
        raise DatasetError("scaler is not fitted")
    if tuple(table.feature_names()) != scaler.feature_names:
        raise DatasetError("table columns do not match the scaler's feature names")
    values = table.values.copy()
    for i, name in enumerate(scaler.feature_names):
        j = table.columns.index(name)
        values[:, j] = (values[:, j] - scaler.feature_mean[i]) / scaler.feature_std[i]
    j = table.columns.index(table.target)
    values[:, j] = (values[:, j] - scaler.target_mean) / scaler.target_std
    return TimeSeriesTable(table.timestamps.copy(), list(table.columns), values,
                           table.target, table.dropped_columns)


def inverse_scaler(scaler: Scaler, table: TimeSeriesTable) -> TimeSeriesTable:
    values = table.values.copy()
    for i, name in enumerate(scaler.feature_names):
        j = table.columns.index(name)
        values[:, j] = values[:, j] * scaler.feature_std[i] + scaler.feature_mean[i]
    j = table.columns.index(table.target)
    values[:, j] = values[:, j] * scaler.target_std + scaler.target_mean
    return TimeSeriesTable(table.timestamps.copy(), list(table.columns), values,
                           table.target, table.dropped_columns)


def make_windows(table: TimeSeriesTable, window: int = 50, stride: int = 1,
                 include_lagged_target: bool = False,
                 provenance: str = "", split_tag: str = "") -> WindowedDataset:
    """Overlapping windows of length w; the target sits one row past each.

    Window starts are i in {0, s, 2s, ...} with i + w <= rows - 1, so
    m = floor((rows - w - 1) / s) + 1.
    """
    rows = table.n_rows
    if window < 1 or stride < 1:
        raise DatasetError("window and stride must be >= 1")
    if rows <= window:
        raise DatasetError(f"insufficient rows: need > {window}, have {rows}")
    feature_names = list(table.feature_names())
    target_channel = None
    if include_lagged_target:
        feature_names.append(table.target)
        target_channel = len(feature_names) - 1
    col_idx = [table.columns.index(name) for name in feature_names]
    target_col = table.columns.index(table.target)

    starts = np.arange(0, rows - window, stride)
    idx = starts[:, None] + np.arange(window)[None, :]
    X = table.values[:, col_idx][idx]
    y = table.values[starts + window, target_col].reshape(-1, 1)
    return WindowedDataset(X=X, y=y, window=window, stride=stride,
                           feature_names=tuple(feature_names),
                           provenance=provenance, split_tag=split_tag,
                           target_channel=target_channel)


def export_csv(table: TimeSeriesTable, path) -> None:
    """Write `timestamp_s,<features...>,<target>` with 17-digit floats."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["timestamp_s"] + table.columns) + "\n")
        for i in range(table.n_rows):
            cells = [str(int(table.timestamps[i]))]
            cells += [format(v, ".17g") for v in table.values[i]]
            fh.write(",".join(cells) + "\n")


def import_csv(path, target: str = "") -> TimeSeriesTable:
    """Read a table back, byte-losslessly; validates monotone timestamps."""
    with open(path, "r", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise DatasetError(f"{path}: no header")
    header = lines[0].split(",")
    if header[0] != "timestamp_s" or len(header) < 2:
        raise DatasetError(f"{path}: malformed header (expected timestamp_s first)")
    columns = header[1:]
    target = target or columns[-1]
    if target not in columns:
        raise DatasetError(f"{path}: target column {target!r} not present")
    timestamps, rows = [], []
    prev_ts = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise DatasetError(
                f"{path}: line {lineno}: expected {len(header)} fields, got {len(cells)}")
        try:
            ts = int(cells[0])
            vals = [float(c) for c in cells[1:]]
        except ValueError as exc:
            raise DatasetError(f"{path}: line {lineno}: {exc}") from exc
        if prev_ts is not None and ts <= prev_ts:
            raise DatasetError(
                f"{path}: line {lineno}: timestamp {ts} not increasing")
        prev_ts = ts
        timestamps.append(ts)
        rows.append(vals)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return TimeSeriesTable(np.array(timestamps, dtype=np.int64), columns,
                           np.array(rows, dtype=float), target)


def drop_train_constant_columns(
        train: TimeSeriesTable,
        test: TimeSeriesTable) -> tuple[TimeSeriesTable, TimeSeriesTable, list[str]]:
    """Remove feature columns that are constant on the train split.

    clean() only drops globally constant columns; a column constant on train
    alone would still break z-scoring, so the pipeline prunes it here.
    """
    dropped = [name for name in train.feature_names()
               if np.ptp(train.column(name)) == 0.0]
    if not dropped:
        return train, test, []

    def prune(table: TimeSeriesTable) -> TimeSeriesTable:
        keep = [j for j, name in enumerate(table.columns) if name not in dropped]
        return TimeSeriesTable(table.timestamps.copy(),
                               [table.columns[j] for j in keep],
                               table.values[:, keep].copy(), table.target,
                               table.dropped_columns + tuple(dropped))
    return prune(train), prune(test), dropped


def build_splits(table: TimeSeriesTable, window: int = 50, stride: int = 1,
                 train_frac: Optional[float] = 0.8,
                 test_rows: Optional[int] = None,
                 include_lagged_target: bool = False,
                 provenance: str = "",
                 ) -> tuple[WindowedDataset, WindowedDataset, Scaler]:
    """Split, scale on train only, and window each side independently."""
    train_t, test_t = time_split(table, train_frac, test_rows)
    train_t, test_t, _ = drop_train_constant_columns(train_t, test_t)
    scaler = fit_scaler(train_t)
    train_s = apply_scaler(scaler, train_t)
    test_s = apply_scaler(scaler, test_t)
    train = make_windows(train_s, window, stride, include_lagged_target,
                         provenance=provenance, split_tag="train")
    test = make_windows(test_s, window, stride, include_lagged_target,
                        provenance=provenance, split_tag="test")
    return train, test, scaler
