"""Per-second metric families and their merge into one feature table.

Three collectors mirror what a monitoring stack would scrape from the slice:
application statistics from the workload trace, host statistics from the
node counters, and interface statistics from the message accounting. The
merge outer-joins everything on the integer second, interpolates the gaps,
and designates the mean operation latency as the target column.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .simcluster import US_PER_S, SimCluster
from .workload import WorkloadTrace

SOURCE_APPLICATION = "application"
SOURCE_CLUSTER = "cluster"
SOURCE_NETWORK = "network"

TARGET_COLUMN = "target_latency_ms"

# Whitelist of observable metrics; the merge refuses anything else so no
# simulator internals can leak into the feature set.
METRIC_SCHEMA = {
    SOURCE_APPLICATION: ("ops_per_sec", "error_count", "rows_per_sec",
                         "mean_latency_ms", "p95_latency_ms"),
    SOURCE_CLUSTER: ("cpu_util", "ram_mb", "interrupts_per_sec"),
    SOURCE_NETWORK: ("bytes_tx", "bytes_rx", "drops", "retransmits"),
}


class TelemetryError(ValueError):
    pass


@dataclass(frozen=True)
class MetricRecord:
    timestamp_s: int
    source: str
    node: Optional[str]
    values: dict[str, float]


@dataclass(eq=False)
class TimeSeriesTable:
    """Timestamp-indexed feature matrix with one designated target column."""

    timestamps: np.ndarray              # (rows,) int64
    columns: list[str]                  # feature names, target included
    values: np.ndarray                  # (rows, len(columns)) float64, NaN = missing
    target: str = TARGET_COLUMN
    dropped_columns: tuple[str, ...] = ()

    @property
    def n_rows(self) -> int:
        return len(self.timestamps)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def feature_names(self) -> list[str]:
        return [c for c in self.columns if c != self.target]

    def equals(self, other: "TimeSeriesTable") -> bool:
        return (self.columns == other.columns
                and self.target == other.target
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.values, other.values, equal_nan=True))

    def copy(self) -> "TimeSeriesTable":
        return TimeSeriesTable(self.timestamps.copy(), list(self.columns),
                               self.values.copy(), self.target,
                               self.dropped_columns)


def collect_application(trace: WorkloadTrace) -> list[MetricRecord]:
    """Per-second application statistics; the mean latency feeds the target."""
    if not trace.rows:
        raise TelemetryError("empty trace")
    buckets: dict[int, list] = {}
    for row in trace.rows:
        buckets.setdefault(int(row.timestamp_s), []).append(row)
    first, last = min(buckets), max(buckets)
    records = []
    for sec in range(first, last + 1):
        rows = buckets.get(sec, [])
        ok_lat = [r.latency_ms for r in rows if not r.error]
        values = {
            "ops_per_sec": float(len(rows)),
            "error_count": float(sum(1 for r in rows if r.error)),
            "rows_per_sec": float(len(ok_lat)),
            "mean_latency_ms": float(np.mean(ok_lat)) if ok_lat else math.nan,
            "p95_latency_ms": float(np.percentile(ok_lat, 95)) if ok_lat else math.nan,
        }
        records.append(MetricRecord(sec, SOURCE_APPLICATION, None, values))
    return records


def collect_cluster(cluster: SimCluster, duration_s: int,
                    noise_sigma: Optional[dict[str, float]] = None,
                    seed: Optional[int] = None) -> list[MetricRecord]:
    """Per-node host metrics (CPU, RAM, interrupts) with seeded noise.

    Pass noise_sigma={} for the noise-free mode used by exactness tests.
    """
    consts = cluster.constants
    if noise_sigma is None:
        noise_sigma = {"cpu_util": consts.noise_sigma_cpu,
                       "ram_mb": consts.noise_sigma_ram_mb,
                       "interrupts_per_sec": consts.noise_sigma_interrupts}
    if seed is None:
        digest = hashlib.sha256(f"{cluster.seed}:cluster-telemetry".encode())
        seed = int(digest.hexdigest()[:8], 16)
    rng = random.Random(seed)

    def noise(metric: str) -> float:
        sigma = noise_sigma.get(metric, 0.0)
        return rng.gauss(0.0, sigma) if sigma > 0 else 0.0

    records = []
    for idx, node in enumerate(cluster.topology.nodes):
        counters = cluster.node_counters[idx]
        for sec in range(duration_s):
            work = counters.work_us.get(sec, 0)
            cpu = consts.cpu_idle_util + work / (node.cpu_capacity * US_PER_S)
            cpu += noise("cpu_util")
            ram = consts.ram_base_mb + consts.c_ram_mb * cluster.inflight_mean(sec)
            ram += noise("ram_mb")
            intr = consts.c_interrupts * counters.messages.get(sec, 0)
            intr += noise("interrupts_per_sec")
            records.append(MetricRecord(sec, SOURCE_CLUSTER, node.id, {
                "cpu_util": min(1.0, max(0.0, cpu)),
                "ram_mb": max(0.0, ram),
                "interrupts_per_sec": max(0.0, intr),
            }))
    return records


def collect_network(cluster: SimCluster, duration_s: int) -> list[MetricRecord]:
    """Per-node interface counters; raw, so byte conservation stays exact."""
    records = []
    for idx, node in enumerate(cluster.topology.nodes):
        counters = cluster.node_counters[idx]
        for sec in range(duration_s):
            records.append(MetricRecord(sec, SOURCE_NETWORK, node.id, {
                "bytes_tx": float(counters.bytes_tx.get(sec, 0)),
                "bytes_rx": float(counters.bytes_rx.get(sec, 0)),
                "drops": float(counters.drops.get(sec, 0)),
                "retransmits": float(counters.retransmits.get(sec, 0)),
            }))
    return records


def _interpolate_column(ts: np.ndarray, col: np.ndarray) -> np.ndarray:
    """Linear interpolation in the interior, nearest value at the edges."""
    missing = np.isnan(col)
    if not missing.any():
        return col
    known = ~missing
    if not known.any():
        return col
    return np.interp(ts.astype(float), ts[known].astype(float), col[known])


def align_and_merge(streams: Sequence[Sequence[MetricRecord]],
                    target_metric: str = "mean_latency_ms") -> TimeSeriesTable:
    """Outer-join metric streams on the second; application latency is Y."""
    records = [rec for stream in streams for rec in stream]
    app_records = [r for r in records if r.source == SOURCE_APPLICATION]
    if not app_records:
        raise TelemetryError("no target source (need an application stream)")

    node_ids = sorted({r.node for r in records if r.node is not None})
    node_index = {node: i for i, node in enumerate(node_ids)}

    columns: list[str] = []
    for name in METRIC_SCHEMA[SOURCE_APPLICATION]:
        if name != target_metric:
            columns.append(name)
    for node in node_ids:
        prefix = f"node{node_index[node]}_"
        for name in METRIC_SCHEMA[SOURCE_CLUSTER] + METRIC_SCHEMA[SOURCE_NETWORK]:
            columns.append(prefix + name)
    columns.append(TARGET_COLUMN)
    col_index = {name: i for i, name in enumerate(columns)}

    timestamps = np.array(sorted({r.timestamp_s for r in records}), dtype=np.int64)
    row_index = {int(t): i for i, t in enumerate(timestamps)}
    values = np.full((len(timestamps), len(columns)), np.nan)

    for rec in records:
        schema = METRIC_SCHEMA[rec.source]
        unknown = set(rec.values) - set(schema)
        if unknown:
            raise TelemetryError(
                f"metrics {sorted(unknown)} not in the {rec.source} schema")
        row = row_index[rec.timestamp_s]
        prefix = "" if rec.node is None else f"node{node_index[rec.node]}_"
        for name, value in rec.values.items():
            if rec.source == SOURCE_APPLICATION and name == target_metric:
                values[row, col_index[TARGET_COLUMN]] = value
            else:
                values[row, col_index[prefix + name]] = value

    for j in range(values.shape[1]):
        values[:, j] = _interpolate_column(timestamps, values[:, j])
    return TimeSeriesTable(timestamps, columns, values)


def clean(table: TimeSeriesTable, min_rows: Optional[int] = None) -> TimeSeriesTable:
    """Collapse duplicate seconds, drop constant columns, fill residual gaps.

    min_rows, when given (the pipeline passes 2*window), turns a shrunken
    table into an error instead of a silently unusable dataset.
    """
    order = np.argsort(table.timestamps, kind="stable")
    ts = table.timestamps[order]
    vals = table.values[order]

    uniq, first_idx = np.unique(ts, return_index=True)
    if len(uniq) != len(ts):
        collapsed = np.empty((len(uniq), vals.shape[1]))
        for i, t in enumerate(uniq):
            rows = vals[ts == t]
            with np.errstate(invalid="ignore"):
                collapsed[i] = np.nanmean(rows, axis=0)
        ts, vals = uniq, collapsed
    else:
        ts, vals = ts.copy(), vals.copy()

    keep, dropped = [], list(table.dropped_columns)
    for j, name in enumerate(table.columns):
        col = vals[:, j]
        known = col[~np.isnan(col)]
        constant = len(known) == 0 or bool(np.all(known == known[0]))
        if constant and name != table.target:
            dropped.append(name)
        else:
            keep.append(j)
    columns = [table.columns[j] for j in keep]
    vals = vals[:, keep]

    for j in range(vals.shape[1]):
        vals[:, j] = _interpolate_column(ts, vals[:, j])

    if min_rows is not None and len(ts) < min_rows:
        raise TelemetryError(
            f"insufficient rows after cleaning: {len(ts)} < {min_rows}")
    return TimeSeriesTable(ts, columns, vals, table.target, tuple(dropped))
