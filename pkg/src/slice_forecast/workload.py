"""Sinusoidally modulated Poisson workload driven against a simulated cluster.

The offered load is a process count f(t) = mean + amplitude*sin(2*pi*t/T);
each process issues a fixed number of operations per second, so the arrival
rate is an inhomogeneous Poisson process generated by thinning. A run warms
the store up, then records completions until the row budget of successful
operations is met.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .simcluster import (OP_READ, OP_WRITE, US_PER_S, OpRequest, SimCluster,
                         SimulationError)


@dataclass(frozen=True)
class WorkloadPlan:
    mean_processes: float = 22.5          # sinusoid level
    amplitude: float = 22.5               # sinusoid amplitude
    period_s: float = 600.0
    op_type: str = OP_WRITE
    row_budget: int = 500_000
    ops_per_process_second: float = 2.0
    warmup_rows: int = 5_000
    keyspace: int = 10_000

    def validate(self) -> None:
        if not self.mean_processes >= self.amplitude >= 0:
            raise ValueError("need mean_processes >= amplitude >= 0 (rate never negative)")
        if self.row_budget <= 0:
            raise ValueError("row_budget must be > 0")
        if self.period_s <= 0:
            raise ValueError("period_s must be > 0")
        if self.op_type not in (OP_WRITE, OP_READ):
            raise ValueError(f"unknown op_type {self.op_type!r}")
        if self.ops_per_process_second < 0:
            raise ValueError("ops_per_process_second must be >= 0")
        if self.warmup_rows < 0:
            raise ValueError("warmup_rows must be >= 0")


@dataclass(frozen=True)
class TraceRow:
    timestamp_s: float
    op_type: str
    latency_ms: float
    error: bool


@dataclass
class WorkloadTrace:
    rows: list[TraceRow] = field(default_factory=list)
    process_counts: list[int] = field(default_factory=list)
    sensor: bool = False
    events: list = field(default_factory=list)  # raw CompletionEvents, opt-in


def rate_at(plan: WorkloadPlan, t: float) -> float:
    """Instantaneous process count of the sinusoidal load pattern."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return plan.mean_processes + plan.amplitude * math.sin(2.0 * math.pi * t / plan.period_s)


def arrival_stream(plan: WorkloadPlan, rng: random.Random) -> Iterator[float]:
    """Endless inhomogeneous Poisson arrivals (seconds), via thinning."""
    lam_max = (plan.mean_processes + plan.amplitude) * plan.ops_per_process_second
    if lam_max <= 0:
        raise ValueError("plan generates no load (peak rate is zero)")
    t = 0.0
    while True:
        t += rng.expovariate(lam_max)
        lam = rate_at(plan, t) * plan.ops_per_process_second
        if rng.random() < lam / lam_max:
            yield t


def arrival_schedule(plan: WorkloadPlan, horizon_s: float,
                     rng: random.Random) -> list[float]:
    """Accepted arrival timestamps below the horizon; strictly increasing."""
    if horizon_s <= 0:
        raise ValueError("horizon_s must be > 0")
    out = []
    for t in arrival_stream(plan, rng):
        if t >= horizon_s:
            break
        out.append(t)
    return out


def _process_count_series(plan: WorkloadPlan, duration_s: int) -> list[int]:
    return [int(math.floor(rate_at(plan, float(t)))) for t in range(duration_s)]


def run_workload(cluster: SimCluster, plan: WorkloadPlan, rng: random.Random,
                 max_horizon_s: Optional[float] = None,
                 keep_events: bool = False) -> WorkloadTrace:
    """Drive the cluster until row_budget successful non-warmup completions.

    The first `warmup_rows` completions (in completion order) are discarded.
    Error completions appear in the trace but do not count against the budget.
    keep_events retains the raw microsecond completion events for export.
    """
    plan.validate()
    mean_rate = plan.mean_processes * plan.ops_per_process_second
    if mean_rate <= 0:
        raise ValueError("plan generates no load (mean rate is zero)")
    if max_horizon_s is None:
        max_horizon_s = 20.0 * (plan.warmup_rows + plan.row_budget) / mean_rate + 120.0

    arrivals = arrival_stream(plan, rng)
    next_arrival = next(arrivals)
    chunk_s = 10.0
    chunk_end = 0.0
    warm_left = plan.warmup_rows
    successes = 0
    rows: list[TraceRow] = []
    events: list = []
    end_s = 0.0

    while successes < plan.row_budget:
        chunk_end += chunk_s
        if chunk_end > max_horizon_s:
            raise SimulationError(
                f"row budget unreachable within {max_horizon_s:.0f} simulated seconds")
        while next_arrival < chunk_end:
            key = rng.randrange(plan.keyspace)
            cluster.submit_op(OpRequest(plan.op_type, key,
                                        int(round(next_arrival * US_PER_S))))
            next_arrival = next(arrivals)
        for ev in cluster.advance(int(round(chunk_end * US_PER_S))):
            if warm_left > 0:
                warm_left -= 1
                continue
            rows.append(TraceRow(ev.completion_time_us / US_PER_S, ev.op_type,
                                 ev.latency_us / 1000.0, ev.error))
            if keep_events:
                events.append(ev)
            end_s = ev.completion_time_us / US_PER_S
            if not ev.error:
                successes += 1
                if successes == plan.row_budget:
                    break

    duration = int(math.ceil(end_s)) + 1 if rows else 0
    return WorkloadTrace(rows=rows,
                         process_counts=_process_count_series(plan, duration),
                         events=events)


def sensor_probe(cluster: SimCluster, interval_s: float,
                 duration_s: float) -> WorkloadTrace:
    """Flat-rate read probes, one per interval, independent of any plan.

    Probe rows are stamped with their issue times so the trace is the
    arithmetic sequence the probe was scheduled on; latencies reflect
    whatever load the cluster is carrying.
    """
    if interval_s <= 0:
        raise ValueError("interval_s must be > 0")
    n_probes = int(math.floor(duration_s / interval_s + 1e-9))
    start_us = cluster.now_us
    issue_times = []
    for i in range(n_probes):
        t_us = start_us + int(round(i * interval_s * US_PER_S))
        issue_times.append(t_us)
        cluster.submit_op(OpRequest(OP_READ, key=i, issue_time_us=t_us, tag="sensor"))
    horizon = start_us + int(round(duration_s * US_PER_S))
    horizon += int(round(cluster.constants.abort_timeout_ms * 1000)) + US_PER_S
    by_issue = {}
    for ev in cluster.advance(horizon):
        if ev.tag == "sensor":
            by_issue[ev.issue_time_us] = ev
    rows = []
    for t_us in issue_times:
        ev = by_issue[t_us]
        rows.append(TraceRow(t_us / US_PER_S, ev.op_type, ev.latency_us / 1000.0,
                             ev.error))
    return WorkloadTrace(rows=rows, process_counts=[], sensor=True)


def export_trace_csv(trace: WorkloadTrace, path) -> None:
    """`timestamp_s,op_type,latency_ms,error` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_s", "op_type", "latency_ms", "error"])
        for row in trace.rows:
            writer.writerow([format(row.timestamp_s, ".17g"), row.op_type,
                             format(row.latency_ms, ".17g"), int(row.error)])


def export_process_counts_csv(trace: WorkloadTrace, path) -> None:
    """`second,process_count` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["second", "process_count"])
        for sec, count in enumerate(trace.process_counts):
            writer.writerow([sec, count])
