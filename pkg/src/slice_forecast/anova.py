"""Three-way factorial analysis of variance over chaos-injection experiments.

Balanced two-level designs only: with equal cell counts the classic sums of
squares are unambiguous, so everything reduces to cell-mean contrasts. The
F tail probability is computed from the regularized incomplete beta function
via Lentz's continued fraction, good to about 1e-10 absolute.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .simcluster import (ChaosProfile, ClusterTopology, SimConstants,
                         build_cluster)
from .workload import WorkloadPlan, run_workload
import random

LOW, HIGH = "low", "high"
FACTORS = ("delay", "loss", "tokens")
EFFECTS = ("delay", "loss", "tokens", "delay:loss", "delay:tokens",
           "loss:tokens", "delay:loss:tokens")
DISPLAY_NAMES = {
    "delay": "Network Delay",
    "loss": "Network Loss",
    "tokens": "Cassandra Tokens",
    "delay:loss": "Network Delay x Network Loss",
    "delay:tokens": "Network Delay x Cassandra Tokens",
    "loss:tokens": "Network Loss x Cassandra Tokens",
    "delay:loss:tokens": "Network Delay x Network Loss x Cassandra Tokens",
    "error": "Error",
    "total": "Total",
}


class AnovaError(ValueError):
    pass


@dataclass(frozen=True)
class FactorialObservation:
    delay_level: str
    loss_level: str
    token_level: str
    response_ms: float

    def levels(self) -> tuple[str, str, str]:
        return (self.delay_level, self.loss_level, self.token_level)


@dataclass
class AnovaRow:
    source: str
    ss: float
    df: int
    ms: float
    f: float
    p: float


@dataclass
class AnovaTable:
    rows: list[AnovaRow]
    n: int
    zero_error_variance: bool = False

    def row(self, source: str) -> AnovaRow:
        for row in self.rows:
            if row.source == source:
                return row
        raise KeyError(source)


# -- F distribution upper tail -------------------------------------------------

_CF_MAX_ITER = 400
_CF_EPS = 1e-16
_CF_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    return h


def _betai(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                     + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_upper_tail(x: float, d1: int, d2: int) -> float:
    """P(F_{d1,d2} >= x)."""
    if d1 < 1 or d2 < 1:
        raise AnovaError("degrees of freedom must be >= 1")
    if math.isnan(x):
        raise AnovaError("F statistic is NaN")
    if x <= 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    return _betai(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))


# -- the ANOVA itself ----------------------------------------------------------

def _cell_layout(observations: Sequence[FactorialObservation]):
    cells: dict[tuple[str, str, str], list[float]] = {}
    for obs in observations:
        for level in obs.levels():
            if level not in (LOW, HIGH):
                raise AnovaError(f"unknown factor level {level!r}")
        cells.setdefault(obs.levels(), []).append(obs.response_ms)
    expected = [(d, l, t) for d in (LOW, HIGH) for l in (LOW, HIGH)
                for t in (LOW, HIGH)]
    missing = [c for c in expected if c not in cells]
    if missing:
        raise AnovaError(f"unbalanced design: missing cells {missing}")
    sizes = {len(v) for v in cells.values()}
    if len(sizes) != 1:
        raise AnovaError(f"unbalanced design: cell sizes {sorted(sizes)}")
    r = sizes.pop()
    if r < 2:
        raise AnovaError("need at least 2 replicates per cell")
    return cells, r


def three_way_anova(observations: Sequence[FactorialObservation]) -> AnovaTable:
    """Effect/interaction table for a balanced 2x2x2 design."""
    cells, r = _cell_layout(observations)
    y = np.array([[[cells[(d, l, t)] for t in (LOW, HIGH)]
                   for l in (LOW, HIGH)] for d in (LOW, HIGH)])  # (2,2,2,r)
    n = y.size
    grand = y.mean()

    cell_mean = y.mean(axis=3)
    mean_a = y.mean(axis=(1, 2, 3))
    mean_b = y.mean(axis=(0, 2, 3))
    mean_c = y.mean(axis=(0, 1, 3))
    mean_ab = y.mean(axis=(2, 3))
    mean_ac = y.mean(axis=(1, 3))
    mean_bc = y.mean(axis=(0, 3))

    per_a = n // 2          # observations per level of one factor
    per_2 = n // 4          # per combination of two factors
    per_3 = r               # per cell

    ss = {}
    ss["delay"] = per_a * float(((mean_a - grand) ** 2).sum())
    ss["loss"] = per_a * float(((mean_b - grand) ** 2).sum())
    ss["tokens"] = per_a * float(((mean_c - grand) ** 2).sum())
    dev_ab = mean_ab - mean_a[:, None] - mean_b[None, :] + grand
    dev_ac = mean_ac - mean_a[:, None] - mean_c[None, :] + grand
    dev_bc = mean_bc - mean_b[:, None] - mean_c[None, :] + grand
    ss["delay:loss"] = per_2 * float((dev_ab ** 2).sum())
    ss["delay:tokens"] = per_2 * float((dev_ac ** 2).sum())
    ss["loss:tokens"] = per_2 * float((dev_bc ** 2).sum())
    dev_abc = (cell_mean
               - mean_ab[:, :, None] - mean_ac[:, None, :] - mean_bc[None, :, :]
               + mean_a[:, None, None] + mean_b[None, :, None] + mean_c[None, None, :]
               - grand)
    ss["delay:loss:tokens"] = per_3 * float((dev_abc ** 2).sum())
    ss_error = float(((y - cell_mean[:, :, :, None]) ** 2).sum())
    ss_total = float(((y - grand) ** 2).sum())

    df_error = n - 8
    ms_error = ss_error / df_error
    zero_var = ms_error == 0.0

    rows = []
    for source in EFFECTS:
        ms_src = ss[source]  # df = 1 for every two-level effect
        if zero_var:
            f_val = 0.0 if ms_src == 0.0 else math.inf
        else:
            f_val = ms_src / ms_error
        rows.append(AnovaRow(source, ss[source], 1, ms_src, f_val,
                             f_upper_tail(f_val, 1, df_error)))
    rows.append(AnovaRow("error", ss_error, df_error, ms_error,
                         math.nan, math.nan))
    rows.append(AnovaRow("total", ss_total, n - 1, math.nan, math.nan, math.nan))
    return AnovaTable(rows=rows, n=n, zero_error_variance=zero_var)


# -- driving the simulator across the 2^3 design -------------------------------

@dataclass(frozen=True)
class FactorialDesign:
    delay_levels_ms: tuple[float, float] = (1.0, 10.0)
    loss_levels: tuple[float, float] = (0.01, 0.10)
    token_levels: tuple[int, int] = (32, 256)
    ops_per_run: int = 3000
    warmup_rows: int = 100


def _run_factorial_cell(task) -> float:
    """One seeded run; module-level so a process pool can execute it."""
    topo, chaos, constants, plan, run_seed, levels, rep = task
    cluster = build_cluster(topo, run_seed, constants)
    cluster.apply_chaos(chaos)
    trace = run_workload(cluster, plan, random.Random(run_seed))
    ok = [row.latency_ms for row in trace.rows if not row.error]
    if not ok:
        raise AnovaError(
            f"simulator produced no successful ops in cell {levels} replicate {rep}")
    return float(np.mean(ok))


def factorial_experiment(topology: ClusterTopology, replicates: int, seed: int,
                         design: FactorialDesign = FactorialDesign(),
                         constants: SimConstants = SimConstants(),
                         op_type: str = "write",
                         plan: Optional[WorkloadPlan] = None,
                         jobs: int = 1) -> list[FactorialObservation]:
    """Mean op latency for every level combination, `replicates` runs each.

    Replicate seeds are derived from (seed, cell index, replicate index), so
    parallel execution (jobs > 1) returns exactly the serial observations.
    """
    if replicates < 2:
        raise AnovaError("replicates must be >= 2")
    base_plan = plan or WorkloadPlan(op_type=op_type,
                                     row_budget=design.ops_per_run,
                                     warmup_rows=design.warmup_rows)
    tasks, level_list = [], []
    cell_index = 0
    for d_idx, delay_ms in enumerate(design.delay_levels_ms):
        for l_idx, loss in enumerate(design.loss_levels):
            for t_idx, tokens in enumerate(design.token_levels):
                levels = (LOW if d_idx == 0 else HIGH,
                          LOW if l_idx == 0 else HIGH,
                          LOW if t_idx == 0 else HIGH)
                topo = replace(topology, tokens=tokens)
                chaos = ChaosProfile(delay_base_ms=delay_ms, jitter_low_ms=0.0,
                                     jitter_high_ms=delay_ms, loss_prob=loss)
                for rep in range(replicates):
                    run_seed = (seed * 100_003 + cell_index * 1_009 + rep) % (2 ** 31)
                    tasks.append((topo, chaos, constants, base_plan, run_seed,
                                  levels, rep))
                    level_list.append(levels)
                cell_index += 1
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            responses = list(pool.map(_run_factorial_cell, tasks))
    else:
        responses = [_run_factorial_cell(task) for task in tasks]
    return [FactorialObservation(*levels, response_ms=resp)
            for levels, resp in zip(level_list, responses)]


def table_to_csv(table: AnovaTable, path) -> None:
    """`source,SS,df,MS,F,p` rows, one per effect plus error and total."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "SS", "df", "MS", "F", "p"])
        for row in table.rows:
            writer.writerow([row.source, format(row.ss, ".17g"), row.df,
                             _fmt(row.ms), _fmt(row.f), _fmt(row.p)])


def _fmt(x: float) -> str:
    if math.isnan(x):
        return ""
    if math.isinf(x):
        return "inf"
    return format(x, ".17g")


def render_table(table: AnovaTable) -> str:
    """Aligned text table in the familiar source/SS/df/MS/F/p layout."""
    header = (f"{'Source of Variation':<46} {'SS':>14} {'df':>5} "
              f"{'MS':>14} {'F':>12} {'p':>10}")
    lines = [header, "-" * len(header)]
    for row in table.rows:
        name = DISPLAY_NAMES.get(row.source, row.source)
        ms_txt = "" if math.isnan(row.ms) else f"{row.ms:>14.4f}"
        f_txt = "" if math.isnan(row.f) else (
            "inf" if math.isinf(row.f) else f"{row.f:.5f}")
        p_txt = "" if math.isnan(row.p) else (
            "<0.0001" if 0 < row.p < 1e-4 else f"{row.p:.5f}")
        lines.append(f"{name:<46} {row.ss:>14.4f} {row.df:>5} "
                     f"{ms_txt:>14} {f_txt:>12} {p_txt:>10}")
    if table.zero_error_variance:
        lines.append("note: zero within-cell variance; F values degenerate")
    return "\n".join(lines)
