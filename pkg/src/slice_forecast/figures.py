"""Static figure emitters; every report CSV gets a vector image next to it."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .anova import HIGH, LOW, FactorialObservation
from .evaluation import ComparisonTable, EvalReport
from .telemetry import TimeSeriesTable
from .workload import WorkloadTrace


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def save_trace_panel(trace: WorkloadTrace, path, title: str = "") -> Path:
    """Process count envelope plus per-second completed operations."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    ax1.step(range(len(trace.process_counts)), trace.process_counts,
             where="post", lw=1.0)
    ax1.set_ylabel("processes")
    if title:
        ax1.set_title(title)
    seconds = {}
    for row in trace.rows:
        seconds[int(row.timestamp_s)] = seconds.get(int(row.timestamp_s), 0) + 1
    if seconds:
        xs = np.arange(min(seconds), max(seconds) + 1)
        ax2.plot(xs, [seconds.get(int(x), 0) for x in xs], lw=0.8)
    ax2.set_ylabel("ops/s")
    ax2.set_xlabel("time (s)")
    return _save(fig, path)


def save_latency_series(table: TimeSeriesTable, n_train: Optional[int], path,
                        title: str = "") -> Path:
    """Target latency over time with the train/test boundary marked."""
    fig, ax = plt.subplots(figsize=(8, 3.2))
    ax.plot(table.timestamps, table.column(table.target), lw=0.8)
    if n_train is not None and 0 < n_train < table.n_rows:
        ax.axvline(table.timestamps[n_train], color="crimson", ls="--", lw=1.0,
                   label="train/test split")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("latency (ms)")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def save_overlay(report: EvalReport, path, title: str = "") -> Path:
    """Actual vs predicted latency across the test steps."""
    fig, ax = plt.subplots(figsize=(8, 3.2))
    steps = np.arange(report.n_test)
    ax.plot(steps, report.actual_ms, lw=0.9, label="actual")
    ax.plot(steps, report.predicted_ms, lw=0.9, label="predicted")
    ax.set_xlabel("test step")
    ax.set_ylabel("latency (ms)")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(title or f"{report.model_kind}: one-step-ahead forecast")
    return _save(fig, path)


def save_mape_bars(table: ComparisonTable, path, title: str = "") -> Path:
    """Mean MAPE per model with std error bars, best first."""
    fig, ax = plt.subplots(figsize=(6, 3.2))
    kinds = [row.model_kind for row in table.rows]
    means = [100 * row.mape_mean for row in table.rows]
    stds = [100 * row.mape_std for row in table.rows]
    ax.bar(kinds, means, yerr=stds, capsize=3, color="#4878a8")
    ax.set_ylabel("MAPE (%)")
    ax.set_title(title or f"dataset: {table.dataset_id}")
    return _save(fig, path)


def save_training_time_bars(reports: Sequence[EvalReport], path,
                            title: str = "") -> Path:
    """Mean wall-clock training time per model kind."""
    by_kind: dict[str, list[float]] = {}
    for r in reports:
        by_kind.setdefault(r.model_kind, []).append(r.training_time_s)
    kinds = sorted(by_kind)
    means = [float(np.mean(by_kind[k])) for k in kinds]
    stds = [float(np.std(by_kind[k])) for k in kinds]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(kinds, means, yerr=stds, capsize=3, color="#6aa84f")
    ax.set_ylabel("training time (s)")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def save_anova_interaction(observations: Sequence[FactorialObservation],
                           path, title: str = "") -> Path:
    """Delay x loss interaction plot, one panel per token level."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2), sharey=True)
    for ax, token_level in zip(axes, (LOW, HIGH)):
        for loss_level, color in ((LOW, "#4878a8"), (HIGH, "#c44e52")):
            means = []
            for delay_level in (LOW, HIGH):
                vals = [o.response_ms for o in observations
                        if o.levels() == (delay_level, loss_level, token_level)]
                means.append(float(np.mean(vals)) if vals else np.nan)
            ax.plot([0, 1], means, marker="o",
                    label=f"loss {loss_level}", color=color)
        ax.set_xticks([0, 1], [f"delay {LOW}", f"delay {HIGH}"])
        ax.set_title(f"tokens {token_level}", fontsize=9)
    axes[0].set_ylabel("mean latency (ms)")
    axes[0].legend(fontsize=8)
    if title:
        fig.suptitle(title)
    return _save(fig, path)
