"""slice-forecast: generate, train, tune, eval, anova and serve in one tool.

Each subcommand is a thin orchestration over the library modules and writes a
manifest next to its outputs, so every file is reproducible from the manifest
alone. Exit codes: 0 ok, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import random
import sys
from pathlib import Path

import numpy as np

from . import anova as anova_mod
from . import datasetgen, evaluation, figures, telemetry, tuning, workload
from .config import ConfigError, ExperimentConfig, load_config
from .learners import fit
from .manifest import write_manifest
from .modelio import load_model, save_model
from .simcluster import build_cluster, export_trace_csv
from .telemetry import TelemetryError


def derive_seed(base: int, *parts) -> int:
    """Stable sub-seed from the base seed and a label path."""
    text = f"{base}:" + ":".join(str(p) for p in parts)
    return int(hashlib.sha256(text.encode()).hexdigest()[:8], 16)


def _out_dir(cfg: ExperimentConfig, args) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_dataset(cfg: ExperimentConfig, profile_name: str, op_type: str,
                   out: Path) -> tuple[Path, list[Path]]:
    """Simulate one (profile, op) pair and write its dataset + side files."""
    profile = cfg.profiles[profile_name]
    seed = derive_seed(cfg.seed, profile_name, op_type)
    cluster = build_cluster(profile.topology, seed, cfg.constants)
    cluster.apply_chaos(profile.chaos)
    plan = _with_op(cfg.workload, op_type)
    trace = workload.run_workload(cluster, plan, random.Random(seed),
                                  keep_events=True)
    duration = len(trace.process_counts)

    sensor_cluster = build_cluster(profile.topology,
                                   derive_seed(cfg.seed, profile_name, op_type,
                                               "sensor"), cfg.constants)
    sensor_cluster.apply_chaos(profile.chaos)
    sensor = workload.sensor_probe(sensor_cluster, cfg.sensor_interval_s,
                                   cfg.sensor_duration_s)

    streams = [
        telemetry.collect_application(trace),
        telemetry.collect_cluster(cluster, duration),
        telemetry.collect_network(cluster, duration),
    ]
    table = telemetry.clean(telemetry.align_and_merge(streams))
    if table.n_rows < 2 * cfg.dataset.window:
        print(f"warning: marginal dataset {profile_name}-{op_type}: "
              f"{table.n_rows} rows < 2*window ({2 * cfg.dataset.window})")

    stem = f"{profile_name}-{op_type}"
    dataset_path = out / f"{stem}.csv"
    datasetgen.export_csv(table, dataset_path)
    side = [dataset_path]
    trace_path = out / f"{stem}-trace.csv"
    workload.export_trace_csv(trace, trace_path)
    side.append(trace_path)
    proc_path = out / f"{stem}-processes.csv"
    workload.export_process_counts_csv(trace, proc_path)
    side.append(proc_path)
    sensor_path = out / f"{stem}-sensor.csv"
    workload.export_trace_csv(sensor, sensor_path)
    side.append(sensor_path)
    sim_trace_path = out / f"{stem}-simtrace.csv"
    export_trace_csv(trace.events, sim_trace_path)
    side.append(sim_trace_path)
    figures.save_trace_panel(trace, out / f"{stem}-traces.svg", title=stem)
    figures.save_latency_series(table, None, out / f"{stem}-latency.svg",
                                title=stem)
    print(f"{stem}: {table.n_rows} rows, {len(table.columns) - 1} features "
          f"(dropped: {', '.join(table.dropped_columns) or 'none'})")
    return dataset_path, side


def _with_op(plan: workload.WorkloadPlan, op_type: str) -> workload.WorkloadPlan:
    from dataclasses import replace
    return replace(plan, op_type=op_type)


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    if not cfg.profiles:
        raise ConfigError("simulator.profiles: no profiles configured")
    outputs = []
    for profile_name in cfg.profiles:
        for op_type in cfg.op_types:
            _, side = _build_dataset(cfg, profile_name, op_type, out)
            outputs.extend(side)
    write_manifest(out, "generate", cfg.raw, cfg.seed,
                   outputs=[p for p in outputs])
    return 0


def _dataset_path(cfg: ExperimentConfig, args, out: Path) -> Path:
    if getattr(args, "data", None):
        return Path(args.data)
    profile = next(iter(cfg.profiles), None)
    if profile is None:
        raise ConfigError("simulator.profiles: no profiles configured")
    return out / f"{profile}-{cfg.op_types[0]}.csv"


def _load_splits(cfg: ExperimentConfig, path: Path, lagged: bool = False):
    table = datasetgen.import_csv(path)
    table = telemetry.clean(table, min_rows=2 * cfg.dataset.window)
    return datasetgen.build_splits(
        table, window=cfg.dataset.window, stride=cfg.dataset.stride,
        train_frac=cfg.dataset.train_frac, test_rows=cfg.dataset.test_rows,
        include_lagged_target=lagged or cfg.dataset.include_lagged_target,
        provenance=path.name)


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    data = _dataset_path(cfg, args, out)
    kind = cfg.model.kind
    train, _test, scaler = _load_splits(cfg, data, lagged=(kind == "persistence"))
    model = fit(kind, train, cfg.model.hyperparams, cfg.seed, scaler=scaler)
    model_path = out / f"model-{kind}-{data.stem}.json"
    digest = save_model(model, model_path)
    print(f"trained {kind} on {data.name}: {train.n_windows} windows, "
          f"train_time {model.metadata['train_time_s']:.2f}s")
    print(f"model file {model_path} sha256 {digest}")
    write_manifest(out, "train", cfg.raw, cfg.seed, inputs={data.name: data},
                   outputs=[model_path])
    return 0


def cmd_tune(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    data = _dataset_path(cfg, args, out)
    kind = cfg.model.kind
    train, _test, scaler = _load_splits(cfg, data, lagged=(kind == "persistence"))
    study = tuning.run_study(train, kind, cfg.tuning.n_trials, cfg.seed,
                             scaler=scaler, objective=cfg.tuning.objective,
                             gamma=cfg.tuning.gamma,
                             n_startup=cfg.tuning.n_startup,
                             n_candidates=cfg.tuning.n_candidates)
    trials_path = out / f"tuning-{kind}-{data.stem}.csv"
    tuning.trials_to_csv(study, trials_path)
    best_hp = study.best.hyperparams
    model = fit(kind, train, best_hp, cfg.seed, scaler=scaler)
    model_path = out / f"model-{kind}-{data.stem}-tuned.json"
    save_model(model, model_path)
    print(tuning.render_best_table(study))
    write_manifest(out, "tune", cfg.raw, cfg.seed, inputs={data.name: data},
                   outputs=[trials_path, model_path])
    return 0


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    data = _dataset_path(cfg, args, out)
    reports = []

    for model_file in args.model or []:
        model = load_model(Path(model_file))
        lagged = model.target_channel is not None
        _train, test, _scaler = _load_splits(cfg, data, lagged=lagged)
        if test.feature_names != model.feature_names:
            raise evaluation.EvaluationError(
                f"schema mismatch: model {Path(model_file).name} was trained on "
                f"{list(model.feature_names)}, dataset provides "
                f"{list(test.feature_names)}")
        reports.append(evaluation.evaluate(model, test, dataset_id=data.name))

    repeats = cfg.evaluation.repeats if args.repeats is None else args.repeats
    if not args.model or repeats > 0:
        kind = cfg.model.kind
        train, test, scaler = _load_splits(cfg, data, lagged=(kind == "persistence"))
        lt_train, lt_test, lt_scaler = _load_splits(cfg, data, lagged=True)
        for i in range(max(1, repeats)):
            seed = cfg.seed + i
            model = fit(kind, train, cfg.model.hyperparams, seed, scaler=scaler)
            reports.append(evaluation.evaluate(model, test, dataset_id=data.name))
            baseline = fit("persistence", lt_train, cfg.model.hyperparams, seed,
                           scaler=lt_scaler)
            reports.append(evaluation.evaluate(baseline, lt_test,
                                               dataset_id=data.name))

    table = evaluation.compare(reports)
    compare_path = out / f"compare-{data.stem}.csv"
    evaluation.comparison_to_csv(table, compare_path)
    reports_path = out / f"reports-{data.stem}.csv"
    evaluation.report_to_csv(reports, reports_path)
    best = min(reports, key=lambda r: r.mape)
    overlay_path = out / f"overlay-{best.model_kind}-{data.stem}.csv"
    evaluation.overlay_to_csv(best, overlay_path)
    figures.save_overlay(best, out / f"overlay-{best.model_kind}-{data.stem}.svg")
    figures.save_mape_bars(table, out / f"mape-{data.stem}.svg")
    figures.save_training_time_bars(reports, out / f"train-time-{data.stem}.svg")
    if args.format == "csv":
        print(compare_path.read_text().rstrip())
    else:
        print(evaluation.render_comparison(table))
    write_manifest(out, "eval", cfg.raw, cfg.seed, inputs={data.name: data},
                   outputs=[compare_path, reports_path, overlay_path])
    return 0


def cmd_anova(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    if not cfg.profiles:
        raise ConfigError("simulator.profiles: no profiles configured")
    profile = cfg.profiles[next(iter(cfg.profiles))]
    observations = anova_mod.factorial_experiment(
        profile.topology, cfg.anova.replicates, cfg.seed,
        design=cfg.anova.design, constants=cfg.constants,
        op_type=cfg.anova.op_type, jobs=args.jobs)
    table = anova_mod.three_way_anova(observations)

    obs_path = out / "anova-observations.csv"
    with open(obs_path, "w") as fh:
        fh.write("delay_level,loss_level,token_level,response_ms\n")
        for o in observations:
            fh.write(f"{o.delay_level},{o.loss_level},{o.token_level},"
                     f"{format(o.response_ms, '.17g')}\n")
    table_path = out / "anova-table.csv"
    anova_mod.table_to_csv(table, table_path)
    figures.save_anova_interaction(observations, out / "anova-interaction.svg")
    if args.format == "csv":
        print(table_path.read_text().rstrip())
    else:
        print(anova_mod.render_table(table))
    write_manifest(out, "anova", cfg.raw, cfg.seed,
                   outputs=[obs_path, table_path])
    return 0


def cmd_serve(cfg: ExperimentConfig, args) -> int:
    from .service import serve
    model_dir = Path(args.out) if args.out else Path(cfg.service.model_dir)
    serve(model_dir, host=cfg.service.host, port=cfg.service.port,
          max_body_bytes=cfg.service.max_body_mb * 1024 * 1024)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slice-forecast",
        description="simulate a sliced KV store, build datasets, train and "
                    "tune forecasters, run the fault ANOVA, serve predictions")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("generate", "simulate profiles and write the dataset CSVs"),
            ("train", "fit the configured model on a dataset"),
            ("tune", "TPE hyperparameter study on a dataset"),
            ("eval", "evaluate models and write the comparison report"),
            ("anova", "run the chaos factorial and the three-way ANOVA"),
            ("serve", "start the predictor HTTP service")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment YAML")
        p.add_argument("--seed", type=int, default=None, help="override seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel width")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--format", choices=("csv", "table"), default="table")
        if name in ("train", "tune", "eval"):
            p.add_argument("--data", default=None, help="dataset CSV path")
        if name == "eval":
            p.add_argument("--model", action="append", default=None,
                           help="model file to evaluate (repeatable)")
            p.add_argument("--repeats", type=int, default=None,
                           help="seeded refits for the comparison table")
    return parser


_COMMANDS = {"generate": cmd_generate, "train": cmd_train, "tune": cmd_tune,
             "eval": cmd_eval, "anova": cmd_anova, "serve": cmd_serve}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (TelemetryError, evaluation.EvaluationError, anova_mod.AnovaError,
            tuning.TuningError, datasetgen.DatasetError, Exception) as exc:
        if isinstance(exc, KeyboardInterrupt):
            raise
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
