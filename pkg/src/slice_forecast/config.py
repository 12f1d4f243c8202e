"""Experiment configuration: one YAML file drives every pipeline stage.

Sections mirror the pipeline: simulator (constants + named profiles with
topology and chaos), workload, dataset, model, tuning, anova, evaluation,
service. Validation errors carry the section/key path that caused them.
Seeds are explicit; nothing falls back to wall-clock entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .anova import FactorialDesign
from .learners import Hyperparams
from .simcluster import (ChaosProfile, ClusterTopology, LinkSpec, NodeSpec,
                         SimConstants, TopologyError)
from .workload import WorkloadPlan


class ConfigError(ValueError):
    pass


@dataclass
class ProfileConfig:
    name: str
    topology: ClusterTopology
    chaos: ChaosProfile


@dataclass
class DatasetConfig:
    window: int = 50
    stride: int = 1
    train_frac: Optional[float] = 0.8
    test_rows: Optional[int] = None
    include_lagged_target: bool = False


@dataclass
class ModelConfig:
    kind: str = "forest"
    hyperparams: Hyperparams = field(default_factory=Hyperparams)


@dataclass
class TuningConfig:
    n_trials: int = 50
    objective: str = "mape"
    gamma: float = 0.25
    n_startup: int = 10
    n_candidates: int = 24


@dataclass
class EvaluationConfig:
    repeats: int = 10
    sla_threshold_ms: float = 50.0


@dataclass
class AnovaConfig:
    replicates: int = 6
    design: FactorialDesign = field(default_factory=FactorialDesign)
    op_type: str = "write"


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    model_dir: str = "models"
    max_body_mb: int = 16


@dataclass
class ExperimentConfig:
    seed: int = 42
    output_dir: str = "out"
    constants: SimConstants = field(default_factory=SimConstants)
    profiles: dict[str, ProfileConfig] = field(default_factory=dict)
    workload: WorkloadPlan = field(default_factory=WorkloadPlan)
    op_types: tuple[str, ...] = ("write", "read")
    sensor_interval_s: float = 1.0
    sensor_duration_s: float = 60.0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    anova: AnovaConfig = field(default_factory=AnovaConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)
    raw: dict = field(default_factory=dict)


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ConfigError(f"{path}: missing key {key!r}")
    return mapping[key]


def _take(mapping: dict, path: str, cls, **casts):
    """Build a dataclass from a mapping, rejecting unknown keys."""
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(mapping) - known
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for key, value in mapping.items():
        cast = casts.get(key)
        try:
            kwargs[key] = cast(value) if cast else value
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.{key}: {exc}") from exc
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_links(doc: dict, node_ids: list[str], path: str):
    if doc is None:
        doc = {}
    default = _take(doc.get("default"), f"{path}.default", LinkSpec)
    n = len(node_ids)
    matrix = [[default for _ in range(n)] for _ in range(n)]
    for i, override in enumerate(doc.get("overrides") or []):
        opath = f"{path}.overrides[{i}]"
        if not isinstance(override, dict):
            raise ConfigError(f"{opath}: expected a mapping")
        src = _require(override, "from", opath)
        dst = _require(override, "to", opath)
        for node in (src, dst):
            if node not in node_ids:
                raise ConfigError(f"{opath}: unknown node {node!r}")
        spec = {k: v for k, v in override.items()
                if k not in ("from", "to", "symmetric")}
        link = _take(spec, opath, LinkSpec)
        matrix[node_ids.index(src)][node_ids.index(dst)] = link
        if override.get("symmetric", True):
            matrix[node_ids.index(dst)][node_ids.index(src)] = link
    return tuple(tuple(row) for row in matrix)


def _parse_profile(name: str, doc: dict, path: str) -> ProfileConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping")
    nodes_doc = _require(doc, "nodes", path)
    if not isinstance(nodes_doc, list) or not nodes_doc:
        raise ConfigError(f"{path}.nodes: expected a nonempty list")
    nodes = tuple(_take(nd, f"{path}.nodes[{i}]", NodeSpec)
                  for i, nd in enumerate(nodes_doc))
    node_ids = [n.id for n in nodes]
    links = _parse_links(doc.get("links"), node_ids, f"{path}.links")
    topology = ClusterTopology(
        nodes=nodes, links=links,
        replica_factor=int(doc.get("replica_factor", 2)),
        tokens=int(doc.get("tokens", 256)),
        consistency=str(doc.get("consistency", "quorum")),
        loadgen_node=str(doc.get("loadgen_node", "loadgen")))
    try:
        topology.validate()
    except TopologyError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    chaos = _take(doc.get("chaos"), f"{path}.chaos", ChaosProfile)
    try:
        chaos.validate()
    except TopologyError as exc:
        raise ConfigError(f"{path}.chaos: {exc}") from exc
    return ProfileConfig(name=name, topology=topology, chaos=chaos)


def parse_config(doc: dict, source: str = "config") -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    cfg = ExperimentConfig(raw=doc)
    known = {"seed", "output_dir", "simulator", "workload", "op_types",
             "sensor", "dataset", "model", "tuning", "evaluation", "anova",
             "service"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {sorted(unknown)}")

    if "seed" in doc:
        if not isinstance(doc["seed"], int):
            raise ConfigError("seed: must be an integer (explicit, no wall-clock)")
        cfg.seed = doc["seed"]
    cfg.output_dir = str(doc.get("output_dir", cfg.output_dir))

    sim = doc.get("simulator") or {}
    if not isinstance(sim, dict):
        raise ConfigError("simulator: expected a mapping")
    cfg.constants = _take(sim.get("constants"), "simulator.constants", SimConstants)
    profiles_doc = sim.get("profiles") or {}
    if not isinstance(profiles_doc, dict):
        raise ConfigError("simulator.profiles: expected a mapping")
    for name, pdoc in profiles_doc.items():
        cfg.profiles[name] = _parse_profile(name, pdoc, f"simulator.profiles.{name}")

    cfg.workload = _take(doc.get("workload"), "workload", WorkloadPlan)
    try:
        cfg.workload.validate()
    except ValueError as exc:
        raise ConfigError(f"workload: {exc}") from exc

    if "op_types" in doc:
        ops = doc["op_types"]
        if not isinstance(ops, list) or not ops:
            raise ConfigError("op_types: expected a nonempty list")
        for op in ops:
            if op not in ("write", "read"):
                raise ConfigError(f"op_types: unknown op {op!r}")
        cfg.op_types = tuple(ops)

    sensor = doc.get("sensor") or {}
    if sensor:
        cfg.sensor_interval_s = float(sensor.get("interval_s", cfg.sensor_interval_s))
        cfg.sensor_duration_s = float(sensor.get("duration_s", cfg.sensor_duration_s))

    cfg.dataset = _take(doc.get("dataset"), "dataset", DatasetConfig)
    if cfg.dataset.window < 1:
        raise ConfigError("dataset.window: must be >= 1")

    model_doc = dict(doc.get("model") or {})
    hp_doc = model_doc.pop("hyperparams", None)
    kind = str(model_doc.pop("kind", "forest"))
    if model_doc:
        raise ConfigError(f"model: unknown key(s) {sorted(model_doc)}")
    hp = _take(hp_doc, "model.hyperparams", Hyperparams)
    cfg.model = ModelConfig(kind=kind, hyperparams=hp)

    cfg.tuning = _take(doc.get("tuning"), "tuning", TuningConfig)
    cfg.evaluation = _take(doc.get("evaluation"), "evaluation", EvaluationConfig)

    anova_doc = dict(doc.get("anova") or {})
    design_doc = anova_doc.pop("design", None)
    design = _take(design_doc, "anova.design", FactorialDesign,
                   delay_levels_ms=tuple, loss_levels=tuple, token_levels=tuple)
    replicates = int(anova_doc.pop("replicates", 6))
    op_type = str(anova_doc.pop("op_type", "write"))
    if anova_doc:
        raise ConfigError(f"anova: unknown key(s) {sorted(anova_doc)}")
    cfg.anova = AnovaConfig(replicates=replicates, design=design, op_type=op_type)

    cfg.service = _take(doc.get("service"), "service", ServiceConfig)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return parse_config(doc or {}, source=str(path))
