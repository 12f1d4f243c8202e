"""Shared fixtures: small clusters plus the frozen default dataset."""

from __future__ import annotations

import random
from dataclasses import dataclass

import pytest

from slice_forecast import datasetgen, telemetry, workload
from slice_forecast.simcluster import (ClusterTopology, LinkSpec, NodeSpec,
                                       SimConstants, build_cluster,
                                       uniform_links)

FROZEN_SEED = 4242


def make_topology(n_replicas: int = 3, base_delay_ms: float = 1.0,
                  jitter=(0.0, 0.0), loss: float = 0.0, service_us: int = 0,
                  replica_factor: int = 2, tokens: int = 256,
                  consistency: str = "quorum") -> ClusterTopology:
    nodes = tuple([NodeSpec("loadgen", 500)]
                  + [NodeSpec(f"cassandra-{i}", service_us)
                     for i in range(n_replicas)])
    link = LinkSpec(base_delay_ms=base_delay_ms, jitter_low_ms=jitter[0],
                    jitter_high_ms=jitter[1], loss_prob=loss)
    return ClusterTopology(nodes, uniform_links(len(nodes), link),
                           replica_factor=replica_factor, tokens=tokens,
                           consistency=consistency, loadgen_node="loadgen")


def frozen_topology() -> ClusterTopology:
    nodes = (NodeSpec("cassandra-0", 2500), NodeSpec("cassandra-1", 2800),
             NodeSpec("cassandra-2", 2600), NodeSpec("loadgen", 500))
    link = LinkSpec(base_delay_ms=6.0, jitter_low_ms=0.5, jitter_high_ms=2.5,
                    loss_prob=0.002)
    return ClusterTopology(nodes, uniform_links(4, link), replica_factor=2,
                           tokens=256, consistency="quorum",
                           loadgen_node="loadgen")


FROZEN_CONSTANTS = SimConstants(c_load=1.5)
FROZEN_PLAN = workload.WorkloadPlan(op_type="write", row_budget=25_000,
                                    warmup_rows=1_000)


@dataclass
class FrozenBundle:
    cluster: object
    trace: workload.WorkloadTrace
    table: telemetry.TimeSeriesTable


def build_frozen_table(seed: int = FROZEN_SEED) -> FrozenBundle:
    cluster = build_cluster(frozen_topology(), seed, FROZEN_CONSTANTS)
    trace = workload.run_workload(cluster, FROZEN_PLAN, random.Random(seed))
    duration = len(trace.process_counts)
    streams = [telemetry.collect_application(trace),
               telemetry.collect_cluster(cluster, duration),
               telemetry.collect_network(cluster, duration)]
    table = telemetry.clean(telemetry.align_and_merge(streams))
    return FrozenBundle(cluster=cluster, trace=trace, table=table)


@pytest.fixture(scope="session")
def frozen_bundle() -> FrozenBundle:
    return build_frozen_table()


@pytest.fixture(scope="session")
def frozen_table(frozen_bundle) -> telemetry.TimeSeriesTable:
    return frozen_bundle.table


@pytest.fixture(scope="session")
def frozen_splits(frozen_table):
    return datasetgen.build_splits(frozen_table, window=50,
                                   provenance="frozen-write")


@pytest.fixture(scope="session")
def frozen_lagged_splits(frozen_table):
    return datasetgen.build_splits(frozen_table, window=50,
                                   include_lagged_target=True,
                                   provenance="frozen-write")
