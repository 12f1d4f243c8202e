"""Deterministic discrete-event simulator of a quorum-replicated key-value store.

A cluster is a set of nodes joined by lossy, jittery links. A load-generator
node acts as coordinator: each submitted operation fans out to a replica set,
every replica leg pays a one-way message delay (with retransmissions on loss),
a service time, and a return delay, and the operation completes when the
consistency level's quorum of replies has arrived. All state advances through
a single event queue ordered by (timestamp, insertion sequence), and the clock
is integer microseconds, so identical seeds reproduce runs bit-exactly.
"""

from __future__ import annotations

import csv
import heapq
import math
import random
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

US_PER_MS = 1_000
US_PER_S = 1_000_000

OP_WRITE = "write"
OP_READ = "read"

CONSISTENCY_LEVELS = ("one", "quorum", "all")


class TopologyError(ValueError):
    """Raised when a cluster description violates one of its invariants."""


class SimulationError(RuntimeError):
    """Raised when the simulator is driven outside its contract."""


@dataclass(frozen=True)
class NodeSpec:
    id: str
    base_service_time_us: int = 400
    cpu_capacity: float = 1.0


@dataclass(frozen=True)
class LinkSpec:
    base_delay_ms: float = 1.0
    jitter_low_ms: float = 0.0
    jitter_high_ms: float = 0.0
    loss_prob: float = 0.0


@dataclass(frozen=True)
class ChaosProfile:
    """Extra delay, jitter and loss layered on top of every link."""

    delay_base_ms: float = 0.0
    jitter_low_ms: float = 0.0
    jitter_high_ms: float = 0.0
    loss_prob: float = 0.0

    def validate(self) -> None:
        if self.jitter_low_ms > self.jitter_high_ms:
            raise TopologyError("chaos jitter_low_ms exceeds jitter_high_ms")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise TopologyError("chaos loss_prob outside [0, 1]")
        if self.delay_base_ms < 0 or self.jitter_low_ms < 0:
            raise TopologyError("chaos delays must be nonnegative")


ZERO_CHAOS = ChaosProfile()


@dataclass(frozen=True)
class SimConstants:
    """Tunable coefficients of the latency model (config-overridable)."""

    c_load: float = 0.02              # service-time inflation per op in flight
    c_token_ms: float = 0.01          # ms added per log2(tokens)
    read_service_factor: float = 1.5  # reads skip no cache, pay a longer path
    rto_ms: float = 200.0             # retransmission timeout, doubled per loss
    max_retries: int = 3
    abort_timeout_ms: float = 5000.0  # error latency when a quorum is unreachable
    write_request_bytes: int = 512
    write_response_bytes: int = 64
    read_request_bytes: int = 64
    read_response_bytes: int = 512
    # telemetry synthesis (consumed by the collectors, kept here so one file
    # configures the whole simulated slice)
    cpu_idle_util: float = 0.02
    ram_base_mb: float = 512.0
    c_ram_mb: float = 0.5             # MB per op in flight
    c_interrupts: float = 50.0        # interrupts per message handled
    noise_sigma_cpu: float = 0.01
    noise_sigma_ram_mb: float = 4.0
    noise_sigma_interrupts: float = 20.0


@dataclass(frozen=True)
class ClusterTopology:
    nodes: tuple[NodeSpec, ...]
    links: tuple[tuple[LinkSpec, ...], ...]
    replica_factor: int = 2
    tokens: int = 256
    consistency: str = "quorum"
    loadgen_node: str = "loadgen"

    def validate(self) -> None:
        n = len(self.nodes)
        if n == 0:
            raise TopologyError("topology has no nodes")
        ids = [node.id for node in self.nodes]
        if len(set(ids)) != n:
            raise TopologyError("duplicate node ids")
        if self.loadgen_node not in ids:
            raise TopologyError(f"loadgen_node {self.loadgen_node!r} is not a cluster node")
        if self.replica_factor < 1:
            raise TopologyError("replica_factor must be >= 1")
        if self.replica_factor > n:
            raise TopologyError("replica_factor exceeds node count")
        if self.tokens < 1:
            raise TopologyError("tokens must be >= 1")
        if self.consistency not in CONSISTENCY_LEVELS:
            raise TopologyError(f"unknown consistency {self.consistency!r}")
        if len(self.links) != n or any(len(row) != n for row in self.links):
            raise TopologyError("links must form an n x n matrix")
        for row in self.links:
            for link in row:
                if not 0.0 <= link.loss_prob <= 1.0:
                    raise TopologyError("link loss_prob outside [0, 1]")
                if link.base_delay_ms < 0 or link.jitter_low_ms < 0:
                    raise TopologyError("link delays must be nonnegative")
                if link.jitter_low_ms > link.jitter_high_ms:
                    raise TopologyError("link jitter_low_ms exceeds jitter_high_ms")

    def node_index(self, node_id: str) -> int:
        for i, node in enumerate(self.nodes):
            if node.id == node_id:
                return i
        raise TopologyError(f"unknown node {node_id!r}")


def uniform_links(n: int, link: LinkSpec) -> tuple[tuple[LinkSpec, ...], ...]:
    """Full mesh with the same spec on every (directed) link."""
    return tuple(tuple(link for _ in range(n)) for _ in range(n))


@dataclass(frozen=True)
class OpRequest:
    op_type: str
    key: int
    issue_time_us: int
    tag: str = ""

    def validate(self) -> None:
        if self.op_type not in (OP_WRITE, OP_READ):
            raise SimulationError(f"unknown op_type {self.op_type!r}")
        if self.issue_time_us < 0:
            raise SimulationError("issue_time_us must be >= 0")


@dataclass(frozen=True)
class CompletionEvent:
    op_type: str
    issue_time_us: int
    completion_time_us: int
    latency_us: int
    error: bool
    retransmissions: int
    bytes_tx: int
    bytes_rx: int
    tag: str = ""


class MessageOutcome(NamedTuple):
    delay_us: int
    retransmissions: int
    delivered: bool


def required_acks(replica_factor: int, consistency: str) -> int:
    """Replies needed before an operation counts as complete."""
    if consistency == "one":
        return 1
    if consistency == "quorum":
        return replica_factor // 2 + 1
    if consistency == "all":
        return replica_factor
    raise SimulationError(f"unknown consistency {consistency!r}")


def quorum_latency(replica_latencies: Sequence[float], replica_factor: int,
                   consistency: str) -> float:
    """k-th smallest replica latency, k set by the consistency level."""
    if len(replica_latencies) != replica_factor:
        raise SimulationError(
            f"expected {replica_factor} replica latencies, got {len(replica_latencies)}")
    if any(lat < 0 for lat in replica_latencies):
        raise SimulationError("replica latencies must be nonnegative")
    k = required_acks(replica_factor, consistency)
    return sorted(replica_latencies)[k - 1]


def sample_message_delay(link: LinkSpec, chaos: ChaosProfile, rng: random.Random,
                         *, rto_ms: float = 200.0,
                         max_retries: int = 3) -> MessageOutcome:
    """One-way message delay over a lossy link, retransmissions included.

    Every attempt pays chaos.delay_base + link base delay + link jitter +
    chaos jitter. A lost attempt (probability = combined link/chaos loss) adds
    a backoff of rto * 2**k after the k-th loss. Gives up after max_retries
    retries; the caller treats an undelivered message as a failed replica leg.
    """
    loss = 1.0 - (1.0 - link.loss_prob) * (1.0 - chaos.loss_prob)
    rto_us = int(round(rto_ms * US_PER_MS))
    total_us = 0
    for attempt in range(max_retries + 1):
        # Draw order (loss, link jitter, chaos jitter) is part of the contract:
        # raising loss_prob can only append attempts, never shrink the delay.
        lost = rng.random() < loss
        flight_ms = (chaos.delay_base_ms + link.base_delay_ms
                     + rng.uniform(link.jitter_low_ms, link.jitter_high_ms)
                     + rng.uniform(chaos.jitter_low_ms, chaos.jitter_high_ms))
        total_us += int(round(flight_ms * US_PER_MS))
        if not lost:
            return MessageOutcome(total_us, attempt, True)
        if attempt < max_retries:
            total_us += rto_us << attempt
    return MessageOutcome(total_us, max_retries, False)


# Event kinds, processed in (time, seq) order.
_EV_ARRIVE = 0
_EV_REPLICA_RECV = 1
_EV_REPLY = 2
_EV_ABORT = 3


class _NodeCounters:
    """Per-node activity, bucketed by integer second for the collectors."""

    __slots__ = ("bytes_tx", "bytes_rx", "drops", "retransmits", "messages",
                 "work_us")

    def __init__(self) -> None:
        self.bytes_tx: dict[int, int] = {}
        self.bytes_rx: dict[int, int] = {}
        self.drops: dict[int, int] = {}
        self.retransmits: dict[int, int] = {}
        self.messages: dict[int, int] = {}
        self.work_us: dict[int, int] = {}


class _OpState:
    __slots__ = ("op", "acks_needed", "replies", "failures", "retrans",
                 "bytes_tx", "bytes_rx", "done", "abort_scheduled")

    def __init__(self, op: OpRequest, acks_needed: int) -> None:
        self.op = op
        self.acks_needed = acks_needed
        self.replies = 0
        self.failures = 0
        self.retrans = 0
        self.bytes_tx = 0
        self.bytes_rx = 0
        self.done = False
        self.abort_scheduled = False


class SimCluster:
    """Single simulation instance; not safe for concurrent mutation."""

    def __init__(self, topology: ClusterTopology, seed: int,
                 constants: SimConstants = SimConstants()) -> None:
        topology.validate()
        self.topology = topology
        self.constants = constants
        self.seed = seed
        self.rng = random.Random(seed)
        self.chaos = ZERO_CHAOS
        self.now_us = 0
        self._queue: list[tuple] = []
        self._seq = 0
        self._completed: list[CompletionEvent] = []
        self.in_flight = 0
        self._coord = topology.node_index(topology.loadgen_node)
        candidates = [i for i in range(len(topology.nodes)) if i != self._coord]
        if len(candidates) < topology.replica_factor:
            candidates = list(range(len(topology.nodes)))
        self._replica_candidates = candidates
        self._token_cost_us = int(round(
            constants.c_token_ms * US_PER_MS * math.log2(topology.tokens)))
        self.node_counters = [_NodeCounters() for _ in topology.nodes]
        self.total_bytes_tx = 0
        self.total_bytes_rx = 0
        self.lost_bytes = 0
        self.total_retransmissions = 0
        # event-sampled ops-in-flight per second, for the RAM metric
        self._inflight_sum: dict[int, int] = {}
        self._inflight_n: dict[int, int] = {}

    # -- public driving surface ------------------------------------------------

    def apply_chaos(self, profile: ChaosProfile) -> None:
        """Use `profile` for every message sampled from now on."""
        profile.validate()
        self.chaos = profile

    def submit_op(self, op: OpRequest) -> None:
        op.validate()
        if op.issue_time_us < self.now_us:
            raise SimulationError(
                f"op issued at {op.issue_time_us} but clock is {self.now_us}")
        self._push(op.issue_time_us, _EV_ARRIVE, op)

    def advance(self, until_us: int) -> list[CompletionEvent]:
        """Process queued events up to `until_us` and return new completions."""
        if until_us < self.now_us:
            raise SimulationError("cannot advance backwards")
        queue = self._queue
        while queue and queue[0][0] <= until_us:
            time_us, _, kind, payload = heapq.heappop(queue)
            self.now_us = time_us
            self._dispatch(time_us, kind, payload)
        self.now_us = until_us
        done = self._completed
        self._completed = []
        return done

    def pending_events(self) -> int:
        return len(self._queue)

    # -- internals ---------------------------------------------------------------

    def _push(self, time_us: int, kind: int, payload) -> None:
        heapq.heappush(self._queue, (time_us, self._seq, kind, payload))
        self._seq += 1

    def _dispatch(self, time_us: int, kind: int, payload) -> None:
        if kind == _EV_ARRIVE:
            self._handle_arrive(time_us, payload)
        elif kind == _EV_REPLICA_RECV:
            self._handle_replica_recv(time_us, *payload)
        elif kind == _EV_REPLY:
            self._handle_reply(time_us, payload)
        else:
            self._handle_abort(time_us, payload)

    def _replica_set(self, key: int) -> list[int]:
        # Knuth multiplicative hash keeps placement independent of Python's
        # salted hash(); rf consecutive ring positions mimic token ownership.
        candidates = self._replica_candidates
        start = ((key * 2654435761) & 0xFFFFFFFF) % len(candidates)
        rf = self.topology.replica_factor
        return [candidates[(start + i) % len(candidates)] for i in range(rf)]

    def _service_time_us(self, node_idx: int, op_type: str) -> int:
        node = self.topology.nodes[node_idx]
        base = node.base_service_time_us
        if op_type == OP_READ:
            base = base * self.constants.read_service_factor
        load_factor = 1.0 + self.constants.c_load * self.in_flight
        return int(round(base * load_factor)) + self._token_cost_us

    def _send_message(self, src: int, dst: int, size: int, start_us: int,
                      state: _OpState) -> MessageOutcome:
        """Sample a message send, accounting every attempt at its actual time."""
        link = self.topology.links[src][dst]
        chaos = self.chaos
        consts = self.constants
        loss = 1.0 - (1.0 - link.loss_prob) * (1.0 - chaos.loss_prob)
        rng = self.rng
        rto_us = int(round(consts.rto_ms * US_PER_MS))
        src_counters = self.node_counters[src]
        dst_counters = self.node_counters[dst]
        t = start_us
        total_us = 0
        for attempt in range(consts.max_retries + 1):
            sec = t // US_PER_S
            _bump(src_counters.bytes_tx, sec, size)
            _bump(src_counters.messages, sec, 1)
            self.total_bytes_tx += size
            state.bytes_tx += size
            if attempt > 0:
                _bump(src_counters.retransmits, sec, 1)
                self.total_retransmissions += 1
                state.retrans += 1
            lost = rng.random() < loss
            flight_ms = (chaos.delay_base_ms + link.base_delay_ms
                         + rng.uniform(link.jitter_low_ms, link.jitter_high_ms)
                         + rng.uniform(chaos.jitter_low_ms, chaos.jitter_high_ms))
            flight_us = int(round(flight_ms * US_PER_MS))
            total_us += flight_us
            if not lost:
                arrive_sec = (t + flight_us) // US_PER_S
                _bump(dst_counters.bytes_rx, arrive_sec, size)
                _bump(dst_counters.messages, arrive_sec, 1)
                self.total_bytes_rx += size
                state.bytes_rx += size
                return MessageOutcome(total_us, attempt, True)
            _bump(src_counters.drops, sec, 1)
            self.lost_bytes += size
            if attempt < consts.max_retries:
                backoff = rto_us << attempt
                total_us += backoff
                t += flight_us + backoff
        return MessageOutcome(total_us, consts.max_retries, False)

    def _sample_inflight(self, time_us: int) -> None:
        sec = time_us // US_PER_S
        _bump(self._inflight_sum, sec, self.in_flight)
        _bump(self._inflight_n, sec, 1)

    def _handle_arrive(self, t: int, op: OpRequest) -> None:
        self.in_flight += 1
        self._sample_inflight(t)
        consts = self.constants
        if op.op_type == OP_WRITE:
            req_size, resp_size = consts.write_request_bytes, consts.write_response_bytes
        else:
            req_size, resp_size = consts.read_request_bytes, consts.read_response_bytes
        state = _OpState(op, required_acks(self.topology.replica_factor,
                                           self.topology.consistency))
        for replica in self._replica_set(op.key):
            outcome = self._send_message(self._coord, replica, req_size, t, state)
            if outcome.delivered:
                self._push(t + outcome.delay_us, _EV_REPLICA_RECV,
                           (state, replica, resp_size))
            else:
                self._register_failure(state)

    def _handle_replica_recv(self, t: int, state: _OpState, replica: int,
                             resp_size: int) -> None:
        service_us = self._service_time_us(replica, state.op.op_type)
        _bump(self.node_counters[replica].work_us, t // US_PER_S, service_us)
        outcome = self._send_message(replica, self._coord, resp_size,
                                     t + service_us, state)
        if outcome.delivered:
            self._push(t + service_us + outcome.delay_us, _EV_REPLY, state)
        else:
            self._register_failure(state)

    def _register_failure(self, state: _OpState) -> None:
        state.failures += 1
        rf = self.topology.replica_factor
        if rf - state.failures < state.acks_needed and not state.abort_scheduled:
            state.abort_scheduled = True
            abort_us = state.op.issue_time_us + int(round(
                self.constants.abort_timeout_ms * US_PER_MS))
            self._push(abort_us, _EV_ABORT, state)

    def _handle_reply(self, t: int, state: _OpState) -> None:
        if state.done:
            return
        state.replies += 1
        if state.replies >= state.acks_needed:
            state.done = True
            self.in_flight -= 1
            self._sample_inflight(t)
            op = state.op
            self._completed.append(CompletionEvent(
                op_type=op.op_type, issue_time_us=op.issue_time_us,
                completion_time_us=t, latency_us=t - op.issue_time_us,
                error=False, retransmissions=state.retrans,
                bytes_tx=state.bytes_tx, bytes_rx=state.bytes_rx, tag=op.tag))

    def _handle_abort(self, t: int, state: _OpState) -> None:
        if state.done:
            return
        state.done = True
        self.in_flight -= 1
        self._sample_inflight(t)
        op = state.op
        self._completed.append(CompletionEvent(
            op_type=op.op_type, issue_time_us=op.issue_time_us,
            completion_time_us=t, latency_us=t - op.issue_time_us,
            error=True, retransmissions=state.retrans,
            bytes_tx=state.bytes_tx, bytes_rx=state.bytes_rx, tag=op.tag))

    def inflight_mean(self, sec: int) -> float:
        """Event-sampled mean ops in flight during one second (0 if quiet)."""
        n = self._inflight_n.get(sec, 0)
        if n == 0:
            return 0.0
        return self._inflight_sum[sec] / n


def _bump(bucket: dict[int, int], key: int, amount: int) -> None:
    bucket[key] = bucket.get(key, 0) + amount


def build_cluster(topology: ClusterTopology, seed: int,
                  constants: SimConstants = SimConstants()) -> SimCluster:
    """Validate the topology and return a freshly seeded cluster at t=0."""
    return SimCluster(topology, seed, constants)


def export_trace_csv(events: Sequence[CompletionEvent], path) -> None:
    """`completion_time_us,op_type,latency_us,error,retransmissions` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["completion_time_us", "op_type", "latency_us",
                         "error", "retransmissions"])
        for ev in events:
            writer.writerow([ev.completion_time_us, ev.op_type, ev.latency_us,
                             int(ev.error), ev.retransmissions])
