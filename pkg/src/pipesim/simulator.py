"""Deterministic discrete-event simulation of a pipeline plan.

Workers replay their static 1F1B order with real durations from the profile:
a pass occupies its worker for the stage's summed forward or backward layer
time, boundary crossings take the activation-transfer time in each direction
over a serial per-boundary link, and weight synchronization of replicated
stages is folded into the backward occupancy so a stage's effective
per-minibatch cost matches the planner's max(compute, sync) model.

A version ledger records exactly which parameter version every pass read:

* naive_pipeline: each pass reads the stage's latest committed version at the
  moment compute starts, so a minibatch's forward and backward can disagree;
* weight_stashing: the backward pass reuses the version its forward recorded;
* vertical_sync: the version seen at the input stage travels with the
  minibatch and every stage uses it for both passes.

Updates commit when a backward pass completes at a stage. Event ties are
broken by (time, event kind, worker, backward-first, minibatch) so identical
configurations produce bit-identical reports, ledgers, and traces.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .costmodel import CostContext, comm_time_activations, weight_sync_time
from .errors import SimulationError, ValidationError
from .partitioner import Plan
from .schedule import Direction, Schedule, build_schedule, replica_for


class Mode(str, Enum):
    NAIVE_PIPELINE = "naive_pipeline"
    WEIGHT_STASHING = "weight_stashing"
    VERTICAL_SYNC = "vertical_sync"


@dataclass
class SimConfig:
    plan: Plan
    mode: Mode
    num_minibatches: int
    max_inflight: int | None = None  # None -> plan NOAM; 1 -> model parallelism
    overlap_comm: bool = True

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.max_inflight is not None and not (
            1 <= self.max_inflight <= self.plan.noam
        ):
            raise ValidationError(
                f"max_inflight must be within 1..NOAM={self.plan.noam}"
            )
        if self.num_minibatches < self.plan.noam + 10:
            raise ValidationError(
                "num_minibatches must be at least NOAM + 10 to reach steady state"
            )

    @property
    def effective_inflight(self) -> int:
        return self.plan.noam if self.max_inflight is None else self.max_inflight


@dataclass
class VersionLedger:
    """Write-once record of the weight version used by every pass.

    Version v means "initial weights plus the updates of minibatches 1..v";
    v = 0 is the initial state. ``stage_replications`` records the plan shape
    the ledger came from, since the staleness equations only apply to straight
    pipelines.
    """

    n_stages: int
    stage_replications: tuple[int, ...]
    entries: dict[tuple[int, int, Direction], int] = field(default_factory=dict)
    latest: dict[int, int] = field(default_factory=dict)

    def record(self, stage: int, minibatch: int, direction: Direction, version: int) -> None:
        key = (stage, minibatch, direction)
        if key in self.entries:
            raise ValidationError(f"ledger entry {key} written twice")
        self.entries[key] = version

    def version_used(self, stage: int, minibatch: int, direction: Direction) -> int:
        return self.entries[(stage, minibatch, direction)]

    @property
    def minibatches(self) -> list[int]:
        return sorted({mb for (_, mb, _) in self.entries})

    @property
    def is_straight(self) -> bool:
        return all(r == 1 for r in self.stage_replications)


@dataclass(frozen=True)
class TraceEvent:
    time_start: float
    time_end: float
    worker: int
    minibatch: int
    stage: int
    direction: Direction
    version_used: int


@dataclass
class SimReport:
    makespan: float
    steady_throughput: float
    per_worker_utilization: tuple[float, ...]
    comm_bytes_total: float
    peak_versions_per_stage: dict[int, int]
    peak_inflight_per_stage: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "makespan": self.makespan,
            "steady_throughput": self.steady_throughput,
            "per_worker_utilization": list(self.per_worker_utilization),
            "comm_bytes_total": self.comm_bytes_total,
            "peak_versions_per_stage": {
                str(k): v for k, v in sorted(self.peak_versions_per_stage.items())
            },
            "peak_inflight_per_stage": {
                str(k): v for k, v in sorted(self.peak_inflight_per_stage.items())
            },
        }


@dataclass
class SimResult:
    report: SimReport
    ledger: VersionLedger
    trace: list[TraceEvent]


# event kinds, in tie-break order at equal timestamps
_EV_ARRIVAL = 0
_EV_DONE = 1
_EV_FREE = 2


class _Engine:
    def __init__(self, cfg: SimConfig, ctx: CostContext, schedule: Schedule):
        plan = cfg.plan
        if plan.num_layers != ctx.num_layers:
            raise ValidationError(
                f"plan covers {plan.num_layers} layers, profile has {ctx.num_layers}"
            )
        self.cfg = cfg
        self.ctx = ctx
        self.plan = plan
        self.schedule = schedule
        self.n_stages = plan.num_stages

        self.fwd_dur: list[float] = []
        self.bwd_dur: list[float] = []
        self.sync_bytes: list[float] = []
        for st in plan.stages:
            layers = ctx.profile.layers[st.first_layer - 1 : st.last_layer]
            f = sum(l.fwd_time for l in layers)
            b = sum(l.bwd_time for l in layers)
            sync = weight_sync_time(ctx, st.first_layer, st.last_layer, st.replication)
            # replication splits minibatches, not one minibatch's work; the
            # sync excess beyond compute rides on the backward pass so the
            # per-minibatch occupancy equals max(compute, sync)
            self.fwd_dur.append(f)
            self.bwd_dur.append(b + max(0.0, sync - (f + b)))
            w_bytes = (
                ctx.prefix_W_bytes[st.last_layer] - ctx.prefix_W_bytes[st.first_layer - 1]
            )
            self.sync_bytes.append(
                (st.replication - 1) * w_bytes if st.replication > 1 else 0.0
            )

        # boundary s sits between stages s and s+1; one serial link each
        self.link_delay = [
            comm_time_activations(ctx, st.last_layer) for st in plan.stages[:-1]
        ]
        self.link_free = [0.0] * max(0, self.n_stages - 1)
        self.act_bytes = [
            ctx.profile.layers[st.last_layer - 1].activation_elems * ctx.hw.bytes_per_elem
            for st in plan.stages[:-1]
        ]

        n_workers = len(schedule.workers)
        self.pos = [0] * n_workers
        self.busy = [False] * n_workers
        self.blocked_until = [0.0] * n_workers  # for non-overlapped sends
        self.ready: dict[tuple[int, int, Direction], float] = {}

        self.ledger = VersionLedger(
            n_stages=self.n_stages,
            stage_replications=tuple(st.replication for st in plan.stages),
        )
        self.latest = [0] * self.n_stages
        self.stash: dict[tuple[int, int], int] = {}
        self.vertical_tag: dict[int, int] = {}

        self.active = [0] * self.n_stages
        self.peak_active = [0] * self.n_stages
        self.live_versions = [0] * self.n_stages
        self.peak_versions = [0] * self.n_stages

        self.trace: list[TraceEvent] = []
        self.comm_bytes = 0.0
        self.completion: dict[int, float] = {}
        self.makespan = 0.0

        self._heap: list[tuple] = []
        self._seq = 0

    def _push(self, time: float, kind: int, worker: int, direction_rank: int, mb: int, payload: tuple):
        self._seq += 1
        heapq.heappush(
            self._heap, (time, kind, worker, direction_rank, mb, self._seq, payload)
        )

    # -- version bookkeeping ------------------------------------------------

    def _version_for_start(self, stage: int, mb: int, direction: Direction) -> int:
        mode = self.cfg.mode
        if direction is Direction.FORWARD:
            if mode is Mode.VERTICAL_SYNC:
                if stage == 0:
                    self.vertical_tag[mb] = self.latest[0]
                return self.vertical_tag[mb]
            version = self.latest[stage]
            if mode is Mode.WEIGHT_STASHING:
                self.stash[(stage, mb)] = version
            return version
        if mode is Mode.WEIGHT_STASHING:
            return self.stash[(stage, mb)]
        if mode is Mode.VERTICAL_SYNC:
            return self.vertical_tag[mb]
        return self.latest[stage]

    # -- engine -------------------------------------------------------------

    def _try_start(self, worker: int, now: float) -> None:
        if self.busy[worker]:
            return
        order = self.schedule.orders[worker]
        if self.pos[worker] >= len(order):
            return
        item = order[self.pos[worker]]
        key = (item.stage_index, item.minibatch_id, item.direction)
        if item.stage_index == 0 and item.direction is Direction.FORWARD:
            ready_at = 0.0
        elif key in self.ready:
            ready_at = self.ready[key]
        else:
            return  # dependency not arrived yet
        start = max(now, ready_at, self.blocked_until[worker])
        if start > now:
            # non-overlap mode can leave the worker formally blocked; re-poke
            # via a FREE event at the block boundary
            self._push(start, _EV_FREE, worker, 2, item.minibatch_id, ())
            return
        version = self._version_for_start(item.stage_index, item.minibatch_id, item.direction)
        self.ledger.record(item.stage_index, item.minibatch_id, item.direction, version)
        s = item.stage_index
        if item.direction is Direction.FORWARD:
            self.active[s] += 1
            self.peak_active[s] = max(self.peak_active[s], self.active[s])
            if self.cfg.mode is not Mode.NAIVE_PIPELINE:
                self.live_versions[s] += 1
                self.peak_versions[s] = max(self.peak_versions[s], self.live_versions[s])
            duration = self.fwd_dur[s]
            dir_rank = 1
        else:
            duration = self.bwd_dur[s]
            dir_rank = 0
        self.busy[worker] = True
        self._push(start + duration, _EV_DONE, worker, dir_rank, item.minibatch_id, (start, version))

    def _send(self, boundary: int, end: float, target_key: tuple, target_worker: int, sender: int) -> None:
        start = max(end, self.link_free[boundary])
        arrive = start + self.link_delay[boundary]
        self.link_free[boundary] = arrive
        self.comm_bytes += self.act_bytes[boundary]
        direction_rank = 0 if target_key[2] is Direction.BACKWARD else 1
        self._push(arrive, _EV_ARRIVAL, target_worker, direction_rank, target_key[1], (target_key,))
        if not self.cfg.overlap_comm:
            self.blocked_until[sender] = max(self.blocked_until[sender], arrive)

    def _on_done(self, worker: int, now: float, mb: int, payload: tuple) -> None:
        start, version = payload
        order = self.schedule.orders[worker]
        item = order[self.pos[worker]]
        s = item.stage_index
        self.trace.append(
            TraceEvent(start, now, worker, mb, s, item.direction, version)
        )
        self.pos[worker] += 1
        self.busy[worker] = False

        if item.direction is Direction.FORWARD:
            if s < self.n_stages - 1:
                nxt = self.plan.stages[s + 1]
                target = (s + 1, mb, Direction.FORWARD)
                target_worker = self.schedule.worker_id(s + 1, replica_for(mb, nxt.replication))
                self._send(s, now, target, target_worker, worker)
            else:
                # loss computed locally; backward becomes ready immediately
                self.ready[(s, mb, Direction.BACKWARD)] = now
        else:
            self.latest[s] = max(self.latest[s], mb)
            self.ledger.latest[s] = self.latest[s]
            self.active[s] -= 1
            if self.cfg.mode is not Mode.NAIVE_PIPELINE:
                self.live_versions[s] -= 1
            if self.sync_bytes[s]:
                self.comm_bytes += self.sync_bytes[s]
            if s > 0:
                prev = self.plan.stages[s - 1]
                target = (s - 1, mb, Direction.BACKWARD)
                target_worker = self.schedule.worker_id(s - 1, replica_for(mb, prev.replication))
                self._send(s - 1, now, target, target_worker, worker)
            else:
                self.completion[mb] = now
        self._try_start(worker, now)

    def run(self) -> None:
        for worker in range(len(self.schedule.workers)):
            self._try_start(worker, 0.0)
        while self._heap:
            time, kind, worker, _dir_rank, mb, _seq, payload = heapq.heappop(self._heap)
            self.makespan = max(self.makespan, time)
            if kind == _EV_DONE:
                self._on_done(worker, time, mb, payload)
            elif kind == _EV_ARRIVAL:
                (target_key,) = payload
                self.ready[target_key] = time
                self._try_start(worker, time)
            else:  # _EV_FREE
                self._try_start(worker, time)
        pending = [
            (w, self.schedule.orders[w][self.pos[w]])
            for w in range(len(self.schedule.workers))
            if self.pos[w] < len(self.schedule.orders[w])
        ]
        if pending:
            w, item = pending[0]
            s, r = self.schedule.workers[w]
            raise SimulationError(
                f"deadlock: worker {w} (stage {s}, replica {r}) blocked waiting for "
                f"{item.direction.value} of minibatch {item.minibatch_id}"
                f" ({len(pending)} workers blocked in total)"
            )

    def report(self) -> SimReport:
        cfg = self.cfg
        # discard the pipeline fill (all in-flight minibatches plus one
        # staircase traversal) at the head and the drain at the tail; the
        # in-flight total is the per-replica budget times input replication
        m0 = self.plan.stages[0].replication
        inflight_total = cfg.effective_inflight * m0
        k1 = inflight_total + self.n_stages
        k2 = cfg.num_minibatches - inflight_total
        # align the window to whole round-robin cycles of the input stage so
        # grouped completions do not bias the rate estimate
        k2 -= (k2 - k1) % m0
        if k2 <= k1:
            raise SimulationError(
                f"no steady window: need num_minibatches > "
                f"{2 * inflight_total + self.n_stages + m0}, got {cfg.num_minibatches}"
            )
        t1, t2 = self.completion[k1], self.completion[k2]
        throughput = (k2 - k1) / (t2 - t1)

        busy = [0.0] * len(self.schedule.workers)
        for ev in self.trace:
            lo = max(ev.time_start, t1)
            hi = min(ev.time_end, t2)
            if hi > lo:
                busy[ev.worker] += hi - lo
        utilization = tuple(b / (t2 - t1) for b in busy)

        peak_versions = {
            s: (1 if cfg.mode is Mode.NAIVE_PIPELINE else self.peak_versions[s])
            for s in range(self.n_stages)
        }
        return SimReport(
            makespan=self.makespan,
            steady_throughput=throughput,
            per_worker_utilization=utilization,
            comm_bytes_total=self.comm_bytes,
            peak_versions_per_stage=peak_versions,
            peak_inflight_per_stage={s: self.peak_active[s] for s in range(self.n_stages)},
        )


def run(cfg: SimConfig, ctx: CostContext, schedule: Schedule | None = None) -> SimResult:
    """Simulate a configuration; the result bundles report, ledger, and trace.

    ``schedule`` is normally derived from the plan; passing one explicitly is
    for tests that need to exercise malformed work orders.
    """
    if schedule is None:
        schedule = build_schedule(cfg.plan, cfg.num_minibatches, cfg.max_inflight)
    engine = _Engine(cfg, ctx, schedule)
    engine.run()
    return SimResult(report=engine.report(), ledger=engine.ledger, trace=engine.trace)


@dataclass(frozen=True)
class StalenessViolation:
    stage_index: int
    minibatch_id: int
    direction: Direction
    expected: int
    actual: int


def staleness_check(ledger: VersionLedger, mode: Mode, n_stages: int) -> list[StalenessViolation]:
    """Compare ledger versions against the closed-form staleness rules.

    For a straight n-stage pipeline running full (max_inflight = NOAM = n):
    weight stashing must read version max(0, m - n + i - 1) at 1-based stage i
    for minibatch m (both passes), and vertical sync must read max(0, m - n)
    everywhere. For naive pipelining the check instead reports every
    minibatch whose forward and backward versions disagree at a stage, which
    is the inconsistency the other two modes exist to remove.

    Returns the list of violations; empty means the ledger matches.
    """
    mode = Mode(mode)
    if not ledger.is_straight:
        raise ValidationError(
            "staleness equations apply to straight pipelines only "
            f"(replications: {ledger.stage_replications})"
        )
    if n_stages != ledger.n_stages:
        raise ValidationError(
            f"ledger has {ledger.n_stages} stages, expected {n_stages}"
        )
    n = n_stages
    violations = []
    for mb in ledger.minibatches:
        for s in range(n_stages):
            fwd = ledger.version_used(s, mb, Direction.FORWARD)
            bwd = ledger.version_used(s, mb, Direction.BACKWARD)
            if mode is Mode.NAIVE_PIPELINE:
                if fwd != bwd:
                    violations.append(
                        StalenessViolation(s, mb, Direction.BACKWARD, fwd, bwd)
                    )
                continue
            if mode is Mode.WEIGHT_STASHING:
                expected = max(0, mb - n + s)  # 1-based stage i = s+1
            else:
                expected = max(0, mb - n)
            for direction, actual in ((Direction.FORWARD, fwd), (Direction.BACKWARD, bwd)):
                if actual != expected:
                    violations.append(
                        StalenessViolation(s, mb, direction, expected, actual)
                    )
    return violations


def analytic_throughput(plan: Plan) -> float:
    return 1.0 / plan.bottleneck_time


def compare_analytic(report: SimReport, plan: Plan) -> float:
    """Relative error between simulated steady throughput and 1/bottleneck."""
    predicted = analytic_throughput(plan)
    return abs(report.steady_throughput - predicted) / predicted


def write_trace_csv(trace: list[TraceEvent], path: str | Path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["time_start", "time_end", "worker", "minibatch", "stage", "direction", "version_used"]
        )
        for ev in trace:
            writer.writerow(
                [
                    repr(ev.time_start),
                    repr(ev.time_end),
                    ev.worker,
                    ev.minibatch,
                    ev.stage,
                    ev.direction.value,
                    ev.version_used,
                ]
            )
