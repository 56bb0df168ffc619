"""Static 1F1B work orders: which pass runs where, in what sequence.

Scheduling is fully static: the per-worker sequence depends only on the plan,
the in-flight budget, and the minibatch count, never on timing. A worker
serving stage s (replica r) owns the minibatches round-robin assigned to it,
performs a warm-up run of forward passes until its in-flight cap is reached,
and then strictly alternates one backward and one forward pass, draining the
remaining backwards once the forward stream is exhausted.

The in-flight cap at the input stage is the plan's NOAM (optionally overridden
by ``max_inflight``; 1 reproduces traditional model parallelism). Later stages
hold ceil(machines from that stage onward / own replication) minibatches,
which telescopes down to a single in-flight minibatch at the output stage.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import ValidationError
from .partitioner import Plan


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class WorkItem:
    minibatch_id: int
    stage_index: int  # 0-based position in plan.stages
    replica_index: int  # 0-based within the stage
    direction: Direction


def replica_for(minibatch_id: int, replication: int) -> int:
    """Round-robin dispatch: minibatch 1 lands on replica 0.

    The same minibatch maps to the same replica for its forward and backward
    pass at a stage.
    """
    if replication < 1:
        raise ValidationError("replication must be >= 1")
    return (minibatch_id - 1) % replication


def stage_inflight_caps(plan: Plan, max_inflight: int | None = None) -> list[int]:
    """Per-stage cap on minibatches a single replica keeps in flight.

    Stage s keeps ceil(machines from stage s onward / replication of s) of its
    own minibatches admitted-but-incomplete; for the input stage this is NOAM.
    ``max_inflight`` lowers every cap uniformly (must stay within 1..NOAM).
    """
    if max_inflight is not None and not (1 <= max_inflight <= plan.noam):
        raise ValidationError(
            f"max_inflight must be within 1..NOAM={plan.noam}, got {max_inflight}"
        )
    caps = []
    remaining = plan.machines_used
    for st in plan.stages:
        cap = -(-remaining // st.replication)
        if max_inflight is not None:
            cap = min(cap, max_inflight)
        caps.append(max(1, cap))
        remaining -= st.replication
    return caps


def assigned_minibatches(replication: int, replica_index: int, num_minibatches: int) -> list[int]:
    return [
        k
        for k in range(1, num_minibatches + 1)
        if replica_for(k, replication) == replica_index
    ]


def worker_order(
    plan: Plan,
    stage_index: int,
    replica_index: int,
    num_minibatches: int,
    max_inflight: int | None = None,
) -> list[WorkItem]:
    """The exact sequence of passes one worker executes, in order."""
    caps = stage_inflight_caps(plan, max_inflight)
    stage = plan.stages[stage_index]
    if not (0 <= replica_index < stage.replication):
        raise ValidationError(
            f"replica {replica_index} out of range for stage {stage_index}"
        )
    mine = assigned_minibatches(stage.replication, replica_index, num_minibatches)

    def fwd(k):
        return WorkItem(k, stage_index, replica_index, Direction.FORWARD)

    def bwd(k):
        return WorkItem(k, stage_index, replica_index, Direction.BACKWARD)

    warmup = min(caps[stage_index], len(mine))
    order = [fwd(k) for k in mine[:warmup]]
    for t, k in enumerate(mine):
        order.append(bwd(k))
        nxt = warmup + t
        if nxt < len(mine):
            order.append(fwd(mine[nxt]))
    return order


@dataclass(frozen=True)
class Schedule:
    """All per-worker orders for a plan; workers are numbered stage-major."""

    plan: Plan
    num_minibatches: int
    max_inflight: int | None
    workers: tuple[tuple[int, int], ...]  # worker_id -> (stage_index, replica_index)
    orders: tuple[tuple[WorkItem, ...], ...]

    def worker_id(self, stage_index: int, replica_index: int) -> int:
        return (
            sum(st.replication for st in self.plan.stages[:stage_index]) + replica_index
        )


def build_schedule(
    plan: Plan, num_minibatches: int, max_inflight: int | None = None
) -> Schedule:
    if num_minibatches < 1:
        raise ValidationError("num_minibatches must be >= 1")
    workers = []
    orders = []
    for s, st in enumerate(plan.stages):
        for r in range(st.replication):
            workers.append((s, r))
            orders.append(
                tuple(worker_order(plan, s, r, num_minibatches, max_inflight))
            )
    return Schedule(
        plan=plan,
        num_minibatches=num_minibatches,
        max_inflight=max_inflight,
        workers=tuple(workers),
        orders=tuple(orders),
    )


def write_schedule_csv(schedule: Schedule, path: str | Path, header_comment: str | None = None) -> None:
    """Flat trace of the static schedule: (worker, seq, minibatch, stage, direction)."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["worker", "seq", "minibatch", "stage", "direction"])
        for wid, order in enumerate(schedule.orders):
            for seq, item in enumerate(order):
                writer.writerow(
                    [wid, seq, item.minibatch_id, item.stage_index, item.direction.value]
                )
