"""Optimal stage partitioning via dynamic programming, plus a brute-force oracle.

The planner splits the layer chain into contiguous stages, assigns each stage
a replication factor, and minimizes the bottleneck: the slowest of all stage
times and boundary transfer times (2 * C_i per crossed boundary, activations
forward plus gradients backward). A pipeline over layers 1..j on exactly m
machines is either a single stage replicated m ways, or an optimal
sub-pipeline over 1..i on m-m' machines followed by one stage over i+1..j on
m' machines; the table of these subproblems is O(N*M) with O(N*M) work each.

``solve`` returns the best plan over any machine count up to the budget;
``brute_force`` enumerates every contiguous partition and replication
assignment for small instances and is used to verify ``solve``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

from .costmodel import CostContext, comm_time_activations, stage_time
from .errors import ValidationError

# absolute tolerance for comparing candidate bottleneck times inside the DP;
# keeps tie-breaking independent of float evaluation order
TIME_TOL = 1e-12

# brute-force guard against combinatorial blowup
BRUTE_FORCE_MAX_LAYERS = 12
BRUTE_FORCE_MAX_MACHINES = 8


@dataclass(frozen=True)
class Stage:
    """A contiguous run of layers served by ``replication`` machines."""

    first_layer: int
    last_layer: int
    replication: int

    def __post_init__(self):
        if self.first_layer > self.last_layer:
            raise ValidationError(
                f"stage range {self.first_layer}..{self.last_layer} is empty"
            )
        if self.replication < 1:
            raise ValidationError("stage replication must be >= 1")


@dataclass(frozen=True)
class Plan:
    """Ordered stages covering layers 1..N plus the plan-level summary numbers."""

    stages: tuple[Stage, ...]
    bottleneck_time: float
    noam: int
    machines_used: int

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValidationError("plan must contain at least one stage")
        expect = self.stages[0].first_layer
        if expect != 1:
            raise ValidationError("plan must start at layer 1")
        for st in self.stages:
            if st.first_layer != expect:
                raise ValidationError("plan stages must cover layers contiguously")
            expect = st.last_layer + 1
        if self.machines_used != sum(st.replication for st in self.stages):
            raise ValidationError("machines_used must equal the sum of replications")
        if self.noam != noam_for(self.machines_used, self.stages[0].replication):
            raise ValidationError("noam does not match ceil(machines / input replication)")

    @property
    def num_layers(self) -> int:
        return self.stages[-1].last_layer

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def config_string(self) -> str:
        """Replication factors joined with dashes, e.g. '7-1'."""
        return "-".join(str(st.replication) for st in self.stages)

    def to_dict(self) -> dict:
        return {
            "stages": [
                {
                    "first_layer": st.first_layer,
                    "last_layer": st.last_layer,
                    "replication": st.replication,
                }
                for st in self.stages
            ],
            "bottleneck_time": self.bottleneck_time,
            "noam": self.noam,
            "machines_used": self.machines_used,
        }


def plan_from_dict(doc: dict) -> Plan:
    try:
        stages = tuple(
            Stage(s["first_layer"], s["last_layer"], s["replication"])
            for s in doc["stages"]
        )
        return Plan(
            stages=stages,
            bottleneck_time=float(doc["bottleneck_time"]),
            noam=int(doc["noam"]),
            machines_used=int(doc["machines_used"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed plan document: {exc}") from exc


def load_plan(path: str | Path) -> Plan:
    return plan_from_dict(json.loads(Path(path).read_text()))


def noam_for(machines_used: int, input_replication: int) -> int:
    """ceil(machines / machines in the input stage): minibatches each input
    worker keeps in flight so the pipeline stays full in steady state."""
    return -(-machines_used // input_replication)


def noam(plan: Plan) -> int:
    return noam_for(plan.machines_used, plan.stages[0].replication)


def parse_config(text: str, n_layers: int | None = None) -> list[int]:
    """Parse a dash-separated replication string like '2-1-1' into [2, 1, 1].

    Fixes only the stage count and replication factors; layer ranges must come
    from ``solve`` or be supplied explicitly. If ``n_layers`` is given, the
    stage count is checked against it.
    """
    parts = text.strip().split("-")
    reps = []
    for part in parts:
        try:
            value = int(part)
        except ValueError as exc:
            raise ValidationError(f"config {text!r}: {part!r} is not an integer") from exc
        if value < 1:
            raise ValidationError(f"config {text!r}: replication must be positive")
        reps.append(value)
    if n_layers is not None and len(reps) > n_layers:
        raise ValidationError(
            f"config {text!r} has {len(reps)} stages but the model has {n_layers} layers"
        )
    return reps


def _single_stage_plan(ctx: CostContext, m: int) -> Plan:
    n = ctx.num_layers
    return Plan(
        stages=(Stage(1, n, m),),
        bottleneck_time=stage_time(ctx, 1, n, m),
        noam=noam_for(m, m),
        machines_used=m,
    )


def straight_plan(ctx: CostContext, stage_bounds: list[tuple[int, int]]) -> Plan:
    """Build a replication-1 plan from explicit (first_layer, last_layer) ranges."""
    stages = tuple(Stage(a, b, 1) for a, b in stage_bounds)
    twoc = [2.0 * comm_time_activations(ctx, st.last_layer) for st in stages[:-1]]
    bottleneck = max(
        max(stage_time(ctx, st.first_layer, st.last_layer, 1) for st in stages),
        max(twoc, default=0.0),
    )
    m = len(stages)
    return Plan(stages=stages, bottleneck_time=bottleneck, noam=m, machines_used=m)


class _Candidate:
    """DP cell: bottleneck time plus enough metadata for deterministic ties."""

    __slots__ = ("time", "n_stages", "split", "split_m")

    def __init__(self, time: float, n_stages: int, split: int, split_m: int):
        self.time = time
        self.n_stages = n_stages
        self.split = split  # 0 for a single stage, else last split layer index
        self.split_m = split_m  # replication of the final stage (0 for single)

    def beats(self, other: "_Candidate | None") -> bool:
        if other is None:
            return True
        if self.time < other.time - TIME_TOL:
            return True
        if self.time > other.time + TIME_TOL:
            return False
        # tie: prefer fewer stages, then the smaller latest split index, then
        # the smaller final-stage replication
        return (self.n_stages, self.split, self.split_m) < (
            other.n_stages,
            other.split,
            other.split_m,
        )


def solve(
    ctx: CostContext,
    machines: int | None = None,
    *,
    force_all_machines: bool = False,
    max_replication: int | None = None,
    stats: dict | None = None,
) -> Plan:
    """Find the plan minimizing the pipeline bottleneck with at most ``machines``.

    ``force_all_machines`` requires the plan to use the full budget even when
    extra machines cannot lower the bottleneck. ``max_replication`` caps the
    per-stage replication factor (1 restricts the search to straight
    pipelines). ``stats``, when given, receives the subproblem evaluation
    count under key ``"subproblem_evals"``.

    Ties are broken deterministically: fewer stages first, then the smaller
    latest split index, then smaller replication, then fewer machines.
    """
    n = ctx.num_layers
    m_budget = ctx.hw.num_machines if machines is None else machines
    if m_budget < 1:
        raise ValidationError("machine budget must be >= 1")
    rep_cap = m_budget if max_replication is None else max_replication
    if rep_cap < 1:
        raise ValidationError("max_replication must be >= 1")

    twoc = [0.0] * n  # twoc[i] = 2*C_i for boundary after layer i (1-based)
    for i in range(1, n):
        twoc[i] = 2.0 * comm_time_activations(ctx, i)

    evals = 0
    # table[j][m]: best pipeline over layers 1..j using exactly m machines
    table: list[list[_Candidate | None]] = [
        [None] * (m_budget + 1) for _ in range(n + 1)
    ]
    for j in range(1, n + 1):
        for m in range(1, m_budget + 1):
            best: _Candidate | None = None
            if m <= rep_cap:
                best = _Candidate(stage_time(ctx, 1, j, m), 1, 0, 0)
            for i in range(1, j):
                for m_prime in range(1, min(m - 1, rep_cap) + 1):
                    sub = table[i][m - m_prime]
                    if sub is None:
                        continue
                    evals += 1
                    t = max(sub.time, twoc[i], stage_time(ctx, i + 1, j, m_prime))
                    cand = _Candidate(t, sub.n_stages + 1, i, m_prime)
                    if cand.beats(best):
                        best = cand
            table[j][m] = best

    if stats is not None:
        stats["subproblem_evals"] = evals

    if force_all_machines:
        chosen_m = m_budget
        if table[n][m_budget] is None:
            raise ValidationError(
                f"no plan uses exactly {m_budget} machines with replication cap {rep_cap}"
            )
    else:
        chosen_m = None
        chosen: _Candidate | None = None
        for m in range(1, m_budget + 1):
            cell = table[n][m]
            if cell is None:
                continue
            if chosen is None or cell.time < chosen.time - TIME_TOL:
                chosen, chosen_m = cell, m
            elif cell.time <= chosen.time + TIME_TOL and (
                cell.n_stages,
                m,
            ) < (chosen.n_stages, chosen_m):
                chosen, chosen_m = cell, m
        if chosen_m is None:
            raise ValidationError("no feasible plan found")

    # backtrack the stage list
    stages: list[Stage] = []
    j, m = n, chosen_m
    while True:
        cell = table[j][m]
        assert cell is not None
        if cell.split == 0:
            stages.append(Stage(1, j, m))
            break
        stages.append(Stage(cell.split + 1, j, cell.split_m))
        j, m = cell.split, m - cell.split_m
    stages.reverse()

    final = table[n][chosen_m]
    return Plan(
        stages=tuple(stages),
        bottleneck_time=final.time,
        noam=noam_for(chosen_m, stages[0].replication),
        machines_used=chosen_m,
    )


def _compositions(k: int, budget: int):
    """All k-tuples of positive ints with sum <= budget, lexicographic order."""
    if k == 1:
        for v in range(1, budget + 1):
            yield (v,)
        return
    for first in range(1, budget - k + 2):
        for rest in _compositions(k - 1, budget - first):
            yield (first, *rest)


def brute_force(ctx: CostContext, machines: int | None = None) -> Plan:
    """Exhaustively enumerate partitions and replication assignments.

    Independent of the DP: every contiguous split of the chain is paired with
    every replication assignment summing to at most the budget, the bottleneck
    of each is evaluated directly, and the minimum wins. Guarded to small
    instances (N <= 12, M <= 8).
    """
    n = ctx.num_layers
    m_budget = ctx.hw.num_machines if machines is None else machines
    if n > BRUTE_FORCE_MAX_LAYERS or m_budget > BRUTE_FORCE_MAX_MACHINES:
        raise ValidationError(
            f"brute force limited to N <= {BRUTE_FORCE_MAX_LAYERS} and "
            f"M <= {BRUTE_FORCE_MAX_MACHINES} (got N={n}, M={m_budget})"
        )
    if m_budget < 1:
        raise ValidationError("machine budget must be >= 1")

    best_time = math.inf
    best: tuple[tuple[int, int], ...] | None = None
    best_reps: tuple[int, ...] | None = None
    for k in range(1, n + 1):
        for cuts in combinations(range(1, n), k - 1):
            bounds = []
            first = 1
            for cut in cuts:
                bounds.append((first, cut))
                first = cut + 1
            bounds.append((first, n))
            boundary_cost = max(
                (2.0 * comm_time_activations(ctx, cut) for cut in cuts), default=0.0
            )
            for reps in _compositions(k, m_budget):
                t = boundary_cost
                for (a, b), m in zip(bounds, reps):
                    t = max(t, stage_time(ctx, a, b, m))
                if t < best_time - TIME_TOL:
                    best_time = t
                    best = tuple(bounds)
                    best_reps = reps

    assert best is not None and best_reps is not None
    stages = tuple(Stage(a, b, m) for (a, b), m in zip(best, best_reps))
    used = sum(best_reps)
    return Plan(
        stages=stages,
        bottleneck_time=best_time,
        noam=noam_for(used, best_reps[0]),
        machines_used=used,
    )
