"""Shared builders for test profiles and plans."""

from __future__ import annotations

import pipesim as ps


def balanced_profile(n, fwd=0.4, bwd=0.6, act=0, params=0):
    """n identical layers; zero activations make communication free."""
    layers = tuple(
        ps.LayerProfile(i + 1, f"layer{i + 1}", fwd, bwd, act, params)
        for i in range(n)
    )
    return ps.ModelProfile(layers=layers)


def straight_ctx(n, fwd=0.4, bwd=0.6, act=0, params=0, bandwidth=1e9):
    profile = balanced_profile(n, fwd, bwd, act, params)
    return ps.build_context(profile, ps.HardwareSpec(n, bandwidth))


def one_layer_per_stage(ctx):
    n = ctx.num_layers
    return ps.straight_plan(ctx, [(i, i) for i in range(1, n + 1)])


def random_instance(rng, max_layers=6, max_machines=4):
    """Seeded random (profile, hardware) pair for oracle sweeps."""
    n = int(rng.integers(2, max_layers + 1))
    m = int(rng.integers(1, max_machines + 1))
    layers = tuple(
        ps.LayerProfile(
            i + 1,
            f"l{i + 1}",
            float(rng.uniform(0.01, 1.0)),
            float(rng.uniform(0.01, 2.0)),
            int(rng.integers(0, 1_000_000)),
            int(rng.integers(0, 10_000_000)),
        )
        for i in range(n)
    )
    profile = ps.ModelProfile(layers=layers)
    hw = ps.HardwareSpec(m, float(rng.uniform(1e6, 1e9)))
    return ps.build_context(profile, hw)


def minibatches_for(plan, minimum=120):
    """Enough minibatches to guarantee a steady measurement window."""
    m0 = plan.stages[0].replication
    need = 2 * plan.noam * m0 + plan.num_stages + m0 + 10
    return max(plan.noam + 10, need, minimum)


def sim_throughput(plan, ctx, minibatches=None, max_inflight=None):
    cfg = ps.SimConfig(
        plan=plan,
        mode=ps.Mode.WEIGHT_STASHING,
        num_minibatches=minibatches or minibatches_for(plan),
        max_inflight=max_inflight,
    )
    return ps.run(cfg, ctx).report.steady_throughput


def single_stage_plan(ctx, m):
    n = ctx.num_layers
    return ps.Plan(
        stages=(ps.Stage(1, n, m),),
        bottleneck_time=ps.stage_time(ctx, 1, n, m),
        noam=1,
        machines_used=m,
    )
