"""Analytic time and volume quantities for planning and reporting.

All functions are pure and O(1) thanks to prefix sums over the profile:

* activation-transfer time across a layer boundary,
* weight-synchronization time for a replicated stage,
* per-stage time ``(1/m) * max(compute, weight sync)``,
* network bytes per minibatch under data parallelism (BSP) and under a
  pipeline plan.

Layer indices are 1-based throughout, matching LayerProfile.layer_id.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import accumulate
from typing import TYPE_CHECKING

from .errors import ValidationError
from .profiles import HardwareSpec, ModelProfile

if TYPE_CHECKING:
    from .partitioner import Plan


@dataclass(frozen=True)
class CostContext:
    """Profile + hardware bundled with the prefix sums every query needs.

    ``prefix_T[k]`` is the combined fwd+bwd time of layers 1..k (seconds);
    ``prefix_W_bytes[k]`` is the parameter footprint of layers 1..k in bytes.
    Both have length N+1 with index 0 equal to 0.
    """

    profile: ModelProfile
    hw: HardwareSpec
    prefix_T: tuple[float, ...]
    prefix_W_bytes: tuple[float, ...]

    @property
    def num_layers(self) -> int:
        return self.profile.num_layers


def build_context(profile: ModelProfile, hw: HardwareSpec) -> CostContext:
    prefix_t = (0.0, *accumulate(l.total_time for l in profile.layers))
    prefix_w = (
        0.0,
        *accumulate(float(l.param_elems * hw.bytes_per_elem) for l in profile.layers),
    )
    return CostContext(profile=profile, hw=hw, prefix_T=prefix_t, prefix_W_bytes=prefix_w)


def _check_range(ctx: CostContext, i: int, j: int, m: int) -> None:
    if not (1 <= i <= j <= ctx.num_layers):
        raise ValidationError(f"layer range {i}..{j} invalid for N={ctx.num_layers}")
    if m < 1:
        raise ValidationError(f"replication must be >= 1, got {m}")


def compute_time(ctx: CostContext, i: int, j: int) -> float:
    """Total fwd+bwd compute time of layers i..j for one minibatch."""
    _check_range(ctx, i, j, 1)
    return ctx.prefix_T[j] - ctx.prefix_T[i - 1]


def comm_time_activations(ctx: CostContext, l: int) -> float:
    """One-way transfer time of layer l's output activations (boundary l -> l+1).

    The gradient flowing back across the same boundary has the same size, so a
    full minibatch round trip over the boundary costs twice this.
    """
    if not (1 <= l <= ctx.num_layers - 1):
        raise ValidationError(
            f"boundary index must satisfy 1 <= l <= N-1 (N={ctx.num_layers}), got {l}"
        )
    a = ctx.profile.layers[l - 1].activation_elems
    return a * ctx.hw.bytes_per_elem / ctx.hw.bandwidth


def weight_sync_time(ctx: CostContext, i: int, j: int, m: int) -> float:
    """Per-minibatch parameter-server time for layers i..j replicated m ways.

    Each of the m workers moves bytes_per_elem * (m-1)/m * sum(param_elems)
    bytes per minibatch; exactly 0 when m == 1.
    """
    _check_range(ctx, i, j, m)
    if m == 1:
        return 0.0
    w_bytes = ctx.prefix_W_bytes[j] - ctx.prefix_W_bytes[i - 1]
    return (m - 1) / m * w_bytes / ctx.hw.bandwidth


def stage_time(ctx: CostContext, i: int, j: int, m: int) -> float:
    """Effective per-minibatch time of a stage over layers i..j on m machines.

    (1/m) * max(total compute time, total weight-sync time): replication
    splits minibatches m ways but adds synchronization, and whichever of the
    two totals is larger gates the stage.
    """
    _check_range(ctx, i, j, m)
    return max(compute_time(ctx, i, j), weight_sync_time(ctx, i, j, m)) / m


def comm_volume_bsp(ctx: CostContext, m: int) -> float:
    """Total network bytes per minibatch for m-way data-parallel training.

    m workers each move bytes_per_elem * (m-1)/m * total params; 0 for m=1.
    """
    if m < 1:
        raise ValidationError(f"machine count must be >= 1, got {m}")
    total_w_bytes = ctx.prefix_W_bytes[-1]
    return (m - 1) * total_w_bytes


def comm_volume_pp(ctx: CostContext, plan: "Plan") -> float:
    """Total network bytes per minibatch when executing ``plan``.

    Each internal stage boundary carries the activation forward and the
    matching gradient backward (2 * a_i * bytes_per_elem); stages replicated
    m' > 1 ways additionally pay their own data-parallel sync volume.
    """
    stages = plan.stages
    if stages[0].first_layer != 1 or stages[-1].last_layer != ctx.num_layers:
        raise ValidationError(
            f"plan covers layers {stages[0].first_layer}..{stages[-1].last_layer}, "
            f"profile has N={ctx.num_layers}"
        )
    total = 0.0
    for k, st in enumerate(stages):
        if k < len(stages) - 1:
            a = ctx.profile.layers[st.last_layer - 1].activation_elems
            total += 2.0 * a * ctx.hw.bytes_per_elem
        if st.replication > 1:
            w_bytes = ctx.prefix_W_bytes[st.last_layer] - ctx.prefix_W_bytes[st.first_layer - 1]
            total += (st.replication - 1) * w_bytes
    return total
