"""Numeric replay of version ledgers against closed-form update recurrences.

A tiny linear least-squares model stands in for the network: the parameter
vector is split into per-stage blocks, the loss is 0.5 * ||X w - y||^2 over
fixed seeded data, and minibatches are deterministic row blocks of X. The
gradient is exact (X^T (X w - y)), so a trajectory of weight vectors can be
compared elementwise at machine precision.

``replay`` re-executes SGD using exactly the weight versions a simulation
ledger recorded: stage s's partial gradient for minibatch m is evaluated at
the point whose cross-stage context comes from the forward-pass versions and
whose own block comes from the backward-pass version (a real backward pass
consumes forward activations but differentiates through the weights it holds
at backward time). When every stage's two versions agree, as under weight
stashing or vertical sync, this collapses to the plain gradient at one mixed
point; when they disagree, the assembled update is not the gradient of the
loss at any single weight vector.

``equation_oracle`` iterates the delayed-SGD recurrences directly, with
warm-up delays clamped at the initial weights, and is the independent
reference the replayed trajectories must match.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, ValidationError
from .schedule import Direction
from .simulator import VersionLedger

ORACLE_MODES = ("vanilla", "weight_stashing", "vertical_sync")


@dataclass(frozen=True)
class ToyModel:
    """Linear least-squares model with the parameter vector cut into stages."""

    stage_params: tuple[np.ndarray, ...]
    design: np.ndarray  # X, shape (rows, total params)
    targets: np.ndarray  # y, shape (rows,)
    learning_rate: float
    block_size: int

    def __post_init__(self):
        total = sum(p.size for p in self.stage_params)
        if self.design.shape[1] != total:
            raise ValidationError("design matrix width must match total parameter count")
        if self.design.shape[0] != self.targets.size:
            raise ValidationError("design and targets disagree on row count")
        if self.design.shape[0] % self.block_size != 0:
            raise ValidationError("rows must divide evenly into minibatch blocks")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")

    @property
    def n_stages(self) -> int:
        return len(self.stage_params)

    @property
    def n_blocks(self) -> int:
        return self.design.shape[0] // self.block_size

    def stage_slices(self) -> list[slice]:
        slices = []
        offset = 0
        for p in self.stage_params:
            slices.append(slice(offset, offset + p.size))
            offset += p.size
        return slices

    def block(self, minibatch_id: int) -> tuple[np.ndarray, np.ndarray]:
        """Row block for a 1-based minibatch id, cycling through the data."""
        b = (minibatch_id - 1) % self.n_blocks
        rows = slice(b * self.block_size, (b + 1) * self.block_size)
        return self.design[rows], self.targets[rows]

    def loss(self, w: np.ndarray, minibatch_id: int) -> float:
        xb, yb = self.block(minibatch_id)
        r = xb @ w - yb
        return 0.5 * float(r @ r)

    def gradient(self, w: np.ndarray, minibatch_id: int) -> np.ndarray:
        """Closed-form minibatch gradient X_b^T (X_b w - y_b)."""
        xb, yb = self.block(minibatch_id)
        return xb.T @ (xb @ w - yb)


def make_toy_model(
    n_stages: int,
    params_per_stage: int = 3,
    n_blocks: int = 8,
    block_size: int = 6,
    seed: int = 0,
    learning_rate: float = 0.02,
) -> ToyModel:
    rng = np.random.default_rng(seed)
    total = n_stages * params_per_stage
    rows = n_blocks * block_size
    design = rng.normal(0.0, 1.0, size=(rows, total)) / np.sqrt(block_size)
    w_true = rng.normal(0.0, 1.0, size=total)
    targets = design @ w_true + 0.1 * rng.normal(size=rows)
    stage_params = tuple(
        rng.normal(0.0, 1.0, size=params_per_stage) for _ in range(n_stages)
    )
    return ToyModel(
        stage_params=stage_params,
        design=design,
        targets=targets,
        learning_rate=learning_rate,
        block_size=block_size,
    )


def _step(
    model: ToyModel,
    archives: list[list[np.ndarray]],
    minibatch_id: int,
    fwd_versions: list[int],
    bwd_versions: list[int],
) -> list[np.ndarray]:
    """One SGD commit: per-stage partial gradients at the recorded versions.

    Stage s differentiates at the point assembled from every stage's
    forward-pass version, with stage s's own block swapped for its
    backward-pass version. Shared by replay and the oracle so trajectories
    built from identical version assignments agree bitwise.
    """
    slices = model.stage_slices()
    xb, yb = model.block(minibatch_id)
    fwd_point = np.concatenate([archives[i][fwd_versions[i]] for i in range(model.n_stages)])
    new_blocks = []
    for s in range(model.n_stages):
        point = fwd_point
        if bwd_versions[s] != fwd_versions[s]:
            point = fwd_point.copy()
            point[slices[s]] = archives[s][bwd_versions[s]]
        grad_s = xb[:, slices[s]].T @ (xb @ point - yb)
        new_blocks.append(archives[s][-1] - model.learning_rate * grad_s)
    return new_blocks


def _trajectory(archives: list[list[np.ndarray]]) -> np.ndarray:
    steps = len(archives[0])
    return np.stack(
        [np.concatenate([arc[t] for arc in archives]) for t in range(steps)]
    )


def replay(ledger: VersionLedger, model: ToyModel, num_minibatches: int | None = None) -> np.ndarray:
    """Re-run SGD using the ledger's version assignments; returns {w^(t)}.

    The result has shape (T+1, total params), row t holding the weights after
    t committed minibatches.
    """
    if not ledger.is_straight:
        raise ValidationError("replay is defined for straight-pipeline ledgers only")
    if model.n_stages != ledger.n_stages:
        raise ValidationError(
            f"model has {model.n_stages} stages, ledger has {ledger.n_stages}"
        )
    minibatches = ledger.minibatches
    if num_minibatches is not None:
        minibatches = [m for m in minibatches if m <= num_minibatches]
    archives: list[list[np.ndarray]] = [[p.copy()] for p in model.stage_params]
    for t, mb in enumerate(minibatches, start=1):
        if mb != t:
            raise ConsistencyError(f"ledger minibatches not contiguous at {mb}")
        fwd_v, bwd_v = [], []
        for s in range(model.n_stages):
            try:
                fv = ledger.version_used(s, mb, Direction.FORWARD)
                bv = ledger.version_used(s, mb, Direction.BACKWARD)
            except KeyError as exc:
                raise ConsistencyError(f"ledger missing entry for stage {s}, minibatch {mb}") from exc
            for v in (fv, bv):
                if v >= t:
                    raise ConsistencyError(
                        f"stage {s} minibatch {mb} reads version {v}, "
                        f"but only {t - 1} updates are committed"
                    )
            fwd_v.append(fv)
            bwd_v.append(bv)
        new_blocks = _step(model, archives, mb, fwd_v, bwd_v)
        for s, blk in enumerate(new_blocks):
            archives[s].append(blk)
    return _trajectory(archives)


def equation_oracle(mode: str, n_stages: int, model: ToyModel, steps: int) -> np.ndarray:
    """Directly iterate a delayed-SGD recurrence for ``steps`` minibatches.

    For minibatch m of an n-stage split:
    vanilla:          every stage reads the current weights (version m-1);
    weight_stashing:  1-based stage i reads version m - n + i - 1;
    vertical_sync:    every stage reads version m - n.

    Warm-up indices below 0 clamp to the initial weights (version 0).
    """
    if mode not in ORACLE_MODES:
        raise ValidationError(f"unknown oracle mode {mode!r}; choose from {ORACLE_MODES}")
    if model.n_stages != n_stages:
        raise ValidationError("model stage count does not match n_stages")
    if steps < n_stages:
        raise ValidationError("steps must be at least the stage count")
    archives: list[list[np.ndarray]] = [[p.copy()] for p in model.stage_params]
    for m in range(1, steps + 1):
        if mode == "vanilla":
            versions = [m - 1] * n_stages
        elif mode == "weight_stashing":
            versions = [max(0, m - n_stages + s) for s in range(n_stages)]
        else:
            versions = [max(0, m - n_stages)] * n_stages
        new_blocks = _step(model, archives, m, versions, versions)
        for s, blk in enumerate(new_blocks):
            archives[s].append(blk)
    return _trajectory(archives)


def write_trajectory_csv(trajectory: np.ndarray, path: str | Path) -> None:
    """Dump a weight trajectory for inspection: one row per committed step."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + [f"w{i}" for i in range(trajectory.shape[1])])
        for t, row in enumerate(trajectory):
            writer.writerow([t] + [repr(float(v)) for v in row])
