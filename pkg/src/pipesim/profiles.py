"""Layer-level model profiles and hardware descriptions.

Everything downstream (partitioning, scheduling, simulation) is driven by a
per-layer profile: forward/backward compute time, output-activation size, and
parameter count. Profiles are loaded from a small JSON format or synthesized
with shapes typical of well-known model families.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ProfileFormatError, ValidationError

DEFAULT_BYTES_PER_ELEM = 4

SYNTH_KINDS = ("uniform", "vgg_like", "inception_like")


@dataclass(frozen=True)
class LayerProfile:
    """Measured quantities for one layer, for one minibatch.

    Times are seconds; sizes are element counts (convert to bytes with
    HardwareSpec.bytes_per_elem). The output-activation size is also the size
    of the input gradient flowing back across the same boundary.
    """

    layer_id: int
    name: str
    fwd_time: float
    bwd_time: float
    activation_elems: int
    param_elems: int

    def __post_init__(self):
        tag = f"layer {self.layer_id} ({self.name})"
        if self.fwd_time < 0:
            raise ValidationError(f"{tag}: fwd_time must be >= 0")
        if self.bwd_time < 0:
            raise ValidationError(f"{tag}: bwd_time must be >= 0")
        if self.fwd_time + self.bwd_time <= 0:
            raise ValidationError(f"{tag}: fwd_time + bwd_time must be > 0")
        if self.activation_elems < 0:
            raise ValidationError(f"{tag}: activation_elems must be >= 0")
        if self.param_elems < 0:
            raise ValidationError(f"{tag}: param_elems must be >= 0")

    @property
    def total_time(self) -> float:
        """Combined forward+backward compute time for the layer."""
        return self.fwd_time + self.bwd_time


@dataclass(frozen=True)
class ModelProfile:
    """An ordered chain of layer profiles."""

    layers: tuple[LayerProfile, ...]
    minibatch_size: int = 32

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("profile must contain at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))
        for pos, layer in enumerate(self.layers, start=1):
            if layer.layer_id != pos:
                raise ValidationError(
                    f"layer_id values must be exactly 1..N in order; "
                    f"position {pos} has layer_id {layer.layer_id}"
                )
        if self.minibatch_size <= 0:
            raise ValidationError("minibatch_size must be > 0")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def total_time(self) -> float:
        return sum(l.total_time for l in self.layers)

    @property
    def total_param_elems(self) -> int:
        return sum(l.param_elems for l in self.layers)


@dataclass(frozen=True)
class HardwareSpec:
    """Cluster description: machine count and the inter-machine link."""

    num_machines: int
    bandwidth: float  # bytes per second
    bytes_per_elem: int = DEFAULT_BYTES_PER_ELEM

    def __post_init__(self):
        if self.num_machines < 1:
            raise ValidationError("num_machines must be >= 1")
        if self.bandwidth <= 0:
            raise ValidationError("bandwidth must be > 0")
        if self.bytes_per_elem <= 0:
            raise ValidationError("bytes_per_elem must be > 0")


_LAYER_FIELDS = ("name", "fwd_time", "bwd_time", "activation_elems", "param_elems")


def load_profile(path: str | Path) -> ModelProfile:
    """Load and validate a profile from its JSON file format.

    The format is a single document
    ``{"minibatch_size": int, "layers": [{"name", "fwd_time", "bwd_time",
    "activation_elems", "param_elems"}, ...]}`` with times in decimal seconds.
    Unknown top-level keys (for example an embedded run manifest) are ignored.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ProfileFormatError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(raw, dict):
        raise ProfileFormatError(f"{path}: top-level value must be an object")
    if "layers" not in raw:
        raise ProfileFormatError(f"{path}: missing required field 'layers'")
    if not isinstance(raw["layers"], list):
        raise ProfileFormatError(f"{path}: 'layers' must be a list")

    layers = []
    for idx, entry in enumerate(raw["layers"], start=1):
        if not isinstance(entry, dict):
            raise ProfileFormatError(f"{path}: layers[{idx}] must be an object")
        for field in _LAYER_FIELDS:
            if field not in entry:
                raise ProfileFormatError(
                    f"{path}: layers[{idx}] missing field '{field}'"
                )
        try:
            layers.append(
                LayerProfile(
                    layer_id=idx,
                    name=str(entry["name"]),
                    fwd_time=float(entry["fwd_time"]),
                    bwd_time=float(entry["bwd_time"]),
                    activation_elems=int(entry["activation_elems"]),
                    param_elems=int(entry["param_elems"]),
                )
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ProfileFormatError(
                f"{path}: layers[{idx}] has a field of the wrong type: {exc}"
            ) from exc

    minibatch_size = raw.get("minibatch_size", 32)
    if not isinstance(minibatch_size, int):
        raise ProfileFormatError(f"{path}: 'minibatch_size' must be an integer")
    return ModelProfile(layers=tuple(layers), minibatch_size=minibatch_size)


def profile_to_dict(profile: ModelProfile) -> dict:
    return {
        "minibatch_size": profile.minibatch_size,
        "layers": [
            {
                "name": l.name,
                "fwd_time": l.fwd_time,
                "bwd_time": l.bwd_time,
                "activation_elems": l.activation_elems,
                "param_elems": l.param_elems,
            }
            for l in profile.layers
        ],
    }


def save_profile(profile: ModelProfile, path: str | Path, extra: dict | None = None) -> None:
    """Write a profile in the documented JSON format (round-trips with load)."""
    doc = dict(extra or {})
    doc.update(profile_to_dict(profile))
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def synth_profile(kind: str, n_layers: int, seed: int, minibatch_size: int = 32) -> ModelProfile:
    """Synthesize a deterministic profile with a given architectural flavor.

    ``uniform``: every layer identical, handy for balanced-pipeline tests.
    ``vgg_like``: parameters concentrated in the last quarter of layers
    (>= 85% of the total) while early layers carry the large activations, the
    regime where weight synchronization dominates data-parallel training.
    ``inception_like``: small parameter footprint relative to compute, so
    weight-sync time stays negligible even at 8-way replication.
    """
    if n_layers < 2:
        raise ValidationError("n_layers must be >= 2")
    if kind not in SYNTH_KINDS:
        raise ValidationError(f"unknown profile kind {kind!r}; choose from {SYNTH_KINDS}")
    rng = np.random.default_rng(seed)

    layers = []
    if kind == "uniform":
        for i in range(1, n_layers + 1):
            layers.append(
                LayerProfile(
                    layer_id=i,
                    name=f"uniform{i}",
                    fwd_time=0.05,
                    bwd_time=0.10,
                    activation_elems=200_000,
                    param_elems=400_000,
                )
            )
    elif kind == "vgg_like":
        tail = -(-n_layers // 4)  # last ceil(N/4) layers hold the big weights
        head = n_layers - tail
        # activations shrink with depth, starting large
        act = 2_000_000.0
        for i in range(1, n_layers + 1):
            fwd = float(rng.uniform(0.05, 0.12))
            bwd = fwd * float(rng.uniform(1.8, 2.2))
            if i <= head:
                params = int(rng.integers(20_000, 60_000))
                name = f"conv{i}"
            else:
                params = int(rng.integers(25_000_000, 40_000_000))
                name = f"fc{i}"
            layers.append(
                LayerProfile(
                    layer_id=i,
                    name=name,
                    fwd_time=fwd,
                    bwd_time=bwd,
                    activation_elems=int(act),
                    param_elems=params,
                )
            )
            act *= 0.72
    else:  # inception_like
        for i in range(1, n_layers + 1):
            fwd = float(rng.uniform(0.08, 0.15))
            bwd = fwd * float(rng.uniform(1.8, 2.2))
            layers.append(
                LayerProfile(
                    layer_id=i,
                    name=f"mixed{i}",
                    fwd_time=fwd,
                    bwd_time=bwd,
                    activation_elems=int(rng.integers(150_000, 400_000)),
                    param_elems=int(rng.integers(1_500_000, 3_500_000)),
                )
            )

    return ModelProfile(layers=tuple(layers), minibatch_size=minibatch_size)


def renumber(layers: list[LayerProfile]) -> tuple[LayerProfile, ...]:
    """Reassign layer_id 1..N in list order (useful when slicing profiles)."""
    return tuple(replace(l, layer_id=i) for i, l in enumerate(layers, start=1))
