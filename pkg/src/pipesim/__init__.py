"""pipesim: planner and deterministic simulator for pipeline-parallel training.

Partitions a profiled layer chain across machines with a dynamic program,
generates static 1F1B schedules, simulates execution with exact weight-version
semantics (naive pipelining, weight stashing, vertical sync), and reports
throughput, utilization, memory pressure, and communication volume against
data-parallel training.
"""

__version__ = "0.1.0"

from .costmodel import (
    CostContext,
    build_context,
    comm_time_activations,
    comm_volume_bsp,
    comm_volume_pp,
    compute_time,
    stage_time,
    weight_sync_time,
)
from .errors import (
    ConsistencyError,
    PipesimError,
    ProfileFormatError,
    SimulationError,
    ValidationError,
)
from .partitioner import (
    Plan,
    Stage,
    brute_force,
    load_plan,
    noam,
    noam_for,
    parse_config,
    plan_from_dict,
    solve,
    straight_plan,
)
from .profiles import (
    HardwareSpec,
    LayerProfile,
    ModelProfile,
    load_profile,
    save_profile,
    synth_profile,
)
from .schedule import (
    Direction,
    Schedule,
    WorkItem,
    build_schedule,
    replica_for,
    stage_inflight_caps,
    worker_order,
    write_schedule_csv,
)
from .semantics import (
    ToyModel,
    equation_oracle,
    make_toy_model,
    replay,
    write_trajectory_csv,
)
from .simulator import (
    Mode,
    SimConfig,
    SimReport,
    SimResult,
    StalenessViolation,
    TraceEvent,
    VersionLedger,
    analytic_throughput,
    compare_analytic,
    run,
    staleness_check,
    write_trace_csv,
)

__all__ = [
    "__version__",
    "CostContext",
    "build_context",
    "comm_time_activations",
    "comm_volume_bsp",
    "comm_volume_pp",
    "compute_time",
    "stage_time",
    "weight_sync_time",
    "ConsistencyError",
    "PipesimError",
    "ProfileFormatError",
    "SimulationError",
    "ValidationError",
    "Plan",
    "Stage",
    "brute_force",
    "load_plan",
    "noam",
    "noam_for",
    "parse_config",
    "plan_from_dict",
    "solve",
    "straight_plan",
    "HardwareSpec",
    "LayerProfile",
    "ModelProfile",
    "load_profile",
    "save_profile",
    "synth_profile",
    "Direction",
    "Schedule",
    "WorkItem",
    "build_schedule",
    "replica_for",
    "stage_inflight_caps",
    "worker_order",
    "write_schedule_csv",
    "ToyModel",
    "equation_oracle",
    "make_toy_model",
    "replay",
    "write_trajectory_csv",
    "Mode",
    "SimConfig",
    "SimReport",
    "SimResult",
    "StalenessViolation",
    "TraceEvent",
    "VersionLedger",
    "analytic_throughput",
    "compare_analytic",
    "run",
    "staleness_check",
    "write_trace_csv",
]
