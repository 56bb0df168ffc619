"""Command-line front end: profile synthesis, planning, simulation, comparison.

Exit codes are fixed for scripting: 0 success, 1 usage error, 2 validation
failure (bad inputs, plan/profile mismatch, unexpected staleness violations),
3 simulation error (deadlock, no steady window). Every JSON artifact embeds a
run manifest (command, inputs, tool version, seed) so outputs are reproducible
byte for byte given the same invocation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .costmodel import build_context, comm_volume_bsp, comm_volume_pp, stage_time
from .errors import PipesimError, SimulationError, ValidationError
from .partitioner import Plan, Stage, load_plan, solve
from .profiles import (
    DEFAULT_BYTES_PER_ELEM,
    HardwareSpec,
    SYNTH_KINDS,
    load_profile,
    save_profile,
    synth_profile,
)
from .simulator import (
    Mode,
    SimConfig,
    compare_analytic,
    run,
    staleness_check,
    write_trace_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_SIMULATION = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the documented contract is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _manifest(command: str, args: argparse.Namespace) -> dict:
    inputs = {
        k: v
        for k, v in sorted(vars(args).items())
        if k not in ("func", "command") and v is not None
    }
    return {
        "command": command,
        "inputs": {k: str(v) if isinstance(v, Path) else v for k, v in inputs.items()},
        "tool_version": __version__,
        "seed": getattr(args, "seed", 0),
    }


def _write_json(path: Path, manifest: dict, payload: dict) -> None:
    doc = {"manifest": manifest}
    doc.update(payload)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    profile = synth_profile(args.kind, args.n_layers, args.seed, args.minibatch_size)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_profile(profile, out, extra={"manifest": _manifest("synth", args)})
    print(f"profile: {out}")
    print(f"layers: {profile.num_layers}")
    print(f"total_time: {profile.total_time:.6f} s")
    print(f"total_param_elems: {profile.total_param_elems}")
    return EXIT_OK


def cmd_plan(args) -> int:
    profile = load_profile(args.profile)
    hw = HardwareSpec(
        num_machines=args.machines,
        bandwidth=args.bandwidth,
        bytes_per_elem=args.bytes_per_elem,
    )
    ctx = build_context(profile, hw)
    plan = solve(ctx, force_all_machines=args.force_all_machines)

    bsp = comm_volume_bsp(ctx, args.machines)
    pp = comm_volume_pp(ctx, plan)
    if bsp > 0:
        reduction = f"{100.0 * (1.0 - pp / bsp):.1f}%"
    else:
        reduction = "n/a (no comm)"

    out = _out_dir(args)
    plan_path = out / "plan.json"
    _write_json(plan_path, _manifest("plan", args), plan.to_dict() | {"config": plan.config_string})

    print(f"config: {plan.config_string}")
    print(f"stages: {plan.num_stages}")
    print(f"machines_used: {plan.machines_used}")
    print(f"bottleneck_time: {plan.bottleneck_time:.9f} s")
    print(f"noam: {plan.noam}")
    print(f"predicted_throughput: {1.0 / plan.bottleneck_time:.6f} minibatches/s")
    print(f"comm_bsp_bytes: {bsp:.0f}")
    print(f"comm_pp_bytes: {pp:.0f}")
    print(f"comm_reduction: {reduction}")
    print(f"plan_file: {plan_path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    profile = load_profile(args.profile)
    plan = load_plan(args.plan)
    if plan.num_layers != profile.num_layers:
        raise ValidationError(
            f"plan covers {plan.num_layers} layers but profile has {profile.num_layers}"
        )
    hw = HardwareSpec(
        num_machines=plan.machines_used,
        bandwidth=args.bandwidth,
        bytes_per_elem=args.bytes_per_elem,
    )
    ctx = build_context(profile, hw)
    cfg = SimConfig(
        plan=plan,
        mode=Mode(args.mode),
        num_minibatches=args.minibatches,
        max_inflight=args.max_inflight,
    )
    result = run(cfg, ctx)
    manifest = _manifest("simulate", args)
    out = _out_dir(args)
    _write_json(out / "report.json", manifest, result.report.to_dict())
    write_trace_csv(
        result.trace,
        out / "trace.csv",
        header_comment="manifest: " + json.dumps(manifest, sort_keys=True),
    )

    if result.ledger.is_straight and cfg.effective_inflight == plan.noam:
        violations = staleness_check(result.ledger, cfg.mode, plan.num_stages)
        checked = True
    else:
        violations, checked = [], False
    _write_json(
        out / "staleness.json",
        manifest,
        {
            "checked": checked,
            "violations": [
                {
                    "stage": v.stage_index,
                    "minibatch": v.minibatch_id,
                    "direction": v.direction.value,
                    "expected": v.expected,
                    "actual": v.actual,
                }
                for v in violations
            ],
        },
    )

    rel_err = compare_analytic(result.report, plan)
    print(f"mode: {cfg.mode.value}")
    print(f"makespan: {result.report.makespan:.9f} s")
    print(f"steady_throughput: {result.report.steady_throughput:.6f} minibatches/s")
    print(f"throughput_vs_analytic_error: {rel_err:.4%}")
    print(f"comm_bytes_total: {result.report.comm_bytes_total:.0f}")
    if checked:
        print(f"staleness_violations: {len(violations)}")
    else:
        print("staleness_violations: n/a (replicated plan or reduced max-inflight)")
    print(f"report_file: {out / 'report.json'}")

    if not checked:
        return EXIT_OK
    if cfg.mode is Mode.NAIVE_PIPELINE and args.expect_naive:
        if not violations:
            print("error: naive mode unexpectedly produced a consistent ledger", file=sys.stderr)
            return EXIT_VALIDATION
        return EXIT_OK
    if violations:
        print(f"error: staleness check failed with {len(violations)} violations", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def _simulate_throughput(plan: Plan, ctx, minibatches: int, max_inflight: int | None = None) -> float:
    cfg = SimConfig(
        plan=plan,
        mode=Mode.WEIGHT_STASHING,
        num_minibatches=minibatches,
        max_inflight=max_inflight,
    )
    return run(cfg, ctx).report.steady_throughput


def cmd_compare(args) -> int:
    profile = load_profile(args.profile)
    machines = args.machines
    hw = HardwareSpec(
        num_machines=machines,
        bandwidth=args.bandwidth,
        bytes_per_elem=args.bytes_per_elem,
    )
    ctx = build_context(profile, hw)
    n = profile.num_layers
    k = args.minibatches

    def single_stage(m: int) -> Plan:
        return Plan(
            stages=(Stage(1, n, m),),
            bottleneck_time=stage_time(ctx, 1, n, m),
            noam=1,
            machines_used=m,
        )

    baseline = single_stage(1)
    straight = solve(ctx, machines=min(machines, n), max_replication=1)
    full = solve(ctx, machines=machines)
    data_parallel = single_stage(machines)

    base_rate = _simulate_throughput(baseline, ctx, k)
    rows = [
        ("single_machine", baseline, _simulate_throughput(baseline, ctx, k)),
        ("model_parallel", straight, _simulate_throughput(straight, ctx, k, max_inflight=1)),
        ("data_parallel", data_parallel, _simulate_throughput(data_parallel, ctx, k)),
        ("straight_pipeline", straight, _simulate_throughput(straight, ctx, k)),
        ("full_plan", full, _simulate_throughput(full, ctx, k)),
    ]

    out = _out_dir(args)
    payload = {"machines": machines, "regimes": []}
    print(f"{'regime':<18} {'config':<12} {'throughput/s':>14} {'speedup':>9}")
    for name, plan, rate in rows:
        speedup = rate / base_rate
        payload["regimes"].append(
            {
                "regime": name,
                "config": plan.config_string,
                "throughput": rate,
                "speedup": speedup,
            }
        )
        print(f"{name:<18} {plan.config_string:<12} {rate:>14.6f} {speedup:>8.2f}x")
    _write_json(out / "compare.json", _manifest("compare", args), payload)
    print(f"compare_file: {out / 'compare.json'}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(
        prog="pipesim",
        description="Plan and simulate pipeline-parallel DNN training runs.",
    )
    parser.add_argument("--version", action="version", version=f"pipesim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=0, help="seed recorded in the run manifest (default 0)")
        p.add_argument("--out-dir", default=".", help="directory for output artifacts (default .)")

    def add_hw(p):
        p.add_argument(
            "--bandwidth", type=float, default=1e9,
            help="inter-machine link bandwidth in bytes/s (default 1e9)",
        )
        p.add_argument(
            "--bytes-per-elem", type=int, default=DEFAULT_BYTES_PER_ELEM,
            help="bytes per tensor element (default 4)",
        )

    p = sub.add_parser("synth", help="generate a synthetic layer profile")
    p.add_argument("kind", choices=SYNTH_KINDS)
    p.add_argument("--n-layers", type=int, default=16, help="layer count (default 16)")
    p.add_argument("--minibatch-size", type=int, default=32, help="metadata only (default 32)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p.add_argument("--out", default="profile.json", help="output path (default profile.json)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("plan", help="partition a profiled model across machines")
    p.add_argument("profile", help="path to a profile JSON file")
    p.add_argument("--machines", type=int, required=True)
    add_hw(p)
    p.add_argument(
        "--force-all-machines", action="store_true",
        help="require the plan to use every machine even if idle ones would not hurt",
    )
    add_common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="simulate a plan and check version semantics")
    p.add_argument("plan", help="path to a plan JSON file")
    p.add_argument("profile", help="path to the matching profile JSON file")
    p.add_argument(
        "--mode", choices=[m.value for m in Mode], default=Mode.WEIGHT_STASHING.value,
        help="weight-version semantics (default weight_stashing)",
    )
    p.add_argument(
        "--minibatches", type=int, default=200,
        help="minibatches to simulate (default 200)",
    )
    p.add_argument(
        "--max-inflight", type=int, default=None,
        help="cap on active minibatches per input worker (default: plan NOAM; 1 = model parallelism)",
    )
    add_hw(p)
    p.add_argument(
        "--expect-naive", action="store_true",
        help="treat staleness violations as expected (naive mode only)",
    )
    add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="compare execution regimes on one profile")
    p.add_argument("profile", help="path to a profile JSON file")
    p.add_argument("--machines", type=int, required=True)
    p.add_argument(
        "--minibatches", type=int, default=120,
        help="minibatches per simulated regime (default 120)",
    )
    add_hw(p)
    add_common(p)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except PipesimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
