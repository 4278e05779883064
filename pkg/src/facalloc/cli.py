"""Command-line harness: generate instances, run solvers, reproduce the
benchmark experiment suite, and emit CSV traces plus key=value summaries.

Commands are deterministic given (instance, seed, flags): rerunning writes
byte-identical CSVs.  Timing columns are only populated under --timing,
since wall-clock values would break that contract.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import figures
from .algorithms import (
    ADMM1,
    ALGORITHMS,
    DUAL,
    ITERATION_LIMIT,
    SolverConfig,
    run,
    solve_reference,
)
from .model import check_feasibility, load_instance, save_instance
from .problems import build_glb, generate_random_glb, glb_spec_to_dict
from .runtime import (
    ALLREDUCE,
    REDUCE_BROADCAST,
    AggregationPlan,
    FaultPolicy,
    RuntimeOptions,
)

RHO_SWEEP_GRID = tuple(10.0 ** e for e in range(-4, 5))


def _emit(key, value):
    if isinstance(value, float):
        print(f"{key}={value!r}")
    else:
        print(f"{key}={value}")


def _add_solver_flags(p):
    p.add_argument("--algorithm", choices=ALGORITHMS, default=ADMM1)
    p.add_argument("--rho", type=float, default=1e-3,
                   help="penalty parameter / dual step scale")
    p.add_argument("--rho0", type=float, default=None,
                   help="initial step for the diminishing dual schedule")
    p.add_argument("--step-rule", choices=("constant", "diminishing"),
                   default="constant", help="dual-decomposition step rule")
    p.add_argument("--linearized-r", type=float, default=None,
                   help="proximal weight for linearized ADMM (default 1.5*rho*N)")
    p.add_argument("--max-iters", type=int, default=400)
    p.add_argument("--tol", type=float, default=1e-8,
                   help="stop when D^k/N drops below this")
    p.add_argument("--seed", type=int, default=0, help="fault-draw seed")
    p.add_argument("--fail-prob", type=float, default=0.0,
                   help="per-user per-iteration update-failure probability")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--agg", choices=("reduce", "allreduce"), default="reduce")
    p.add_argument("--timing", action="store_true",
                   help="record measured wall_ms in the trace CSV")
    p.add_argument("--figures", metavar="DIR", default=None,
                   help="also render trace figures (PNG) into this directory")


def _add_instance_source(p):
    p.add_argument("--instance", metavar="JSON", default=None,
                   help="problem-instance file (from 'gen')")
    p.add_argument("--n-users", type=int, default=None,
                   help="generate an instance instead of loading one")
    p.add_argument("--n-facilities", type=int, default=10)
    p.add_argument("--gen-seed", type=int, default=0)
    p.add_argument("--capacity-ratio", type=float, default=1.4)
    p.add_argument("--q", type=float, default=None,
                   help="latency weight for generated instances")


def _load_or_generate(args):
    if args.instance is not None:
        return load_instance(args.instance)
    if args.n_users is None:
        raise SystemExit("error: give either --instance or --n-users")
    kwargs = {} if args.q is None else {"q": args.q}
    spec = generate_random_glb(args.gen_seed, args.n_users, args.n_facilities,
                               args.capacity_ratio, **kwargs)
    return build_glb(spec)


def _config(args, algorithm=None):
    return SolverConfig(
        rho=args.rho,
        max_iters=args.max_iters,
        stop_threshold=args.tol,
        dual_step_rule=args.step_rule if (algorithm or args.algorithm) == DUAL
        else "constant",
        rho0=args.rho0,
        linearized_r=args.linearized_r,
    )


def _runtime(args):
    mode = REDUCE_BROADCAST if args.agg == "reduce" else ALLREDUCE
    plan = AggregationPlan(mode=mode, shard_count=max(args.threads, 1))
    policy = (FaultPolicy(args.fail_prob, args.seed)
              if args.fail_prob > 0.0 else None)
    return RuntimeOptions(worker_count=args.threads, plan=plan,
                          fault_policy=policy)


def _summarize_run(prefix, result, inst):
    state = result.state
    _emit(f"{prefix}termination", result.reason)
    _emit(f"{prefix}iterations", state.k)
    if result.final_dk is not None:
        _emit(f"{prefix}final_Dk_over_N", result.final_dk / inst.n_users)
    if len(result.trace):
        last = result.trace.rows[-1]
        _emit(f"{prefix}final_objective", last.objective)
        _emit(f"{prefix}final_primal_residual", last.primal_residual)
        _emit(f"{prefix}final_coupling_residual", last.coupling_residual)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen(args):
    kwargs = {} if args.q is None else {"q": args.q}
    spec = generate_random_glb(args.seed, args.n_users, args.n_facilities,
                               args.capacity_ratio, **kwargs)
    inst = build_glb(spec)
    save_instance(inst, args.out)
    if args.spec_out:
        import json
        with open(args.spec_out, "w") as fh:
            json.dump(glb_spec_to_dict(spec), fh, indent=1)
            fh.write("\n")
    total_t = sum(u.demand for u in spec.users)
    total_c = sum(f.servers for f in spec.facilities)
    _emit("instance", args.out)
    _emit("n_users", inst.n_users)
    _emit("n_facilities", inst.n_facilities)
    _emit("total_demand", total_t)
    _emit("total_capacity", total_c)
    print(f"capacity_ratio={total_c / total_t:.3f}")
    return 0


def cmd_solve(args):
    inst = _load_or_generate(args)
    config = _config(args)
    rt = _runtime(args)
    reference = None
    if args.with_reference:
        ref_cfg = SolverConfig(rho=args.rho,
                               max_iters=max(args.max_iters * 10, 10_000),
                               stop_threshold=1e-14)
        reference = solve_reference(inst, ref_cfg)
        _emit("reference_confident", reference.confident)
        _emit("reference_iterations", reference.iterations)
    result = run(args.algorithm, inst, config, runtime_opts=rt,
                 reference=reference)
    if args.out:
        result.trace.to_csv(args.out, include_timing=args.timing)
        _emit("trace", args.out)
    _emit("algorithm", args.algorithm)
    _summarize_run("", result, inst)
    if len(result.trace):
        report = check_feasibility(inst, result.state.x, result.state.y,
                                   tol=1e-6)
        _emit("max_coupling_violation", report.max_coupling_violation)
    if args.figures:
        stem = args.algorithm
        for path in figures.render_trace_figures(
                {args.algorithm: result.trace}, args.figures, stem):
            _emit("figure", path)
    return 0


def cmd_compare(args):
    inst = _load_or_generate(args)
    rt = _runtime(args)

    # run both algorithms over the full horizon so rows line up
    admm_cfg = SolverConfig(rho=args.rho, max_iters=args.max_iters,
                            stop_threshold=0.0,
                            linearized_r=args.linearized_r)
    admm = run(ADMM1, inst, admm_cfg, runtime_opts=rt)

    dual_cfg = SolverConfig(rho=args.rho, max_iters=args.max_iters,
                            stop_threshold=0.0, dual_step_rule="diminishing",
                            rho0=args.rho0 if args.rho0 is not None else 1e-5)
    dual = run(DUAL, inst, dual_cfg, runtime_opts=rt)

    if args.out:
        admm_path = f"{args.out}_admm1.csv"
        dual_path = f"{args.out}_dual.csv"
        admm.trace.to_csv(admm_path, include_timing=args.timing)
        dual.trace.to_csv(dual_path, include_timing=args.timing)
        _emit("admm1_trace", admm_path)
        _emit("dual_trace", dual_path)
    _summarize_run("admm1_", admm, inst)
    _summarize_run("dual_", dual, inst)
    if len(admm.trace) and len(dual.trace):
        admm_primal = admm.trace.rows[-1].primal_residual
        dual_coupling = dual.trace.rows[-1].coupling_residual
        if admm_primal > 0:
            _emit("dual_over_admm_residual_ratio", dual_coupling / admm_primal)
    if args.figures:
        for path in figures.render_trace_figures(
                {"admm1": admm.trace, "dual decomposition": dual.trace},
                args.figures, "compare"):
            _emit("figure", path)
    return 0


def cmd_fault_sim(args):
    inst = _load_or_generate(args)
    config = _config(args, algorithm=ADMM1)
    plan = AggregationPlan(
        mode=REDUCE_BROADCAST if args.agg == "reduce" else ALLREDUCE,
        shard_count=max(args.threads, 1))
    baseline_rt = RuntimeOptions(worker_count=args.threads, plan=plan)
    faulted_rt = RuntimeOptions(worker_count=args.threads, plan=plan,
                                fault_policy=FaultPolicy(args.fail_prob, args.seed))

    baseline = run(ADMM1, inst, config, runtime_opts=baseline_rt)
    faulted = run(ADMM1, inst, config, runtime_opts=faulted_rt)

    if args.out:
        base_path = f"{args.out}_baseline.csv"
        fault_path = f"{args.out}_faulted.csv"
        baseline.trace.to_csv(base_path, include_timing=args.timing)
        faulted.trace.to_csv(fault_path, include_timing=args.timing)
        _emit("baseline_trace", base_path)
        _emit("faulted_trace", fault_path)

    _emit("fail_prob", args.fail_prob)
    rows = min(len(baseline.trace), len(faulted.trace))
    if rows:
        obj_base = baseline.trace.column("objective")[:rows]
        obj_fault = faulted.trace.column("objective")[:rows]
        rel = np.abs(obj_fault / obj_base - 1.0)
        _emit("max_relative_objective_error", float(rel.max()))
        if rows > 50:
            _emit("relative_error_at_iter_50", float(rel[50]))
        _emit("final_relative_objective_error", float(rel[-1]))
    _summarize_run("baseline_", baseline, inst)
    _summarize_run("faulted_", faulted, inst)
    if args.figures:
        written = figures.render_trace_figures(
            {"fault-free": baseline.trace,
             f"p={args.fail_prob}": faulted.trace},
            args.figures, "fault_sim")
        if rows:
            extra = figures.render_relative_error_figure(
                baseline.trace.column("iter")[:rows],
                {f"p={args.fail_prob}": rel}, args.figures, "fault_sim")
            if extra:
                written.append(extra)
        for path in written:
            _emit("figure", path)
    return 0


def cmd_rho_sweep(args):
    inst = _load_or_generate(args)
    rt = _runtime(args)
    best_rho, best_iters = None, None
    records = []
    for rho in RHO_SWEEP_GRID:
        config = SolverConfig(rho=rho, max_iters=args.max_iters,
                              stop_threshold=args.tol)
        result = run(args.algorithm, inst, config, runtime_opts=rt,
                     record_trace=False)
        iters = result.state.k
        records.append((rho, iters, result.reason))
        print(f"rho={rho:.0e} iterations={iters} termination={result.reason}")
        if result.reason != ITERATION_LIMIT and (
                best_iters is None or iters < best_iters):
            best_rho, best_iters = rho, iters
    if best_rho is not None:
        print(f"best_rho={best_rho:.0e}")
        _emit("best_iterations", best_iters)
    else:
        _emit("best_rho", "none-converged")
    if args.out:
        import csv
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["rho", "iterations", "termination"])
            for rho, iters, reason in records:
                writer.writerow([repr(rho), iters, reason])
        _emit("sweep_csv", args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="facalloc",
        description="Multi-facility resource allocation: solvers and experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a random load-balancing instance")
    p_gen.add_argument("--n-users", type=int, required=True)
    p_gen.add_argument("--n-facilities", type=int, default=10)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--capacity-ratio", type=float, default=1.4)
    p_gen.add_argument("--q", type=float, default=None)
    p_gen.add_argument("--out", required=True, metavar="JSON")
    p_gen.add_argument("--spec-out", default=None, metavar="JSON",
                       help="also write the domain spec")
    p_gen.set_defaults(func=cmd_gen)

    p_solve = sub.add_parser("solve", help="run one algorithm, write a trace")
    _add_instance_source(p_solve)
    _add_solver_flags(p_solve)
    p_solve.add_argument("--out", default=None, metavar="CSV")
    p_solve.add_argument("--with-reference", action="store_true",
                         help="solve a tight reference first and record Vk")
    p_solve.set_defaults(func=cmd_solve)

    p_cmp = sub.add_parser("compare",
                           help="run ADMM and dual decomposition side by side")
    _add_instance_source(p_cmp)
    _add_solver_flags(p_cmp)
    p_cmp.add_argument("--out", default=None, metavar="PREFIX")
    p_cmp.set_defaults(func=cmd_compare)

    p_fault = sub.add_parser("fault-sim",
                             help="overlay fault-free and faulted runs")
    _add_instance_source(p_fault)
    _add_solver_flags(p_fault)
    p_fault.add_argument("--out", default=None, metavar="PREFIX")
    p_fault.set_defaults(func=cmd_fault_sim)

    p_sweep = sub.add_parser("rho-sweep",
                             help="evaluate the standard penalty grid")
    _add_instance_source(p_sweep)
    _add_solver_flags(p_sweep)
    p_sweep.add_argument("--out", default=None, metavar="CSV")
    p_sweep.set_defaults(func=cmd_rho_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
