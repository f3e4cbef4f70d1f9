"""Command-line front end.

Subcommands: validate, unfold-test, cell, flow, converge.  Exit codes:
0 success, 1 validation failure (growth/identity/acceptance violations),
2 usage error.  All numeric output is deterministic given config + seed and
independent of the worker-thread count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import corrector, lab
from .configio import build_experiment, build_space, build_spec, load_config
from .errors import BoundViolation, HomflowError
from .fem import dump_binary, make_grid
from .flow import FlowConfig, apriori_check, build_heterogeneous_problem, solve_flow
from .integrands import validate_growth
from .lab import config_hash, initial_field
from .probability import build_ensemble
from .unfolding import make_plan, test_function_library, transformation_check, unfold

USAGE_ERROR = 2
VALIDATION_ERROR = 1


def _thread_count(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("HOMFLOW_THREADS")
    return int(env) if env else 1


def _run_dir(args, cfg: dict, kind: str) -> Path:
    digest = config_hash({"cfg": cfg, "seed": args.seed, "kind": kind})
    out = Path(args.out) / f"{cfg.get('name', 'run')}-{kind}-{digest}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_validate(args, cfg) -> int:
    space = build_space(cfg["space"])
    spec = build_spec(cfg.get("integrand", {}), space)
    if space.model == "torus":
        ensemble = build_ensemble(space, m=4, seed=args.seed)
    else:
        ensemble = build_ensemble(space, seed=args.seed)
    try:
        report = validate_growth(spec, ensemble)
    except BoundViolation as exc:
        print(f"BoundViolation: {exc}", file=sys.stderr)
        return VALIDATION_ERROR
    print(report.to_json())
    return 0


def cmd_unfold_test(args, cfg) -> int:
    space = build_space(cfg["space"])
    spec = build_spec(cfg.get("integrand", {}), space)
    block = cfg.get("unfold", {})
    epsilons = [float(e) for e in block.get("epsilons", [0.25, 0.125])]
    n = int(block.get("n", 32))
    n_fields = int(block.get("n_fields", 20))
    rng = np.random.default_rng(args.seed)
    records = []
    worst = 0.0
    exact_model = space.model == "torus"
    for eps in epsilons:
        m = round(n * eps)
        ensemble = build_ensemble(space, m=m if exact_model else None, seed=args.seed)
        grid = make_grid(space.d, n)
        plan = make_plan(grid, ensemble, eps)
        for _ in range(n_fields):
            u = rng.standard_normal((ensemble.size, grid.n_nodes))
            nrm = np.sqrt(ensemble.weights @ ((u**2) @ grid.vertex_w))
            tu = unfold(plan, u)
            nrm_t = np.sqrt(ensemble.weights @ ((tu**2) @ grid.vertex_w))
            records.append({"epsilon": eps, "defect_name": "isometry",
                            "value": abs(nrm_t - nrm) / nrm})
            _, _, defect = transformation_check(plan, spec, u)
            records.append({"epsilon": eps, "defect_name": "transformation",
                            "value": defect})
        if exact_model:
            worst = max(worst, max(r["value"] for r in records
                                   if r["epsilon"] == eps))
        lib = test_function_library(plan, seed=args.seed)
        run_dir = _run_dir(args, cfg, "unfold")
        dump_binary(run_dir / f"library_eps_1over{round(1 / eps)}.bin",
                    np.stack([f for _, f in lib]))
    run_dir = _run_dir(args, cfg, "unfold")
    (run_dir / "diagnostics.json").write_text(
        json.dumps(records, indent=2, sort_keys=True) + "\n")
    print(f"unfold diagnostics: {len(records)} records -> {run_dir}")
    if exact_model and worst > 1e-11:
        print(f"unfold identity defect {worst:.3e} exceeds tolerance", file=sys.stderr)
        return VALIDATION_ERROR
    return 0


def cmd_cell(args, cfg) -> int:
    space = build_space(cfg["space"])
    spec = build_spec(cfg.get("integrand", {}), space)
    block = cfg.get("cell", {})
    n_c = int(block.get("n_c", 8))
    ax = block.get("axis", {"min": -2.0, "max": 2.0, "points": 17})
    axis = np.linspace(float(ax["min"]), float(ax["max"]), int(ax["points"]))
    table = corrector.tabulate_Vhom(spec, space, [axis] * space.d, n_c=n_c)
    run_dir = _run_dir(args, cfg, "cell")
    corrector.save_table(run_dir / "homtable", table)

    # oracle comparisons for the printable summary
    lines = [f"effective table -> {run_dir}"]
    if space.d == 1 and space.model == "torus":
        _, a_cells, _ = space.pattern_arrays()
        q = 1.0 / (spec.p - 1.0)
        a_or = float(np.mean(a_cells ** (-q)) ** (-1.0 / q))
        sol = corrector.solve_cell(corrector.CellProblem(
            spec=spec, space=space, F=np.array([1.0]), n_c=n_c))
        computed = sol.value * spec.p
        lines.append(f"power-mean oracle a_hom = {a_or:.12g}, computed = {computed:.12g}, "
                     f"|diff| = {abs(a_or - computed):.3e}")
    lines.append(f"quadratic certificate: {table.quad_matrix is not None} "
                 f"(fit residual {table.quad_residual:.3e})")
    lines.append(f"flux vs value-derivative deviation: {table.flux_fd_max_dev:.3e}")
    print("\n".join(lines))
    return 0


def cmd_flow(args, cfg) -> int:
    space = build_space(cfg["space"])
    spec = build_spec(cfg.get("integrand", {}), space)
    block = cfg.get("flow", {})
    eps = float(block.get("epsilon", cfg["experiment"]["epsilons"][0]))
    n = int(block.get("n", cfg["experiment"]["n"]))
    tau = float(block.get("tau", cfg["experiment"]["tau"]))
    horizon = float(block.get("horizon", cfg["experiment"]["horizon"]))
    stride = int(block.get("checkpoint_stride", 50))
    grid = make_grid(space.d, n)
    ensemble = build_ensemble(space, m=round(n * eps), seed=args.seed)
    problem = build_heterogeneous_problem(grid, ensemble, spec, eps)
    config = FlowConfig(tau=tau, horizon=horizon, Lam=spec.Lam,
                        newton_tol=float(block.get("newton_tol", 1e-10)))
    y0 = initial_field(grid, cfg["experiment"].get("initial", {"kind": "sin"}))
    traj = solve_flow(problem, y0, config)
    run_dir = _run_dir(args, cfg, "flow")
    rows = ["t,energy,cumulative_dissipation,newton_residual,newton_iters"]
    cum = traj.cumulative_dissipation
    for k, t in enumerate(traj.times):
        res = traj.residuals[k - 1] if k else 0.0
        its = traj.newton_iters[k - 1] if k else 0
        rows.append(f"{t:.17g},{traj.energies[k]:.17g},{cum[k]:.17g},{res:.17g},{its}")
    (run_dir / "trajectory.csv").write_text("\n".join(rows) + "\n")
    for k in range(0, len(traj.times), stride):
        dump_binary(run_dir / f"field_{k:06d}.bin", traj.fields[k])
    dump_binary(run_dir / f"field_{len(traj.times) - 1:06d}.bin", traj.fields[-1])
    report = apriori_check(problem, traj)
    (run_dir / "apriori.json").write_text(json.dumps(
        {k: v for k, v in report.items() if not isinstance(v, np.ndarray)},
        indent=2, sort_keys=True) + "\n")
    print(f"flow run -> {run_dir} (min dissipation slack {report['min_slack']:.3e})")
    return 0 if report["ok"] else VALIDATION_ERROR


def cmd_converge(args, cfg) -> int:
    exp = build_experiment(cfg, seed_override=args.seed)
    result = lab.run_convergence(exp, threads=_thread_count(args))
    written = lab.write_report(Path(args.out), exp, result)
    print(f"convergence report -> {written['run_dir']}")
    for key, rates in written["rates"].items():
        print(f"rates at t={key}: " + ", ".join(f"{r:.3f}" for r in rates))
    return 0


_COMMANDS = {
    "validate": cmd_validate,
    "unfold-test": cmd_unfold_test,
    "cell": cmd_cell,
    "flow": cmd_flow,
    "converge": cmd_converge,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homflow",
        description="heterogeneous gradient flows, effective integrands and "
                    "scale-convergence experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML configuration file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed (64-bit integer)")
        p.add_argument("--out", default="runs", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: HOMFLOW_THREADS or 1)")
        p.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    config_path = Path(args.config)
    if not config_path.is_file():
        print(f"config file not found: {config_path}", file=sys.stderr)
        return USAGE_ERROR
    try:
        cfg = load_config(config_path)
    except Exception as exc:
        print(f"cannot parse config: {exc}", file=sys.stderr)
        return USAGE_ERROR
    if args.seed is None:
        args.seed = int(cfg.get("seed", 0))
    try:
        return _COMMANDS[args.command](args, cfg)
    except HomflowError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return VALIDATION_ERROR


if __name__ == "__main__":
    sys.exit(main())
