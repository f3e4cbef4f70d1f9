"""Convergence experiments: heterogeneous flows against the effective flow,
with state-error and energy-gap tables across a list of scale parameters.

The effective reference is computed, not assumed: the tabulated integrand is
cross-validated against the analytic harmonic-mean coefficient in the 1-D
quadratic case before it is used, and the reference flow runs at 4x finer
mesh and time step so its own discretization error is negligible against the
smallest oscillation effect.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corrector import (
    CellProblem,
    evaluator_from_table,
    hom_scalars,
    save_table,
    solve_cell,
    tabulate_Vhom,
)
from .errors import InsufficientData
from .fem import Grid, dump_binary, gradient, integrate_elem, make_grid, norm_Lp, subsample_map
from .flow import (
    FlowConfig,
    FlowProblem,
    Trajectory,
    build_heterogeneous_problem,
    build_homogenized_problem,
    energy,
    solve_flow,
)
from .integrands import IntegrandSpec
from .plotting import gnuplot_script, render_energy_figure, render_error_figure, _tkey
from .probability import ShiftSpace, build_ensemble, invariant_projection
from .unfolding import make_plan, recovery_sequence, unfold


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    space: ShiftSpace
    spec: IntegrandSpec
    epsilons: tuple
    n: int
    tau: float
    horizon: float
    observe: tuple
    initial: dict = field(default_factory=lambda: {"kind": "sin", "amplitude": 0.25})
    mode: str = "plain"               # plain | well_prepared
    seed: int = 0
    reference_refine: int = 4
    margin_factor: float = 2.0        # recovery cutoff margin = factor * eps
    f_axis_points: int = 33
    f_margin: float = 0.5             # F-grid headroom beyond the pilot range
    table_n_c: int = 8

    def __post_init__(self):
        for eps in self.epsilons:
            N = round(1.0 / eps)
            if abs(N * eps - 1.0) > 1e-12 or self.n % N != 0:
                raise ValueError(f"epsilon {eps} violates the grid alignment rule")
        for t in self.observe:
            steps = t / self.tau
            if abs(steps - round(steps)) > 1e-9:
                raise ValueError(f"observation time {t} is off the time grid")

    def to_config(self) -> dict:
        return {
            "name": self.name,
            "space": self.space.to_config(),
            "integrand": self.spec.to_config(),
            "epsilons": list(self.epsilons),
            "n": self.n,
            "tau": self.tau,
            "horizon": self.horizon,
            "observe": list(self.observe),
            "initial": self.initial,
            "mode": self.mode,
            "seed": self.seed,
            "reference_refine": self.reference_refine,
            "margin_factor": self.margin_factor,
            "f_axis_points": self.f_axis_points,
            "f_margin": self.f_margin,
            "table_n_c": self.table_n_c,
        }


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def initial_field(grid: Grid, descriptor: dict) -> np.ndarray:
    kind = descriptor.get("kind", "sin")
    amp = float(descriptor.get("amplitude", 0.25))
    mode = int(descriptor.get("mode", 1))
    x = grid.nodes
    if kind == "sin":
        out = amp * np.sin(np.pi * mode * x[:, 0])
        for i in range(1, grid.d):
            out = out * np.sin(np.pi * mode * x[:, i])
        return out
    if kind == "zero":
        return np.zeros(grid.n_nodes)
    raise ValueError(f"unknown initial-data kind {kind!r}")


def nodal_gradient_weight(grid: Grid, y: np.ndarray) -> np.ndarray:
    """Nodal modulation for the corrector ansatz: element slopes averaged to
    the nodes (1-D)."""
    if grid.d != 1:
        raise NotImplementedError("well-prepared data is implemented for d = 1")
    G = np.atleast_2d(gradient(grid, y)[..., 0])[0]
    w = np.empty(grid.n_nodes)
    w[1:-1] = 0.5 * (G[:-1] + G[1:])
    w[0], w[-1] = G[0], G[-1]
    return w


def well_prepared_initial(exp: ExperimentSpec, grid: Grid, ensemble, plan,
                          y0: np.ndarray, table) -> np.ndarray:
    """Corrector-dressed initial data
    y0 + eps * (shifted unit-corrector potential) * cutoff * grad y0.

    The linear-in-F scaling of the corrector requires the certified
    quadratic gradient integrand.
    """
    if table.quad_matrix is None:
        raise NotImplementedError(
            "well-prepared data needs the quadratic-certified effective integrand"
        )
    m = ensemble.lattice_m
    phi = solve_cell(CellProblem(spec=exp.spec, space=exp.space,
                                 F=np.array([1.0]), n_c=m)).phi
    margin = exp.margin_factor * plan.epsilon
    w = nodal_gradient_weight(grid, y0)
    return y0[None, :] + recovery_sequence(plan, phi, margin=margin, weight=w)


# --- reference and error measures -----------------------------------------------------


def _observe_indices(times: np.ndarray, observe, tau: float) -> dict:
    return {t: int(round(t / tau)) for t in observe}


def _pinv_pairing_defect(grid: Grid, weights, y_eps: np.ndarray, g_ref: np.ndarray) -> float:
    """Weak pairing defect of the sample-averaged gradient against fixed
    spatial modes at the element barycenters."""
    g_avg = np.tensordot(weights, gradient(grid, y_eps), axes=(0, 0))  # (ne, d)
    diff = g_avg - g_ref
    xb = grid.barycenters[:, 0]
    modes = [np.ones_like(xb), np.sin(np.pi * xb), np.cos(np.pi * xb),
             np.sin(2 * np.pi * xb)]
    worst = 0.0
    for psi in modes:
        for i in range(grid.d):
            worst = max(worst, abs(float(integrate_elem(grid, diff[:, i] * psi))))
    return worst


def run_single_epsilon(exp: ExperimentSpec, grid: Grid, y0: np.ndarray, table,
                       ref: dict, epsilon: float) -> dict:
    """Heterogeneous solve at one epsilon plus all per-time diagnostics."""
    t0 = time.perf_counter()
    m = round(exp.n * epsilon)
    ensemble = build_ensemble(exp.space, m=m, seed=exp.seed)
    plan = make_plan(grid, ensemble, epsilon)
    problem = build_heterogeneous_problem(grid, ensemble, exp.spec, epsilon)
    if exp.mode == "well_prepared":
        y_init = well_prepared_initial(exp, grid, ensemble, plan, y0, table)
    else:
        y_init = y0
    cfg = FlowConfig(tau=exp.tau, horizon=exp.horizon, Lam=exp.spec.Lam)
    traj = solve_flow(problem, y_init, cfg)

    idx = _observe_indices(traj.times, exp.observe, exp.tau)
    coarse_of_fine = ref["restrict"]
    state_error, e_eps, e_hom, gap, two_scale, pinv_defect = {}, {}, {}, {}, {}, {}
    for t, k in idx.items():
        y_eps = traj.fields[k]
        y_ref_c = ref["traj"].fields[k * ref["refine"]][0][coarse_of_fine]
        diff = y_eps - y_ref_c[None, :]
        key = _tkey(t)
        state_error[key] = norm_Lp(grid, ensemble.weights, diff, 2.0)
        e_eps[key] = energy(problem, y_eps)
        e_hom[key] = ref["energies"][k * ref["refine"]]
        gap[key] = abs(e_eps[key] - e_hom[key])
        two_scale[key] = norm_Lp(grid, ensemble.weights,
                                 unfold(plan, y_eps) - y_ref_c[None, :], 2.0)
        g_ref = gradient(grid, y_ref_c)
        pinv_defect[key] = _pinv_pairing_defect(grid, ensemble.weights, y_eps, g_ref)

    # rate-of-change distance in L2(0,T; Y), quotients on the coarse time grid
    s = ref["refine"]
    acc = 0.0
    for k in range(len(traj.times) - 1):
        rate_eps = (traj.fields[k + 1] - traj.fields[k]) / exp.tau
        rf = ref["traj"].fields
        rate_ref = (rf[(k + 1) * s][0][coarse_of_fine] - rf[k * s][0][coarse_of_fine]) / exp.tau
        acc += exp.tau * norm_Lp(grid, ensemble.weights,
                                 rate_eps - rate_ref[None, :], 2.0) ** 2
    runtime = time.perf_counter() - t0
    return {
        "_final_field": traj.fields[-1],
        "epsilon": epsilon,
        "state_error": state_error,
        "energy_eps": e_eps,
        "energy_hom": e_hom,
        "energy_gap": gap,
        "two_scale_strong": two_scale,
        "pinv_pairing_defect": pinv_defect,
        "rate_l2_error": float(np.sqrt(acc)),
        "initial_energy_eps": float(energy(problem, np.atleast_2d(y_init))),
        "energy_gap_initial": float(abs(energy(problem, np.atleast_2d(y_init))
                                        - ref["energies"][0])),
        "lsc_proxy_ok": bool(all(
            e_eps[_tkey(t)] >= e_hom[_tkey(t)] - 0.05 * (1 + abs(e_hom[_tkey(t)]))
            for t in exp.observe)),
        "_runtime": runtime,
    }


def run_convergence(exp: ExperimentSpec, threads: int = 1) -> dict:
    """Full experiment: pilot, effective table, fine reference, one
    heterogeneous run per epsilon, error/energy report rows."""
    grid = make_grid(exp.space.d, exp.n)
    y0 = initial_field(grid, exp.initial)

    # pilot at the coarsest epsilon fixes the F-grid range
    eps0 = max(exp.epsilons)
    ens0 = build_ensemble(exp.space, m=round(exp.n * eps0), seed=exp.seed)
    prob0 = build_heterogeneous_problem(grid, ens0, exp.spec, eps0)
    cfg0 = FlowConfig(tau=exp.tau, horizon=exp.horizon, Lam=exp.spec.Lam)
    pilot = solve_flow(prob0, y0, cfg0)
    f_max = max(float(np.abs(gradient(grid, f)).max()) for f in pilot.fields[::5])
    f_max = (1.0 + exp.f_margin) * max(f_max, 1e-6)

    axes = [np.linspace(-f_max, f_max, exp.f_axis_points)] * exp.space.d
    table = tabulate_Vhom(exp.spec, exp.space, axes, n_c=exp.table_n_c)
    v_eval = evaluator_from_table(table)
    r_hom, b_hom = hom_scalars(exp.space)

    # effective reference on a 4x finer space-time grid
    refine = exp.reference_refine
    fine = make_grid(exp.space.d, exp.n * refine)
    ref_problem = build_homogenized_problem(fine, exp.spec, r_hom, b_hom, v_eval)
    ref_cfg = FlowConfig(tau=exp.tau / refine, horizon=exp.horizon, Lam=exp.spec.Lam)
    ref_traj = solve_flow(ref_problem, initial_field(fine, exp.initial), ref_cfg)
    ref = {
        "traj": ref_traj,
        "energies": ref_traj.energies,
        "refine": refine,
        "restrict": subsample_map(fine, grid),
    }

    order = sorted(exp.epsilons, reverse=True)
    rows = [None] * len(order)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = {pool.submit(run_single_epsilon, exp, grid, y0, table, ref, eps): i
                    for i, eps in enumerate(order)}
            for fut, i in futs.items():
                rows[i] = fut.result()
    else:
        for i, eps in enumerate(order):
            rows[i] = run_single_epsilon(exp, grid, y0, table, ref, eps)

    return {
        "rows": rows,
        "table": table,
        "reference_energy_initial": float(ref_traj.energies[0]),
        "pilot_f_max": f_max,
    }


def rate_table(rows: list, observe) -> dict:
    """Log error ratios between consecutive epsilon levels."""
    if len(rows) < 2:
        raise InsufficientData("need at least two epsilon levels for rates")
    out = {}
    for t in observe:
        key = _tkey(t)
        errs = np.array([r["state_error"][key] for r in rows])
        eps = np.array([r["epsilon"] for r in rows])
        with np.errstate(divide="ignore", invalid="ignore"):
            rates = np.log(errs[:-1] / errs[1:]) / np.log(eps[:-1] / eps[1:])
        out[key] = rates.tolist()
    return out


# --- report files -----------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_report(out_dir: Path, exp: ExperimentSpec, result: dict) -> dict:
    """report.csv / report.json / plots.gp / figures / checkpoint dumps under
    a config-hash run directory.  Timings go to a separate sidecar so the
    report files are reproducible bit for bit."""
    cfg = exp.to_config()
    digest = config_hash(cfg)
    run_dir = Path(out_dir) / f"{exp.name}-{digest}"
    run_dir.mkdir(parents=True, exist_ok=True)

    rows = result["rows"]
    observe = list(exp.observe)
    header = ["epsilon"]
    header += [f"state_error_t{_tkey(t)}" for t in observe]
    header += [f"energy_gap_t{_tkey(t)}" for t in observe]
    header += [f"two_scale_t{_tkey(t)}" for t in observe]
    header += [f"pinv_defect_t{_tkey(t)}" for t in observe]
    header += ["rate_l2_error", "initial_energy_eps", "energy_gap_initial"]
    lines = [",".join(header)]
    for row in rows:
        vals = [row["epsilon"]]
        vals += [row["state_error"][_tkey(t)] for t in observe]
        vals += [row["energy_gap"][_tkey(t)] for t in observe]
        vals += [row["two_scale_strong"][_tkey(t)] for t in observe]
        vals += [row["pinv_pairing_defect"][_tkey(t)] for t in observe]
        vals += [row["rate_l2_error"], row["initial_energy_eps"],
                 row["energy_gap_initial"]]
        lines.append(",".join(_fmt(v) for v in vals))
    (run_dir / "report.csv").write_text("\n".join(lines) + "\n")

    rates = rate_table(rows, observe) if len(rows) >= 2 else {}
    payload = {
        "config": cfg,
        "config_hash": digest,
        "rows": [{k: v for k, v in row.items() if not k.startswith("_")} for row in rows],
        "rates": rates,
        "pilot_f_max": result["pilot_f_max"],
        "reference_energy_initial": result["reference_energy_initial"],
    }
    (run_dir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (run_dir / "plots.gp").write_text(gnuplot_script(observe))
    render_error_figure(rows, observe, run_dir / "error_vs_eps.png")
    render_energy_figure(rows, observe, run_dir / "energy_gap.png")
    save_table(run_dir / "homtable", result["table"])
    for row in rows:
        N = round(1.0 / row["epsilon"])
        dump_binary(run_dir / f"final_field_eps_1over{N}.bin", row["_final_field"])
    timings = {f"eps={row['epsilon']:g}": row["_runtime"] for row in rows}
    (run_dir / "timings.log").write_text(
        "\n".join(f"{k}: {v:.3f}s" for k, v in timings.items()) + "\n")
    return {"run_dir": run_dir, "rates": rates}
