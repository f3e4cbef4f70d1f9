"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Desk-scale flagship defaults: d = 1, n = 256, L = 8, tau = 1e-3, T = 0.1.
Run with ``pytest tests/test_acceptance.py -v -s`` to see the summary lines.
"""

import json

import numpy as np
import pytest
import yaml
from pathlib import Path
from scipy.optimize import brentq

from homflow.cli import main as cli_main
from homflow.corrector import CellProblem, solve_cell
from homflow.fem import gradient, make_grid, norm_Lp
from homflow.flow import (
    FlowConfig,
    FlowProblem,
    apriori_check,
    build_heterogeneous_problem,
    evi_residual,
    fenchel_gap,
    solve_flow,
)
from homflow.integrands import IntegrandSpec, make_spec
from homflow.lab import ExperimentSpec, run_convergence
from homflow.probability import build_ensemble
from homflow.unfolding import (
    fold_adjoint,
    make_plan,
    recovery_defects,
    transformation_check,
    unfold,
)

from conftest import stripe_space_2d, two_phase_space

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"[acceptance {criterion}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# --- shared flagship setup -----------------------------------------------------------


def flagship_space():
    return two_phase_space(d=1, L=8, a=(1.0, 4.0), b=(1.0, 3.0))


def flagship_spec(space):
    return make_spec("quadratic", "double_well", p=2.0, c=4.0, space=space)


def flagship_experiment(mode="plain"):
    space = flagship_space()
    return ExperimentSpec(
        name="flagship1d", space=space, spec=flagship_spec(space),
        epsilons=(1 / 8, 1 / 16, 1 / 32), n=256, tau=1e-3, horizon=0.1,
        observe=(0.05, 0.1), initial={"kind": "sin", "amplitude": 0.25},
        mode=mode, seed=42,
    )


@pytest.fixture(scope="module")
def flagship_plain():
    return run_convergence(flagship_experiment("plain"))


@pytest.fixture(scope="module")
def flagship_wp():
    return run_convergence(flagship_experiment("well_prepared"))


@pytest.fixture(scope="module")
def flagship_problem_eps8():
    space = flagship_space()
    spec = flagship_spec(space)
    n, eps = 256, 1 / 8
    grid = make_grid(1, n)
    ens = build_ensemble(space, m=round(n * eps), seed=42)
    return build_heterogeneous_problem(grid, ens, spec, eps), grid, spec


@pytest.fixture(scope="module")
def heat_setup():
    grid = make_grid(1, 256)
    spec = IntegrandSpec(v_kind="quadratic", f_kind="double_well", p=2.0,
                         theta=4.0, c=2.0, lam=0.0, Lam=0.0)
    nn = grid.n_nodes
    problem = FlowProblem(
        grid=grid, weights=np.array([1.0]),
        r_nodes=np.ones((1, nn)), b_nodes=np.zeros((1, nn)),
        spec=spec, a_elems=np.ones((1, grid.n_elems)),
    )
    cfg = FlowConfig(tau=1e-3, horizon=0.1, Lam=0.0)
    traj = solve_flow(problem, np.sin(np.pi * grid.nodes[:, 0]), cfg)
    return problem, grid, traj


# --- criterion 1: unfolding isometry ---------------------------------------------------


def test_criterion_1_unfolding_isometry():
    space = two_phase_space(d=1, L=4, a=(1.0, 4.0))
    n = 48
    rng = np.random.default_rng(2024)
    worst_iso, worst_inv, worst_dual = 0.0, 0.0, 0.0
    for eps in (1 / 4, 1 / 8, 1 / 16):
        ens = build_ensemble(space, m=round(n * eps), seed=0)
        grid = make_grid(1, n)
        plan = make_plan(grid, ens, eps)
        for _ in range(100):
            u = rng.standard_normal((ens.size, grid.n_nodes))
            tu = unfold(plan, u)
            nu = norm_Lp(grid, ens.weights, u, 2.0)
            worst_iso = max(worst_iso, abs(norm_Lp(grid, ens.weights, tu, 2.0) - nu) / nu)
            back = fold_adjoint(plan, tu)
            worst_inv = max(worst_inv,
                            norm_Lp(grid, ens.weights, back - u, 2.0) / nu)
            v = rng.standard_normal((ens.size, grid.n_nodes))
            lhs = ens.weights @ ((tu * v) @ grid.vertex_w)
            rhs = ens.weights @ ((u * fold_adjoint(plan, v)) @ grid.vertex_w)
            worst_dual = max(worst_dual, abs(lhs - rhs) / max(1.0, abs(lhs)))
    ok = worst_iso <= 1e-12 and worst_inv <= 1e-12 and worst_dual <= 1e-12
    report("1 unfolding isometry", ok,
           f"isometry {worst_iso:.2e}, inverse {worst_inv:.2e}, adjoint {worst_dual:.2e} "
           "(tol 1e-12, 100 fields x 3 eps)")


# --- criterion 2: transformation formula -----------------------------------------------


def test_criterion_2_transformation_formula():
    space = two_phase_space(d=1, L=4, a=(1.0, 4.0))
    quad = make_spec("quadratic", "double_well", p=2.0, c=4.0, space=space)
    ppow = make_spec("p_power", "double_well", p=3.0, c=6.0, space=space)
    n, eps = 48, 1 / 8
    ens = build_ensemble(space, m=round(n * eps), seed=1)
    grid = make_grid(1, n)
    plan = make_plan(grid, ens, eps)
    rng = np.random.default_rng(11)
    worst = 0.0
    for spec in (quad, ppow):
        for _ in range(20):
            u = rng.standard_normal((ens.size, grid.n_nodes))
            lhs, _, defect = transformation_check(plan, spec, u)
            worst = max(worst, defect / max(1.0, abs(lhs)))
            g = gradient(grid, rng.standard_normal((ens.size, grid.n_nodes)))
            lhs, _, defect = transformation_check(plan, spec, g)
            worst = max(worst, defect / max(1.0, abs(lhs)))
    report("2 transformation formula", worst <= 1e-12,
           f"max defect {worst:.2e} over quadratic and p-power integrands (tol 1e-12)")


# --- criterion 3: corrector oracles ------------------------------------------------------


def test_criterion_3_corrector_oracles():
    space = two_phase_space(a=(1.0, 4.0))
    spec = make_spec("quadratic", "double_well", p=2.0, c=4.0, space=space)
    sol = solve_cell(CellProblem(spec=spec, space=space, F=np.array([1.0]), n_c=4))
    err_p2 = abs(sol.value - 0.5 * 1.6)

    space3 = two_phase_space(a=(1.0, 8.0))
    spec3 = make_spec("p_power", "double_well", p=3.0, c=16.0, space=space3)
    a3 = (0.5 * (1.0 + 8.0 ** (-0.5))) ** (-2.0)
    err_p3 = 0.0
    for F in (0.5, 1.0, 2.0):
        s3 = solve_cell(CellProblem(spec=spec3, space=space3, F=np.array([F]), n_c=8),
                        tol=1e-12)
        err_p3 = max(err_p3, abs(s3.value / (abs(F) ** 3 / 3.0) - a3))

    lam_space = stripe_space_2d(L=2, a=(1.0, 4.0))
    lam_spec = make_spec("quadratic", "double_well", p=2.0, c=4.0, space=lam_space)
    e1 = solve_cell(CellProblem(spec=lam_spec, space=lam_space,
                                F=np.array([1.0, 0.0]), n_c=4))
    e2 = solve_cell(CellProblem(spec=lam_spec, space=lam_space,
                                F=np.array([0.0, 1.0]), n_c=4))
    err_lam = max(abs(2 * e1.value - 1.6), abs(2 * e2.value - 2.5))

    ok = err_p2 <= 1e-8 and err_p3 <= 1e-6 and err_lam <= 1e-6
    report("3 corrector oracles", ok,
           f"p=2 harmonic {err_p2:.2e} (tol 1e-8), p=3 power mean {err_p3:.2e} (tol 1e-6), "
           f"laminate {err_lam:.2e} (tol 1e-6)")


# --- criterion 4: flow-solver oracles -----------------------------------------------------


def test_criterion_4_flow_oracles(heat_setup):
    problem, grid, traj = heat_setup
    x = grid.nodes[:, 0]
    exact = np.exp(-np.pi**2 * 0.1) * np.sin(np.pi * x)
    err_heat = norm_Lp(grid, None, traj.fields[-1] - exact, 2.0)

    grid2 = make_grid(1, 64)
    spec = make_spec("quadratic", "double_well", p=2.0, c=4.0,
                     space=two_phase_space(b=(1.0, 1.0)))
    nn = grid2.n_nodes
    const_problem = FlowProblem(
        grid=grid2, weights=np.array([1.0]),
        r_nodes=np.ones((1, nn)), b_nodes=np.ones((1, nn)),
        spec=spec, a_elems=np.ones((1, grid2.n_elems)), dirichlet=False,
    )
    tau, steps = 1e-2, 10
    cfg = FlowConfig(tau=tau, horizon=tau * steps, Lam=spec.Lam)
    run = solve_flow(const_problem, np.full(nn, 0.5), cfg)
    z, err_ode = 0.5, 0.0
    for k in range(steps):
        z = brentq(lambda w: (w - z) / tau + (4 * w**3 - 2 * w), -3, 3, xtol=1e-15)
        err_ode = max(err_ode, float(np.max(np.abs(run.fields[k + 1] - z))))

    ok = err_heat <= 5e-3 and err_ode <= 1e-10
    report("4 flow oracles", ok,
           f"heat decay error {err_heat:.2e} (tol 5e-3), "
           f"scalar ODE per-step {err_ode:.2e} (tol 1e-10)")


# --- criterion 5: apriori estimate ---------------------------------------------------------


def test_criterion_5_apriori(heat_setup, flagship_problem_eps8):
    problem_h, _, traj_h = heat_setup
    reports = [("heat", apriori_check(problem_h, traj_h))]

    problem_f, grid, spec = flagship_problem_eps8
    cfg = FlowConfig(tau=1e-3, horizon=0.1, Lam=spec.Lam)
    y0 = 0.25 * np.sin(np.pi * grid.nodes[:, 0])
    traj_f = solve_flow(problem_f, y0, cfg)
    reports.append(("flagship", apriori_check(problem_f, traj_f)))

    ok = all(rep["ok"] for _, rep in reports)
    detail = ", ".join(f"{name}: slack >= {rep['min_slack']:.2e}" for name, rep in reports)
    report("5 apriori estimate", ok, detail + " (tol -10*tol_N*k)")


# --- criterion 6: EVI residual --------------------------------------------------------------


def test_criterion_6_evi_residual(flagship_problem_eps8):
    problem, grid, spec = flagship_problem_eps8
    x = grid.nodes[:, 0]
    y0 = 0.25 * np.sin(np.pi * x)
    t_burn = 5e-3  # settles the initial layer; fixed in time across tau
    vals = {}
    for tau in (1e-3, 5e-4):
        cfg = FlowConfig(tau=tau, horizon=0.05, Lam=spec.Lam)
        traj = solve_flow(problem, y0, cfg)
        lib = [np.zeros_like(x), y0, 0.2 * np.sin(2 * np.pi * x)]
        stride = max(1, round(2e-3 / tau))
        lib += [traj.fields[j] for j in range(0, len(traj.times), stride)]
        res = evi_residual(problem, traj, lib, t_min=t_burn)
        vals[tau] = res["max_violation"]
    ok = vals[1e-3] <= 1e-3 and vals[5e-4] <= vals[1e-3] / 1.5 + 1e-12
    report("6 EVI residual", ok,
           f"max violation {vals[1e-3]:.2e} at tau=1e-3 (tol 1e-3), "
           f"{vals[5e-4]:.2e} at tau=5e-4 (reduction >= 1.5x, settled window t >= 5e-3)")


# --- criterion 7: integrated duality identity ------------------------------------------------


def test_criterion_7_fenchel_identity(heat_setup, flagship_problem_eps8):
    problem_h, grid_h, traj_h = heat_setup
    res_h = fenchel_gap(problem_h, traj_h, Lam=0.0)

    problem_f, grid_f, spec = flagship_problem_eps8
    cfg = FlowConfig(tau=1e-3, horizon=0.1, Lam=spec.Lam)
    y0 = 0.25 * np.sin(np.pi * grid_f.nodes[:, 0])
    traj_f = solve_flow(problem_f, y0, cfg)
    res_f = fenchel_gap(problem_f, traj_f)

    ok = (res_h["min_gap"] >= -1e-9 and res_f["min_gap"] >= -1e-9
          and res_h["total"] <= 5e-3 and res_f["total"] <= 2e-2)
    report("7 duality identity", ok,
           f"min gaps {res_h['min_gap']:.2e}/{res_f['min_gap']:.2e} (tol -1e-9), "
           f"totals {res_h['total']:.2e} (tol 5e-3) / {res_f['total']:.2e} (tol 2e-2)")


# --- criterion 8: recovery sequence -----------------------------------------------------------


def test_criterion_8_recovery_sequence():
    space = flagship_space()
    spec = flagship_spec(space)
    m, delta = 8, 0.05
    results = {}
    for eps in (1 / 4, 1 / 8, 1 / 16):
        n = round(m / eps)
        ens = build_ensemble(space, m=m, seed=0)
        grid = make_grid(1, n)
        plan = make_plan(grid, ens, eps)
        phi = solve_cell(CellProblem(spec=spec, space=space, F=np.array([1.0]),
                                     n_c=m)).phi
        results[eps] = recovery_defects(plan, phi, margin=0.125,
                                        theta=spec.theta, p=spec.p)
    ratios = [results[e]["theta_norm_over_eps"] for e in (1 / 4, 1 / 8, 1 / 16)]
    spread = (max(ratios) - min(ratios)) / ratios[0]
    grad_ok = results[1 / 16]["grad_defect"] <= results[1 / 4]["grad_defect"] + delta
    ok = spread <= 0.10 and grad_ok
    report("8 recovery sequence", ok,
           f"theta-norm/eps spread {spread:.2%} (tol 10%), gradient defect "
           f"{results[1 / 16]['grad_defect']:.2e} <= {results[1 / 4]['grad_defect']:.2e} + {delta}")


# --- criterion 9: flagship homogenization experiment -------------------------------------------


def test_criterion_9_flagship(flagship_plain, flagship_wp):
    rows = flagship_plain["rows"]
    errs = {t: [row["state_error"][t] for row in rows] for t in ("0.05", "0.1")}
    decreasing = all(e[0] > e[1] > e[2] for e in errs.values())
    final_ok = all(e[2] <= 0.5 * e[0] for e in errs.values())

    wp_rows = flagship_wp["rows"]
    gaps = [row["energy_gap_initial"] for row in wp_rows]
    gap_decreasing = gaps[0] > gaps[1] > gaps[2]

    ok = decreasing and final_ok and gap_decreasing
    report("9 flagship homogenization", ok,
           f"state errors t=0.05: {[f'{e:.3e}' for e in errs['0.05']]}, "
           f"t=0.1: {[f'{e:.3e}' for e in errs['0.1']]} (strict decay, final <= 0.5x); "
           f"well-prepared energy gaps {[f'{g:.3e}' for g in gaps]} (strict decay)")


# --- criterion 10: control experiment ----------------------------------------------------------


def test_criterion_10_control():
    space = two_phase_space(d=1, L=8, a=(2.5, 2.5), b=(2.0, 2.0))
    spec = make_spec("quadratic", "double_well", p=2.0, c=4.0, space=space)
    exp = ExperimentSpec(
        name="control1d", space=space, spec=spec,
        epsilons=(1 / 8, 1 / 16, 1 / 32), n=256, tau=1e-3, horizon=0.1,
        observe=(0.05, 0.1), initial={"kind": "sin", "amplitude": 0.25},
        mode="plain", seed=42,
    )
    res = run_convergence(exp)
    worst_var = 0.0
    for t in ("0.05", "0.1"):
        errs = [row["state_error"][t] for row in res["rows"]]
        worst_var = max(worst_var, (max(errs) - min(errs)) / max(errs))
    report("10 control experiment", worst_var <= 0.20,
           f"flat discretization error, variation {worst_var:.2%} across eps (tol 20%)")


# --- criterion 11: determinism ------------------------------------------------------------------


def test_criterion_11_determinism(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "demo_small.yaml").read_text())
    path = tmp_path / "demo.yaml"
    path.write_text(yaml.safe_dump(cfg))
    blobs = {}
    for workers in ("1", "8"):
        out = tmp_path / f"runs{workers}"
        code = cli_main(["converge", "--config", str(path), "--seed", "42",
                         "--out", str(out), "--threads", workers])
        assert code == 0
        run_dir = next(out.glob("demo-small-*"))
        blobs[workers] = {f.name: f.read_bytes() for f in sorted(run_dir.iterdir())
                          if f.suffix in (".csv", ".json", ".gp", ".bin", ".png")}
    same = blobs["1"].keys() == blobs["8"].keys() and all(
        blobs["1"][k] == blobs["8"][k] for k in blobs["1"])
    report("11 determinism", same,
           f"{len(blobs['1'])} report files byte-identical at 1 and 8 worker threads")
