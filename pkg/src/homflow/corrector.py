"""Cell problems on the coefficient torus and the tabulated effective
integrands they define.

For a macroscopic gradient F the cell problem minimizes the torus average of
V(a, F + grad phi) over periodic P1 potentials phi with one pinned degree of
freedom; the minimum is the effective integrand value V_hom(F) and the
average flux is its derivative (envelope theorem).  On the torus model the
problem is deterministic; for the checkerboard it is solved per periodized
realization and averaged with a reported standard error.

The effective reaction and dissipation coefficients average exactly:
r_hom = <r> and, the double well being linear in its coefficient,
f_hom is a double well with b_hom = <b>.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ConvexityFailure
from .fem import Grid, dump_binary, load_binary, make_torus_grid
from .flow import FlowProblem, ZeroParts, _minimize
from .integrands import IntegrandSpec, eval_V
from .probability import OmegaEnsemble, ShiftSpace, _cell_index


@dataclass(frozen=True)
class CellProblem:
    spec: IntegrandSpec
    space: ShiftSpace
    F: np.ndarray              # (d,)
    n_c: int                   # sub-cells of the torus grid per unit cell
    a_cells: np.ndarray | None = None  # overrides the pattern (checkerboard realization)


@dataclass
class CellSolution:
    phi: np.ndarray            # (n_torus_nodes,) potential, pinned at node 0
    chi: np.ndarray            # (n_torus_elems, d) potential gradients
    value: float               # V_hom(F)
    flux: np.ndarray           # (d,) average dV(a, F + chi)
    residual: float
    iters: int


def _torus_problem(problem: CellProblem, grid: Grid) -> FlowProblem:
    space = problem.space
    if problem.a_cells is not None:
        a_cells = np.asarray(problem.a_cells)
    else:
        _, a_cells, _ = space.pattern_arrays()
    idx = _cell_index(space, grid.barycenters)
    a_elems = a_cells[idx][None, ...]
    F = np.asarray(problem.F, dtype=float)
    offset = np.broadcast_to(F, (1, grid.n_elems, grid.d)).copy()
    fixed = np.zeros(grid.n_nodes, dtype=bool)
    fixed[0] = True
    nn = grid.n_nodes
    return FlowProblem(
        grid=grid, weights=np.array([1.0]),
        r_nodes=np.ones((1, nn)), b_nodes=np.zeros((1, nn)),
        spec=problem.spec, a_elems=a_elems,
        grad_offset=offset, fixed_mask=fixed,
    )


def solve_cell(problem: CellProblem, tol: float = 1e-11,
               max_iter: int = 80, phi0: np.ndarray | None = None) -> CellSolution:
    """Minimize the torus-averaged gradient integrand at macroscopic
    gradient F.  The normalization divides by the torus volume L^d, turning
    sums into probability averages."""
    grid = make_torus_grid(problem.space.d, problem.space.L, problem.n_c)
    fp = _torus_problem(problem, grid)
    v0 = np.zeros((1, grid.n_nodes)) if phi0 is None else np.atleast_2d(phi0)
    vol_norm = problem.space.L ** problem.space.d
    phi, info = _minimize(fp, ZeroParts(), v0, tol, max_iter)
    G = fp.gradient_arg(phi)
    vals = fp.v_value(G)
    flux = fp.v_flux(G)
    value = float(grid.elem_vol * vals[0].sum() / vol_norm)
    avg_flux = grid.elem_vol * flux[0].sum(axis=0) / vol_norm
    chi = G[0] - np.asarray(problem.F, dtype=float)
    return CellSolution(phi=phi[0], chi=chi, value=value, flux=avg_flux,
                        residual=info["residual"], iters=info["iters"])


def solve_cell_mc(spec: IntegrandSpec, ensemble: OmegaEnsemble, F, n_c: int,
                  tol: float = 1e-11) -> dict:
    """Checkerboard estimate: solve per periodized realization, report the
    sample mean and standard error of V_hom(F)."""
    space = ensemble.space
    vals = []
    for k in range(ensemble.size):
        prob = CellProblem(spec=spec, space=space, F=np.atleast_1d(F), n_c=n_c,
                           a_cells=ensemble.cell_a[k])
        vals.append(solve_cell(prob, tol=tol).value)
    vals = np.asarray(vals)
    n = len(vals)
    se = vals.std(ddof=1) / np.sqrt(n) if n > 1 else np.inf
    return {"mean": float(vals.mean()), "stderr": float(se), "values": vals}


# --- effective scalar coefficients ------------------------------------------------


def hom_scalars(space: ShiftSpace) -> tuple[float, float]:
    """(r_hom, b_hom): exact expectations of the dissipation weight and the
    reaction coefficient (both average linearly)."""
    if space.model == "torus":
        r, _, b = space.pattern_arrays()
        return float(r.mean()), float(b.mean())
    p = np.asarray(space.probabilities)
    r = np.array([mp.r for mp in space.values])
    b = np.array([mp.b for mp in space.values])
    return float(p @ r), float(p @ b)


# --- tabulation ----------------------------------------------------------------------


@dataclass
class HomTable:
    axes: list                    # d arrays of F-grid knots
    values: np.ndarray            # tensor grid of V_hom
    flux: np.ndarray              # tensor grid + trailing (d,)
    r_hom: float
    b_hom: float
    n_c: int
    convex_certified: bool
    quad_matrix: np.ndarray | None  # A with V_hom = F.A F/2 when certified quadratic
    quad_residual: float
    flux_fd_max_dev: float
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return len(self.axes)


def _certify_convex(axes, values, tol=1e-9):
    vals = np.atleast_2d(values) if len(axes) == 1 else values
    arrs = [values] if len(axes) == 1 else [values, values.T]
    for arr in arrs:
        arr2 = np.atleast_2d(arr)
        mid = arr2[..., 1:-1]
        if np.any(arr2[..., :-2] + arr2[..., 2:] - 2 * mid < -tol):
            raise ConvexityFailure("tabulated effective integrand fails the secant test")
    return True


def _fit_quadratic(axes, values):
    """Least-squares fit V = F . A F / 2 over the tensor grid."""
    if len(axes) == 1:
        F = axes[0]
        a = 2.0 * float(F**2 @ values) / float(F**2 @ F**2) if np.any(F) else 0.0
        fit = 0.5 * a * F**2
        res = float(np.max(np.abs(values - fit)))
        return np.array([[a]]), res
    F1, F2 = np.meshgrid(axes[0], axes[1], indexing="ij")
    X = np.stack([0.5 * F1.ravel() ** 2, F1.ravel() * F2.ravel(), 0.5 * F2.ravel() ** 2], axis=1)
    coef, *_ = np.linalg.lstsq(X, values.ravel(), rcond=None)
    A = np.array([[coef[0], coef[1]], [coef[1], coef[2]]])
    res = float(np.max(np.abs(values.ravel() - X @ coef)))
    return A, res


def tabulate_Vhom(spec: IntegrandSpec, space: ShiftSpace, axes, n_c: int,
                  tol: float = 1e-11) -> HomTable:
    """Solve the cell problem on a tensor F-grid; store values and fluxes,
    cross-check the flux against central differences of the values and
    certify convexity along grid lines."""
    axes = [np.asarray(ax, dtype=float) for ax in axes]
    d = space.d
    if len(axes) != d:
        raise ValueError("one F-axis per dimension required")
    shape = tuple(len(ax) for ax in axes)
    values = np.empty(shape)
    flux = np.empty(shape + (d,))
    phi_warm = None
    for idx in np.ndindex(shape):
        F = np.array([axes[i][idx[i]] for i in range(d)])
        sol = solve_cell(CellProblem(spec=spec, space=space, F=F, n_c=n_c),
                         tol=tol, phi0=phi_warm)
        phi_warm = sol.phi
        values[idx] = sol.value
        flux[idx] = sol.flux

    # envelope cross-check: flux vs central differences of the values
    dev = 0.0
    for i, ax in enumerate(axes):
        dF = np.diff(ax)
        if not np.allclose(dF, dF[0]):
            raise ValueError("F-axes must be uniform for the envelope check")
        fd = (np.take(values, range(2, shape[i]), axis=i)
              - np.take(values, range(0, shape[i] - 2), axis=i)) / (2 * dF[0])
        fl = np.take(flux[..., i], range(1, shape[i] - 1), axis=i)
        dev = max(dev, float(np.max(np.abs(fd - fl))))

    _certify_convex(axes, values)
    A, res = _fit_quadratic(axes, values)
    certified_quad = res <= 1e-8 * max(1.0, float(np.abs(values).max()))
    r_hom, b_hom = hom_scalars(space)
    return HomTable(
        axes=axes, values=values, flux=flux, r_hom=r_hom, b_hom=b_hom, n_c=n_c,
        convex_certified=True,
        quad_matrix=A if certified_quad else None, quad_residual=res,
        flux_fd_max_dev=dev,
        meta={"spec": spec.to_config(), "space": space.to_config()},
    )


# --- evaluators for the effective flow ----------------------------------------------


class QuadraticEvaluator:
    """Exact quadratic effective integrand V(G) = G . A G / 2."""

    def __init__(self, A: np.ndarray):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))

    def value(self, G):
        return 0.5 * np.einsum("...i,ij,...j->...", G, self.A, G)

    def flux(self, G):
        return np.einsum("ij,...j->...i", self.A, G)

    def hess(self, G):
        return np.broadcast_to(self.A, G.shape + (G.shape[-1],)).copy()


class Interp1DEvaluator:
    """Monotone C1 interpolation of a 1-D effective flux; the value is the
    exact antiderivative matched to the table at the origin knot."""

    def __init__(self, table: HomTable):
        ax = table.axes[0]
        fl = table.flux[:, 0]
        self._flux = PchipInterpolator(ax, fl, extrapolate=True)
        self._value = self._flux.antiderivative()
        i0 = int(np.argmin(np.abs(ax)))
        self._offset = table.values[i0] - float(self._value(ax[i0]))
        self._hess = self._flux.derivative()

    def value(self, G):
        return self._value(G[..., 0]) + self._offset

    def flux(self, G):
        return self._flux(G[..., 0])[..., None]

    def hess(self, G):
        return np.maximum(self._hess(G[..., 0]), 0.0)[..., None, None]


def evaluator_from_table(table: HomTable):
    """Quadratic fast path when certified, monotone interpolation otherwise."""
    if table.quad_matrix is not None:
        return QuadraticEvaluator(table.quad_matrix)
    if table.d == 1:
        return Interp1DEvaluator(table)
    raise NotImplementedError(
        "non-quadratic effective integrands are interpolated in 1-D only"
    )


def upper_bound_mean_V(spec: IntegrandSpec, space: ShiftSpace, F) -> float:
    """<V(., F)>: the zero-corrector admissible value, an upper bound for
    V_hom(F)."""
    _, a, _ = space.pattern_arrays()
    Fv = np.broadcast_to(np.atleast_1d(np.asarray(F, dtype=float)),
                         (a.shape[0], space.d))
    return float(np.mean(eval_V(spec, a, Fv)))


# --- serialization --------------------------------------------------------------------

_FORMAT_VERSION = 1


def save_table(path_prefix, table: HomTable) -> None:
    """Versioned JSON + binary pair <prefix>.json / <prefix>.bin."""
    payload = np.concatenate([table.values.ravel(), table.flux.ravel()])
    dump_binary(str(path_prefix) + ".bin", payload)
    meta = {
        "format_version": _FORMAT_VERSION,
        "axes": [ax.tolist() for ax in table.axes],
        "values_shape": list(table.values.shape),
        "flux_shape": list(table.flux.shape),
        "r_hom": table.r_hom,
        "b_hom": table.b_hom,
        "n_c": table.n_c,
        "convex_certified": table.convex_certified,
        "quad_matrix": None if table.quad_matrix is None else table.quad_matrix.tolist(),
        "quad_residual": table.quad_residual,
        "flux_fd_max_dev": table.flux_fd_max_dev,
        "meta": table.meta,
    }
    with open(str(path_prefix) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_table(path_prefix) -> HomTable:
    with open(str(path_prefix) + ".json") as fh:
        meta = json.load(fh)
    if meta["format_version"] != _FORMAT_VERSION:
        raise ValueError(f"unsupported table version {meta['format_version']}")
    payload = load_binary(str(path_prefix) + ".bin")
    nv = int(np.prod(meta["values_shape"]))
    values = payload[:nv].reshape(meta["values_shape"])
    flux = payload[nv:].reshape(meta["flux_shape"])
    qm = meta["quad_matrix"]
    return HomTable(
        axes=[np.asarray(ax) for ax in meta["axes"]],
        values=values, flux=flux, r_hom=meta["r_hom"], b_hom=meta["b_hom"],
        n_c=meta["n_c"], convex_certified=meta["convex_certified"],
        quad_matrix=None if qm is None else np.asarray(qm),
        quad_residual=meta["quad_residual"],
        flux_fd_max_dev=meta["flux_fd_max_dev"], meta=meta["meta"],
    )
