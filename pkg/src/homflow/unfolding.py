"""Sample-shift (unfolding) operator, two-scale diagnostics and recovery
sequences.

On the torus model with an aligned setup -- epsilon = 1/N, grid spacing
h = 1/n with n = N*m, offset lattice spacing 1/m -- every shift x/eps used
below lands on the offset lattice, so the operator is realized as a pure
permutation of the sample axis, one permutation per node (nodal fields) or
per element (gradient fields).  Coefficients are never re-evaluated, which
makes the isometry and the transformation formula exact to rounding.

Element shifts use the element's cell corner: on the lattice, the cell
containing ``offset + barycenter/eps`` equals the cell containing
``offset + corner/eps`` (the barycenter's fractional part never crosses a
unit-cell boundary), so the corner permutation reproduces barycenter
coefficient lookups exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError
from .fem import Grid, grad_norm_Lp, gradient, integrate_elem, integrate_nodal, norm_Lp
from .integrands import IntegrandSpec, eval_V
from .probability import OmegaEnsemble, sample_coefficients


@dataclass(frozen=True)
class UnfoldPlan:
    epsilon: float
    N: int                    # 1/epsilon
    grid: Grid
    ensemble: OmegaEnsemble
    node_steps: np.ndarray    # (n_nodes, d) lattice steps of x_j / eps
    elem_steps: np.ndarray    # (n_elems, d) lattice steps of the element corner / eps
    side: int                 # offsets per axis (L * m)


def make_plan(grid: Grid, ensemble: OmegaEnsemble, epsilon: float) -> UnfoldPlan:
    """Precompute the permutation tables; raises AlignmentError whenever a
    shift would leave the offset lattice."""
    if grid.periodic:
        raise AlignmentError("unfolding acts on the spatial grid, not the torus")
    if ensemble.lattice_m is None:
        raise AlignmentError("ensemble offsets are not on a lattice (Monte Carlo model)")
    N = round(1.0 / epsilon)
    if abs(N * epsilon - 1.0) > 1e-12 or N < 1:
        raise AlignmentError(f"epsilon = {epsilon} is not the reciprocal of an integer")
    if grid.n % N != 0:
        raise AlignmentError(f"grid n = {grid.n} is not a multiple of N = {N}")
    m_grid = grid.n // N
    m_ens = ensemble.lattice_m
    if m_ens % m_grid != 0:
        raise AlignmentError(
            f"offset lattice (1/{m_ens}) does not resolve the shift lattice (1/{m_grid})"
        )
    q = m_ens // m_grid
    side = ensemble.space.L * m_ens
    if grid.d == 1:
        node_steps = (np.arange(grid.n_nodes)[:, None] * q) % side
    else:
        node_steps = np.rint(grid.nodes / grid.h).astype(int) * q % side
    elem_steps = (grid.corner_cells * q) % side
    return UnfoldPlan(
        epsilon=epsilon, N=N, grid=grid, ensemble=ensemble,
        node_steps=node_steps, elem_steps=elem_steps, side=side,
    )


def _permute(plan: UnfoldPlan, values: np.ndarray, steps: np.ndarray, sign: int) -> np.ndarray:
    """Shift the sample axis by ``sign * steps`` lattice steps, independently
    per node/element column."""
    values = np.asarray(values)
    K = plan.ensemble.size
    if values.shape[0] != K or values.shape[1] != steps.shape[0]:
        raise ValueError("field extents do not match the plan")
    cols = np.arange(steps.shape[0])
    if plan.grid.d == 1:
        idx = (np.arange(K)[:, None] - sign * steps[None, :, 0]) % K
    else:
        S = plan.side
        k1, k2 = np.arange(K) // S, np.arange(K) % S
        idx = ((k1[:, None] - sign * steps[None, :, 0]) % S) * S \
            + (k2[:, None] - sign * steps[None, :, 1]) % S
    if values.ndim == 2:
        return values[idx, cols[None, :]]
    return values[idx, cols[None, :], :]


def unfold(plan: UnfoldPlan, field: np.ndarray) -> np.ndarray:
    """Nodal ensemble field (K, n_nodes): output at (omega, x_j) reads the
    input at the sample shifted by -x_j/eps."""
    return _permute(plan, field, plan.node_steps, sign=+1)


def fold_adjoint(plan: UnfoldPlan, field: np.ndarray) -> np.ndarray:
    """Adjoint (= inverse) shift: input sample moved by +x_j/eps."""
    return _permute(plan, field, plan.node_steps, sign=-1)


def unfold_gradient(plan: UnfoldPlan, grads: np.ndarray) -> np.ndarray:
    """Elementwise field (K, n_elems[, d]) unfolded with the element shifts."""
    return _permute(plan, grads, plan.elem_steps, sign=+1)


def fold_adjoint_gradient(plan: UnfoldPlan, grads: np.ndarray) -> np.ndarray:
    return _permute(plan, grads, plan.elem_steps, sign=-1)


# --- transformation formula -----------------------------------------------------


def transformation_check(plan: UnfoldPlan, spec: IntegrandSpec, field: np.ndarray,
                         misalign: float = 0.0) -> tuple[float, float, float]:
    """Both sides of the oscillating-vs-unfolded integral identity.

    lhs integrates V with coefficients evaluated at the shifted sample
    (oscillating frame); rhs integrates V of the unfolded field with
    non-oscillating coefficients.  ``field`` may be nodal (K, n_nodes),
    checked with vertex quadrature, or elementwise (K, n_elems, d), checked
    with barycenter quadrature.  A nonzero ``misalign`` displaces the
    lhs coefficient lookups off the lattice (negative control); the defect
    is then reported, not asserted.
    """
    ens = plan.ensemble
    w = ens.weights
    grid = plan.grid
    if field.ndim == 2 and field.shape[1] == grid.n_nodes:
        pts = grid.nodes / plan.epsilon + misalign
        _, a_osc, _ = sample_coefficients(ens, pts)
        _, a_flat, _ = sample_coefficients(ens, np.zeros((1, grid.d)))
        lhs_pt = eval_V(spec, a_osc, field[..., None])
        rhs_pt = eval_V(spec, a_flat, unfold(plan, field)[..., None])
        lhs = float(w @ integrate_nodal(grid, lhs_pt))
        rhs = float(w @ integrate_nodal(grid, rhs_pt))
    elif field.ndim == 3 and field.shape[1] == grid.n_elems:
        pts = grid.barycenters / plan.epsilon + misalign
        _, a_osc, _ = sample_coefficients(ens, pts)
        _, a_flat, _ = sample_coefficients(ens, np.zeros((1, grid.d)))
        lhs = float(w @ integrate_elem(grid, eval_V(spec, a_osc, field)))
        rhs = float(w @ integrate_elem(grid, eval_V(spec, a_flat, unfold_gradient(plan, field))))
    else:
        raise ValueError("field shape matches neither nodes nor elements")
    return lhs, rhs, abs(lhs - rhs)


# --- test-function library and two-scale distances --------------------------------


def test_function_library(plan: UnfoldPlan, seed: int = 0, n_modes: int = 3) -> list:
    """Fixed separable test fields: pattern-cell indicators in omega times
    low trigonometric modes in x, plus one seeded smooth random field.
    Returns a list of (name, field (K, n_nodes)) pairs."""
    grid, ens = plan.grid, plan.ensemble
    space = ens.space
    cells = np.mod(np.floor(ens.offsets).astype(int), space.L)
    flat = cells[:, 0] if space.d == 1 else cells[:, 0] * space.L + cells[:, 1]
    x = grid.nodes
    modes = [("one", np.ones(grid.n_nodes))]
    for l in range(1, n_modes + 1):
        modes.append((f"sin{l}", np.sin(np.pi * l * x[:, 0]) if grid.d == 1
                      else np.sin(np.pi * l * x[:, 0]) * np.sin(np.pi * l * x[:, 1])))
    lib = []
    n_cells = min(space.L**space.d, 4)
    for c in range(n_cells):
        ind = (flat == c).astype(float)
        for name, eta in modes:
            lib.append((f"cell{c}*{name}", ind[:, None] * eta[None, :]))
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal(3)
    smooth = sum(coeffs[l - 1] * np.sin(np.pi * l * x[:, 0]) for l in range(1, 4))
    lib.append(("random_smooth", np.broadcast_to(smooth, (ens.size, grid.n_nodes)).copy()))
    return lib


def two_scale_distance(plan: UnfoldPlan, u_eps: np.ndarray, target: np.ndarray,
                       library: list | None = None) -> dict:
    """Strong and weak two-scale distances of one sequence entry to a target.

    Returns a dict with ``strong`` = ||unfold(u_eps) - target||_2, and two
    defect families over the test library: ``weak`` pairs the unfolded
    difference against each test field (the two-scale pairing), ``plain``
    pairs the raw difference (the ordinary weak-L2 pairing, which is the
    relevant one for oscillating sequences tested against fixed fields).
    """
    if library is None:
        library = test_function_library(plan)
    grid, ens = plan.grid, plan.ensemble
    target = np.broadcast_to(np.atleast_2d(target), u_eps.shape)
    unf = unfold(plan, u_eps)
    strong = norm_Lp(grid, ens.weights, unf - target, 2.0)
    weak, plain = {}, {}
    for name, phi in library:
        weak[name] = float(abs(ens.weights @ integrate_nodal(grid, (unf - target) * phi)))
        plain[name] = float(abs(ens.weights @ integrate_nodal(grid, (u_eps - target) * phi)))
    return {"strong": float(strong), "weak": weak, "plain": plain}


# --- recovery sequences ------------------------------------------------------------


def boundary_cutoff(grid: Grid, margin: float) -> np.ndarray:
    """Polynomial bump vanishing on the boundary: smoothstep of
    dist(x, boundary)/margin, equal to 1 at distance >= margin."""
    x = grid.nodes
    dist = np.minimum(x, grid.length - x).min(axis=1)
    t = np.clip(dist / margin, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _check_torus_alignment(plan: UnfoldPlan, phi: np.ndarray) -> None:
    if phi.shape != (plan.ensemble.size,):
        raise AlignmentError(
            "torus potential must live on the offset lattice "
            f"(expected shape ({plan.ensemble.size},), got {phi.shape})"
        )


def torus_gradient_field(plan: UnfoldPlan, phi: np.ndarray) -> np.ndarray:
    """Per-sample torus gradient of a lattice potential, arranged as the
    elementwise target (K, n_elems, d) that the unfolded gradient of the
    recovery field reproduces where the cutoff is 1.

    Sample k picks the torus element whose corner is offset k; in 2-D the
    lower/upper triangle matching the spatial element's kind is used.
    """
    _check_torus_alignment(plan, phi)
    ens = plan.ensemble
    K, s = ens.size, 1.0 / ens.lattice_m
    ne = plan.grid.n_elems
    if plan.grid.d == 1:
        slope = (np.roll(phi, -1) - phi) / s
        return np.broadcast_to(slope[:, None, None], (K, ne, 1)).copy()
    S = plan.side
    ph = phi.reshape(S, S)
    right = np.roll(ph, -1, axis=0)
    up = np.roll(ph, -1, axis=1)
    diag = np.roll(right, -1, axis=1)
    g_lower = np.stack([(right - ph) / s, (up - ph) / s], axis=-1).reshape(K, 2)
    g_upper = np.stack([(diag - up) / s, (diag - right) / s], axis=-1).reshape(K, 2)
    out = np.empty((K, ne, 2))
    half = ne // 2
    out[:, :half, :] = g_lower[:, None, :]
    out[:, half:, :] = g_upper[:, None, :]
    return out


def recovery_sequence(plan: UnfoldPlan, phi: np.ndarray, margin: float = 0.125,
                      weight: np.ndarray | None = None) -> np.ndarray:
    """Oscillating field eps * (adjoint-shifted phi) * cutoff [* weight].

    ``phi`` is a mean-adjustable torus potential sampled on the offset
    lattice; its adjoint shift makes the nodal values
    phi(offset_k + x_j/eps).  The L^theta norm is <= eps * c(phi, cutoff),
    and the unfolded gradient reproduces ``torus_gradient_field`` exactly on
    elements where cutoff * weight is constant 1.
    """
    _check_torus_alignment(plan, phi)
    grid, ens = plan.grid, plan.ensemble
    K = ens.size
    cols = np.arange(grid.n_nodes)
    steps = plan.node_steps
    if grid.d == 1:
        idx = (np.arange(K)[:, None] + steps[None, :, 0]) % K
    else:
        S = plan.side
        k1, k2 = np.arange(K) // S, np.arange(K) % S
        idx = ((k1[:, None] + steps[None, :, 0]) % S) * S \
            + (k2[:, None] + steps[None, :, 1]) % S
    osc = phi[idx]
    eta = boundary_cutoff(grid, margin)
    field = plan.epsilon * osc * eta[None, :]
    if weight is not None:
        field = field * np.asarray(weight)[None, :]
    return field


def recovery_defects(plan: UnfoldPlan, phi: np.ndarray, margin: float,
                     theta: float, p: float) -> dict:
    """Size and gradient-mismatch diagnostics of the recovery field."""
    grid, ens = plan.grid, plan.ensemble
    g = recovery_sequence(plan, phi, margin=margin)
    chi = torus_gradient_field(plan, phi)
    tg = unfold_gradient(plan, gradient(grid, g))
    return {
        "epsilon": plan.epsilon,
        "theta_norm": norm_Lp(grid, ens.weights, g, theta),
        "theta_norm_over_eps": norm_Lp(grid, ens.weights, g, theta) / plan.epsilon,
        "grad_defect": grad_norm_Lp(grid, ens.weights, tg - chi, p),
    }
