"""Dissipation weight r, gradient integrand V and reaction integrand f,
their derivatives, growth/convexity validation and scalar convex conjugates.

Variants
--------
V: ``quadratic``  V(a, F) = a |F|^2 / 2   (or A F . F / 2 for matrix a)
   ``p_power``    V(a, F) = a |F|^p / p   (scalar a only)
f: ``double_well`` f(b, alpha) = b (alpha^4 - alpha^2)
   ``quadratic``   f(q, alpha) = q alpha^2 / 2

The conventional 1/p (resp. 1/2) prefactor makes the quadratic case reduce
to the standard heat flow; the growth constant c absorbs the normalization.

The semiconvexity modulus of the reaction integrand is computed analytically:
for the double well, f''(alpha) = b (12 alpha^2 - 2) >= -2b, so
lam = -2 max b; for the quadratic reaction lam = min q.  The energy-level
modulus is Lam = lam * c when lam < 0 and lam / c otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import BoundViolation, NonConvergence
from .probability import OmegaEnsemble, ShiftSpace, coefficient_tables

V_QUADRATIC = "quadratic"
V_PPOWER = "p_power"
F_DOUBLE_WELL = "double_well"
F_QUADRATIC = "quadratic"


@dataclass(frozen=True)
class IntegrandSpec:
    v_kind: str
    f_kind: str
    p: float
    theta: float
    c: float
    lam: float
    Lam: float
    delta_reg: float = 1e-8  # Hessian regularization floor for p < 2

    def __post_init__(self):
        if self.v_kind not in (V_QUADRATIC, V_PPOWER):
            raise ValueError(f"unknown V variant {self.v_kind!r}")
        if self.f_kind not in (F_DOUBLE_WELL, F_QUADRATIC):
            raise ValueError(f"unknown f variant {self.f_kind!r}")
        if self.f_kind == F_DOUBLE_WELL and self.theta != 4:
            raise ValueError("double-well reaction has theta = 4")
        if self.f_kind == F_QUADRATIC and self.theta != 2:
            raise ValueError("quadratic reaction has theta = 2")
        if not (1.0 < self.p < np.inf):
            raise ValueError("p must lie in (1, inf)")
        if self.c <= 0:
            raise ValueError("growth constant c must be positive")

    def to_config(self) -> dict:
        return {"v": self.v_kind, "f": self.f_kind, "p": self.p, "c": self.c}


def lambda_modulus(f_kind: str, b_values: np.ndarray) -> float:
    """Analytic semiconvexity modulus of alpha -> f(b, alpha) over the given
    coefficient values."""
    b_values = np.asarray(b_values, dtype=float)
    if f_kind == F_DOUBLE_WELL:
        return float(-2.0 * b_values.max())
    return float(b_values.min())


def energy_modulus(lam: float, c: float) -> float:
    """Convexity modulus of the energy relative to the dissipation."""
    return lam * c if lam < 0 else lam / c


def make_spec(v_kind: str, f_kind: str, p: float, c: float, space: ShiftSpace,
              delta_reg: float = 1e-8) -> IntegrandSpec:
    """Build a spec with theta, lam and Lam derived from the variants and the
    coefficient ranges of ``space``."""
    if space.model == "torus":
        b_values = np.array([mp.b for mp in space.pattern])
    else:
        b_values = np.array([mp.b for mp in space.values])
    lam = lambda_modulus(f_kind, b_values)
    theta = 4.0 if f_kind == F_DOUBLE_WELL else 2.0
    return IntegrandSpec(
        v_kind=v_kind, f_kind=f_kind, p=float(p), theta=theta, c=float(c),
        lam=lam, Lam=energy_modulus(lam, float(c)), delta_reg=delta_reg,
    )


# --- pointwise evaluation ------------------------------------------------------


def _mag(F: np.ndarray) -> np.ndarray:
    return np.sqrt((np.asarray(F, dtype=float) ** 2).sum(axis=-1))


def eval_V(spec: IntegrandSpec, a, F: np.ndarray) -> np.ndarray:
    """V(a, F); F has a trailing axis of length d, a broadcasts over the rest
    (matrix-valued a carries trailing (d, d) axes)."""
    F = np.asarray(F, dtype=float)
    if np.ndim(a) >= 2 and np.shape(a)[-1] == F.shape[-1] and np.shape(a)[-2] == F.shape[-1]:
        if spec.v_kind != V_QUADRATIC:
            raise ValueError("matrix coefficients only supported for quadratic V")
        return 0.5 * np.einsum("...i,...ij,...j->...", F, np.asarray(a, dtype=float), F)
    a = np.asarray(a, dtype=float)
    if spec.v_kind == V_QUADRATIC:
        return 0.5 * a * (F**2).sum(axis=-1)
    return a / spec.p * _mag(F) ** spec.p


def DV(spec: IntegrandSpec, a, F: np.ndarray) -> np.ndarray:
    """Flux dV/dF, unregularized (DV(0) = 0 for p > 1)."""
    F = np.asarray(F, dtype=float)
    if np.ndim(a) >= 2 and np.shape(a)[-1] == F.shape[-1] and np.shape(a)[-2] == F.shape[-1]:
        return np.einsum("...ij,...j->...i", np.asarray(a, dtype=float), F)
    a = np.asarray(a, dtype=float)
    if spec.v_kind == V_QUADRATIC:
        return a[..., None] * F
    m = _mag(F)
    safe = np.where(m > 0, m, 1.0)
    scale = np.where(m > 0, safe ** (spec.p - 2.0), 0.0)
    return (a * scale)[..., None] * F


def D2V(spec: IntegrandSpec, a, F: np.ndarray) -> np.ndarray:
    """Hessian d2V/dF2 with the p < 2 singularity smoothed through
    (|F|^2 + delta_reg^2)^((p-2)/2)."""
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    eye = np.eye(d)
    if np.ndim(a) >= 2 and np.shape(a)[-1] == d and np.shape(a)[-2] == d:
        return np.broadcast_to(np.asarray(a, dtype=float), F.shape + (d,)).copy()
    a = np.asarray(a, dtype=float)
    if spec.v_kind == V_QUADRATIC:
        return a[..., None, None] * eye
    p = spec.p
    m2 = (F**2).sum(axis=-1)
    if p < 2:
        m2 = m2 + spec.delta_reg**2
    m2 = np.where(m2 > 0, m2, 1.0)
    iso = m2 ** ((p - 2.0) / 2.0)
    outer = F[..., :, None] * F[..., None, :]
    aniso = (p - 2.0) * m2 ** ((p - 4.0) / 2.0)
    H = iso[..., None, None] * eye + aniso[..., None, None] * outer
    return a[..., None, None] * H


def eval_f(spec: IntegrandSpec, b, alpha) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if spec.f_kind == F_DOUBLE_WELL:
        return b * (alpha**4 - alpha**2)
    return 0.5 * b * alpha**2


def Df(spec: IntegrandSpec, b, alpha) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if spec.f_kind == F_DOUBLE_WELL:
        return b * (4 * alpha**3 - 2 * alpha)
    return b * alpha


def D2f(spec: IntegrandSpec, b, alpha) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if spec.f_kind == F_DOUBLE_WELL:
        return b * (12 * alpha**2 - 2)
    return b * np.ones_like(alpha)


def eval_r(params) -> float:
    return float(params.r)


# --- growth validation ----------------------------------------------------------


@dataclass
class GrowthReport:
    c_declared: float
    c_required: float
    c_r: float
    c_V: float
    c_f: float
    lam: float
    Lam: float
    ok: bool
    violations: list

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _smallest_c_bounds(values: np.ndarray, powers: np.ndarray) -> float:
    """Smallest c with (1/c) t - c <= v <= c (t + 1) over samples (t = |.|^p)."""
    t, v = powers, values
    upper = np.max(v / (t + 1.0))
    lower = np.max((-v + np.sqrt(v**2 + 4 * np.maximum(t, 0))) / 2.0)
    return float(max(upper, lower, 0.0))


def validate_growth(spec: IntegrandSpec, ensemble: OmegaEnsemble,
                    F_max: float = 4.0, alpha_max: float = 3.0,
                    n_samples: int = 33, rng_seed: int = 0,
                    raise_on_violation: bool = True) -> GrowthReport:
    """Sample coefficients and arguments on a stratified grid, report the
    smallest constant satisfying the declared bounds, and check convexity of
    V on secant triples.  Raises BoundViolation when the declared c fails."""
    r_tab, a_tab, b_tab = coefficient_tables(ensemble)
    r_vals = np.unique(np.asarray(r_tab, dtype=float))
    b_vals = np.unique(np.asarray(b_tab, dtype=float))
    a_arr = np.asarray(a_tab, dtype=float)
    matrix_a = a_arr.ndim > 2
    if matrix_a:
        a_list = a_arr.reshape(-1, *a_arr.shape[-2:])
    else:
        a_list = np.unique(a_arr)

    violations = []
    c_r = max(float(r_vals.max()), 1.0 / float(r_vals.min()))
    if r_vals.min() < 1.0 / spec.c - 1e-15 or r_vals.max() > spec.c + 1e-15:
        violations.append(f"r leaves [1/c, c] for c = {spec.c}")

    d = ensemble.space.d
    rng = np.random.default_rng(rng_seed)
    mags = np.concatenate([np.linspace(0, F_max, n_samples), [F_max * 2]])
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        ang = np.linspace(0, 2 * np.pi, 9)[:-1]
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    F = mags[:, None, None] * dirs[None, :, :]   # (nm, nd, d)
    c_V = 0.0
    for a in np.atleast_1d(a_list) if not matrix_a else a_list:
        vals = eval_V(spec, a, F)
        c_V = max(c_V, _smallest_c_bounds(vals.ravel(), (_mag(F) ** spec.p).ravel()))
        # midpoint convexity on random secant triples
        F1 = rng.uniform(-F_max, F_max, size=(64, d))
        F2 = rng.uniform(-F_max, F_max, size=(64, d))
        gap = eval_V(spec, a, (F1 + F2) / 2) - 0.5 * (eval_V(spec, a, F1) + eval_V(spec, a, F2))
        if np.any(gap > 1e-12):
            violations.append("convexity of V failed on a sampled secant triple")

    alphas = np.concatenate([np.linspace(-alpha_max, alpha_max, n_samples), [2 * alpha_max]])
    c_f = 0.0
    for b in b_vals:
        fv = eval_f(spec, b, alphas)
        c_f = max(c_f, _smallest_c_bounds(fv, np.abs(alphas) ** spec.theta))

    lam = lambda_modulus(spec.f_kind, b_vals)
    c_required = max(c_r, c_V, c_f)
    if spec.c < c_required - 1e-12:
        violations.append(
            f"declared c = {spec.c} below required {c_required:.6g}"
        )
    report = GrowthReport(
        c_declared=spec.c, c_required=c_required, c_r=c_r, c_V=c_V, c_f=c_f,
        lam=lam, Lam=energy_modulus(lam, spec.c), ok=not violations,
        violations=violations,
    )
    if violations and raise_on_violation:
        raise BoundViolation("; ".join(violations))
    return report


# --- scalar convex conjugate ------------------------------------------------------


def pointwise_conjugate(g, dg, d2g, xi: float, tol: float = 1e-10,
                        max_iter: int = 200) -> float:
    """sup_alpha (xi*alpha - g(alpha)) for a convex superlinear scalar g,
    by safeguarded Newton/bisection on dg(alpha) = xi."""
    lo, hi = -1.0, 1.0
    for _ in range(200):
        if dg(lo) <= xi:
            break
        lo *= 2.0
    else:
        raise NonConvergence("bracketing failed on the left")
    for _ in range(200):
        if dg(hi) >= xi:
            break
        hi *= 2.0
    else:
        raise NonConvergence("bracketing failed on the right")

    alpha = 0.5 * (lo + hi)
    for _ in range(max_iter):
        res = dg(alpha) - xi
        if abs(res) <= tol:
            return float(xi * alpha - g(alpha))
        if res > 0:
            hi = alpha
        else:
            lo = alpha
        curv = d2g(alpha)
        step = alpha - res / curv if curv > 0 else None
        if step is None or not (lo < step < hi):
            step = 0.5 * (lo + hi)
        alpha = step
    raise NonConvergence(f"conjugate solve stalled at residual {res:.3e}")
