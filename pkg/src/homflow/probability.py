"""Finite, exactly integrable probability spaces with a shift action.

Two models are provided:

* ``torus``: the d-torus [0, L)^d with normalized Lebesgue measure and
  translation action.  Material parameters are piecewise constant on the
  unit cells of a fixed pattern.  Expectations are computed exactly on a
  uniform offset lattice, and lattice-aligned shifts act as permutations
  of that lattice, which turns stationarity identities into
  machine-precision statements.
* ``checkerboard``: iid cell values on an L^d block, stationarized by an
  independent uniform (continuum) offset.  Expectations are Monte Carlo
  over R realizations; lattice-exact identities do not apply.

Both models are ergodic; sample-independent fields are the only invariant
fields represented here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

TORUS = "torus"
CHECKERBOARD = "checkerboard"


@dataclass(frozen=True)
class MaterialParams:
    """Pointwise material data: dissipation weight r, gradient coefficient a,
    reaction coefficient b.  ``a`` may be a positive scalar or a d x d SPD
    matrix (matrix values only make sense for the quadratic gradient
    integrand)."""

    r: float
    a: float | np.ndarray
    b: float

    def a_scalar(self) -> float:
        if np.ndim(self.a) == 0:
            return float(self.a)
        raise TypeError("matrix-valued coefficient, scalar requested")


@dataclass(frozen=True)
class ShiftSpace:
    """A finite ergodic dynamical system with shift action.

    For the torus model ``pattern`` lists one MaterialParams per unit cell in
    row-major order over {0..L-1}^d.  For the checkerboard model ``values``
    and ``probabilities`` describe the finite cell-value distribution and
    ``realizations`` the Monte Carlo sample count.
    """

    model: str
    d: int
    L: int
    pattern: tuple[MaterialParams, ...] = ()
    values: tuple[MaterialParams, ...] = ()
    probabilities: tuple[float, ...] = ()
    realizations: int = 0

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if self.model == TORUS:
            if len(self.pattern) != self.L**self.d:
                raise ValueError(
                    f"pattern needs {self.L ** self.d} entries, got {len(self.pattern)}"
                )
        elif self.model == CHECKERBOARD:
            probs = np.asarray(self.probabilities, dtype=float)
            if len(self.values) != len(probs):
                raise ValueError("values and probabilities length mismatch")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
                raise ValueError("probabilities must be nonnegative and sum to 1")
            if self.realizations < 1:
                raise ValueError("checkerboard needs realizations >= 1")
        else:
            raise ValueError(f"unknown model {self.model!r}")

    # --- cell-value arrays -------------------------------------------------

    def pattern_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(r, a, b) arrays over the L^d pattern cells (torus model)."""
        if self.model != TORUS:
            raise ValueError("pattern_arrays is a torus-model accessor")
        r = np.array([mp.r for mp in self.pattern])
        b = np.array([mp.b for mp in self.pattern])
        if any(np.ndim(mp.a) > 0 for mp in self.pattern):
            a = np.stack([np.asarray(mp.a, dtype=float) for mp in self.pattern])
        else:
            a = np.array([float(mp.a) for mp in self.pattern])
        return r, a, b

    def to_config(self) -> dict:
        """Structured description; together with a seed it pins the ensemble."""
        if self.model == TORUS:
            return {
                "model": self.model,
                "d": self.d,
                "L": self.L,
                "pattern": [_mp_dict(mp) for mp in self.pattern],
            }
        return {
            "model": self.model,
            "d": self.d,
            "L": self.L,
            "values": [_mp_dict(mp) for mp in self.values],
            "probabilities": list(self.probabilities),
            "realizations": self.realizations,
        }


def _mp_dict(mp: MaterialParams) -> dict:
    a = mp.a if np.ndim(mp.a) == 0 else np.asarray(mp.a).tolist()
    return {"r": mp.r, "a": a, "b": mp.b}


def space_from_config(cfg: dict) -> ShiftSpace:
    def mp(d):
        a = d["a"]
        if isinstance(a, list):
            a = np.asarray(a, dtype=float)
        return MaterialParams(r=float(d["r"]), a=a, b=float(d["b"]))

    if cfg["model"] == TORUS:
        return ShiftSpace(
            model=TORUS,
            d=int(cfg["d"]),
            L=int(cfg["L"]),
            pattern=tuple(mp(x) for x in cfg["pattern"]),
        )
    return ShiftSpace(
        model=CHECKERBOARD,
        d=int(cfg["d"]),
        L=int(cfg["L"]),
        values=tuple(mp(x) for x in cfg["values"]),
        probabilities=tuple(float(p) for p in cfg["probabilities"]),
        realizations=int(cfg["realizations"]),
    )


@dataclass(frozen=True)
class OmegaPoint:
    """One sample: a continuum offset in [0, L)^d plus, for the checkerboard,
    its sampled per-cell coefficient arrays (r, a, b), each of shape (L^d,)."""

    offset: np.ndarray
    cells: tuple | None = None


@dataclass(frozen=True)
class OmegaEnsemble:
    """Finite stand-in for the probability measure: points plus weights.

    For the torus model the offsets form the full uniform lattice
    (1/m) Z^d intersected with [0, L)^d (``lattice_m = m``); the weighted sum
    is then the exact integral for observables piecewise constant on cells
    whose breakpoints lie on the lattice.  For the checkerboard model the
    offsets are continuum-uniform and ``lattice_m`` is None.
    """

    space: ShiftSpace
    offsets: np.ndarray  # (K, d)
    weights: np.ndarray  # (K,)
    lattice_m: int | None = None
    cell_r: np.ndarray | None = None  # (K, L^d) checkerboard coefficient arrays
    cell_a: np.ndarray | None = None
    cell_b: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("ensemble weights must sum to 1")

    @property
    def size(self) -> int:
        return self.offsets.shape[0]

    def point(self, k: int) -> OmegaPoint:
        cells = None
        if self.space.model == CHECKERBOARD:
            cells = (self.cell_r[k], self.cell_a[k], self.cell_b[k])
        return OmegaPoint(offset=self.offsets[k].copy(), cells=cells)


def build_ensemble(space: ShiftSpace, m: int | None = None, seed: int = 0) -> OmegaEnsemble:
    """Construct the discrete ensemble for a shift space.

    Torus model: ``m`` is the offset-lattice refinement (lattice spacing 1/m),
    giving (L*m)^d equally weighted offsets.  Checkerboard model: ``m`` is
    ignored; R realizations of iid cell values with independent uniform
    offsets are drawn from ``seed``.  Identical (space, m, seed) reproduce
    the ensemble bit for bit.
    """
    d, L = space.d, space.L
    if space.model == TORUS:
        if m is None or m < 1:
            raise ValueError("torus ensemble needs a lattice refinement m >= 1")
        side = np.arange(L * m) / m
        if d == 1:
            offsets = side[:, None]
        else:
            g = np.meshgrid(side, side, indexing="ij")
            offsets = np.stack([c.ravel() for c in g], axis=1)
        K = offsets.shape[0]
        return OmegaEnsemble(
            space=space,
            offsets=offsets,
            weights=np.full(K, 1.0 / K),
            lattice_m=m,
            seed=seed,
        )

    rng = np.random.default_rng(np.random.PCG64(seed))
    R = space.realizations
    ncells = L**d
    probs = np.asarray(space.probabilities)
    idx = rng.choice(len(space.values), size=(R, ncells), p=probs)
    offsets = rng.uniform(0.0, L, size=(R, d))
    r_vals = np.array([mp.r for mp in space.values])
    a_vals = np.array([mp.a_scalar() for mp in space.values])
    b_vals = np.array([mp.b for mp in space.values])
    return OmegaEnsemble(
        space=space,
        offsets=offsets,
        weights=np.full(R, 1.0 / R),
        lattice_m=None,
        cell_r=r_vals[idx],
        cell_a=a_vals[idx],
        cell_b=b_vals[idx],
        seed=seed,
    )


# --- shift action -----------------------------------------------------------


def shift(space: ShiftSpace, omega: OmegaPoint, x: Sequence[float] | float) -> OmegaPoint:
    """Translate the sample by x: offset -> (offset + x) mod L.

    Cell values are untouched; the shift acts on the continuum coordinate and
    lookups happen at evaluation time.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return OmegaPoint(offset=np.mod(omega.offset + x, space.L), cells=omega.cells)


def _cell_index(space: ShiftSpace, points: np.ndarray) -> np.ndarray:
    """Flat pattern-cell index of the cells containing ``points`` (mod L).

    The snap before the floor keeps lattice points that sit exactly on cell
    boundaries (irrational in binary, e.g. multiples of 1/6) from flooring
    into the lower cell through representation dust; it moves continuum
    points only on a measure-1e-9 sliver.
    """
    L = space.L
    cells = np.mod(np.floor(points + 1e-9).astype(int), L)
    if space.d == 1:
        return cells[..., 0]
    return cells[..., 0] * L + cells[..., 1]


def evaluate(space: ShiftSpace, omega: OmegaPoint, point: Sequence[float] | float
             ) -> MaterialParams:
    """Material parameters of the cell containing (offset + point) mod L;
    piecewise constant in the point."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    idx = _cell_index(space, omega.offset + point)
    if space.model == TORUS:
        return space.pattern[int(idx)]
    if omega.cells is None:
        raise ValueError("checkerboard evaluation needs the sample's cell arrays")
    r, a, b = omega.cells
    return MaterialParams(r=float(r[idx]), a=float(a[idx]), b=float(b[idx]))


def coefficient_tables(ensemble: OmegaEnsemble) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample cell-value arrays (K, L^d) for r, a, b."""
    space = ensemble.space
    if space.model == TORUS:
        r, a, b = space.pattern_arrays()
        K = ensemble.size
        shape = (K,) + r.shape
        return (
            np.broadcast_to(r, shape),
            np.broadcast_to(a, (K,) + np.shape(a)),
            np.broadcast_to(b, shape),
        )
    return ensemble.cell_r, ensemble.cell_a, ensemble.cell_b


def sample_coefficients(ensemble: OmegaEnsemble, points: np.ndarray
                        ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized lookup of (r, a, b) at ``offset_k + points`` for all samples.

    ``points`` has shape (P, d); the returned arrays have shape (K, P)
    (a gains trailing (d, d) axes for matrix-valued patterns).
    """
    space = ensemble.space
    pts = ensemble.offsets[:, None, :] + points[None, :, :]
    idx = _cell_index(space, pts)  # (K, P)
    r, a, b = coefficient_tables(ensemble)
    take = np.take_along_axis
    r_out = take(r, idx, axis=1)
    b_out = take(b, idx, axis=1)
    if a.ndim > 2:  # matrix-valued a, shape (K, L^d, d, d)
        a_out = a[np.arange(len(a))[:, None], idx]
    else:
        a_out = take(a, idx, axis=1)
    return r_out, a_out, b_out


# --- integration ------------------------------------------------------------


def expectation(ensemble: OmegaEnsemble, observable: Callable[[OmegaPoint], float]) -> float:
    """Weighted sum of the observable over the ensemble."""
    vals = np.array([observable(ensemble.point(k)) for k in range(ensemble.size)])
    return float(ensemble.weights @ vals)


def expectation_values(ensemble: OmegaEnsemble, values: np.ndarray) -> np.ndarray:
    """Weighted sample average along axis 0 of per-sample values."""
    w = ensemble.weights
    return np.tensordot(w, np.asarray(values), axes=(0, 0))


def invariant_projection(ensemble: OmegaEnsemble, field: np.ndarray) -> np.ndarray:
    """Project an ensemble field (K, ...) onto its sample average.

    For the ergodic models implemented here the invariant fields are exactly
    the sample-independent ones, so the projection is the per-node weighted
    mean.  Idempotent and contractive in the ensemble L2 norm.
    """
    field = np.asarray(field)
    if field.shape[0] != ensemble.size:
        raise ValueError("field sample axis does not match ensemble")
    return expectation_values(ensemble, field)
