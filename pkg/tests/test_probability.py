import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homflow.probability import (
    MaterialParams,
    OmegaPoint,
    ShiftSpace,
    build_ensemble,
    evaluate,
    expectation,
    invariant_projection,
    sample_coefficients,
    shift,
    space_from_config,
)

from conftest import two_phase_space


# --- shift action -------------------------------------------------------------


def test_shift_modular_addition(space_1d):
    om = OmegaPoint(offset=np.array([0.5]))
    space4 = ShiftSpace(model="torus", d=1, L=4,
                        pattern=tuple(MaterialParams(1, 1, 1) for _ in range(4)))
    assert shift(space4, om, 1.25).offset[0] == pytest.approx(1.75)


def test_shift_identity(space_1d):
    om = OmegaPoint(offset=np.array([0.7]))
    assert shift(space_1d, om, 0.0).offset[0] == 0.7


@settings(max_examples=50, deadline=None)
@given(
    x=st.integers(min_value=-20, max_value=20),
    y=st.integers(min_value=-20, max_value=20),
    start=st.integers(min_value=0, max_value=31),
)
def test_shift_group_law_exact_on_lattice(x, y, start):
    # lattice displacements compose exactly after mod-L reduction
    space = two_phase_space(L=4)
    om = OmegaPoint(offset=np.array([start / 8]))
    lhs = shift(space, shift(space, om, x / 8), y / 8)
    rhs = shift(space, om, (x + y) / 8)
    assert lhs.offset[0] == rhs.offset[0]


def test_shift_group_law_example():
    space = two_phase_space(L=4)
    om = OmegaPoint(offset=np.array([0.25]))
    two_step = shift(space, shift(space, om, 3.0), 2.0)
    assert two_step.offset[0] == pytest.approx((0.25 + 1.0) % 4)


# --- evaluation -----------------------------------------------------------------


def test_evaluate_cell_lookup(space_1d):
    om = OmegaPoint(offset=np.array([0.0]))
    assert evaluate(space_1d, om, 0.3).a == 1
    assert evaluate(space_1d, om, 1.3).a == 4
    om1 = OmegaPoint(offset=np.array([1.0]))
    assert evaluate(space_1d, om1, 0.3).a == 4


# --- expectation ------------------------------------------------------------------


def test_expectation_exact_two_cell_mean(space_1d, ensemble_1d):
    # equal cells with a in {1, 4}: exact integral is 2.5
    val = expectation(ensemble_1d, lambda om: evaluate(space_1d, om, 0.0).a)
    assert val == pytest.approx(2.5, abs=1e-12)


def test_expectation_constant(ensemble_1d):
    assert expectation(ensemble_1d, lambda om: 7.0) == pytest.approx(7.0, abs=1e-14)


def test_expectation_shift_invariance(space_1d, ensemble_1d):
    # lattice-aligned shifts permute the offset lattice
    base = expectation(ensemble_1d, lambda om: evaluate(space_1d, om, 0.0).a)
    for x in (1 / 8, 3 / 8, 1.0, 1.5):
        shifted = expectation(
            ensemble_1d,
            lambda om: evaluate(space_1d, shift(space_1d, om, x), 0.0).a,
        )
        assert abs(shifted - base) <= 1e-12


def test_sample_coefficients_match_pointwise(space_1d, ensemble_1d):
    pts = np.array([[0.0], [0.3], [1.3], [2.6]])
    r, a, b = sample_coefficients(ensemble_1d, pts)
    for k in (0, 3, 7):
        om = OmegaPoint(offset=ensemble_1d.offsets[k])
        for j, p in enumerate(pts[:, 0]):
            assert a[k, j] == evaluate(space_1d, om, p).a


# --- invariant projection -----------------------------------------------------------


def test_invariant_projection_fixes_deterministic(ensemble_1d):
    u = np.linspace(0, 1, 5)
    field = np.tile(u, (ensemble_1d.size, 1))
    proj = invariant_projection(ensemble_1d, field)
    np.testing.assert_allclose(proj, u, rtol=0, atol=0)


def test_invariant_projection_mean():
    space = two_phase_space()
    ens = build_ensemble(space, m=1, seed=0)
    field = np.array([[1.0], [3.0]])
    assert invariant_projection(ens, field)[0] == pytest.approx(2.0)


def test_invariant_projection_idempotent_contractive(ensemble_1d, rng):
    field = rng.standard_normal((ensemble_1d.size, 6))
    proj = invariant_projection(ensemble_1d, field)
    proj2 = invariant_projection(ensemble_1d, np.tile(proj, (ensemble_1d.size, 1)))
    np.testing.assert_allclose(proj2, proj, atol=0)
    w = ensemble_1d.weights
    assert w @ (np.tile(proj, (ensemble_1d.size, 1)) ** 2).sum(axis=1) <= \
        w @ (field**2).sum(axis=1) + 1e-14


# --- checkerboard model ----------------------------------------------------------


def checkerboard(R, seed=0, d=1, L=4):
    space = ShiftSpace(
        model="checkerboard", d=d, L=L,
        values=(MaterialParams(1.0, 1.0, 1.0), MaterialParams(1.0, 4.0, 3.0)),
        probabilities=(0.5, 0.5),
        realizations=R,
    )
    return space, build_ensemble(space, seed=seed)


def test_checkerboard_probability_validation():
    with pytest.raises(ValueError):
        ShiftSpace(model="checkerboard", d=1, L=2,
                   values=(MaterialParams(1, 1, 1),),
                   probabilities=(0.7,), realizations=4)


def test_checkerboard_mean_converges_at_root_R():
    # empirical mean of a cell value vs distribution mean, 4 sigma gate
    mu, sigma = 2.5, 1.5
    for R in (64, 1024):
        _, ens = checkerboard(R, seed=11)
        m = ens.cell_a[:, 0].mean()
        assert abs(m - mu) <= 4 * sigma / np.sqrt(R)


def test_checkerboard_reproducible():
    _, e1 = checkerboard(32, seed=5)
    _, e2 = checkerboard(32, seed=5)
    np.testing.assert_array_equal(e1.offsets, e2.offsets)
    np.testing.assert_array_equal(e1.cell_a, e2.cell_a)
    _, e3 = checkerboard(32, seed=6)
    assert not np.array_equal(e1.offsets, e3.offsets)


# --- serialization -------------------------------------------------------------------


def test_space_config_roundtrip(space_1d):
    cfg = space_1d.to_config()
    back = space_from_config(cfg)
    assert back == space_1d


def test_torus_lattice_covers_uniformly(space_1d):
    ens = build_ensemble(space_1d, m=4, seed=0)
    assert ens.size == 8
    np.testing.assert_allclose(np.diff(ens.offsets[:, 0]), 0.25)
    assert ens.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_checkerboard_pointwise_evaluate():
    space, ens = checkerboard(4, seed=9, L=4)
    om = ens.point(1)
    for y in (0.0, 0.7, 2.3):
        mp = evaluate(space, om, y)
        idx = int(np.floor(om.offset[0] + y + 1e-9)) % 4
        assert mp.a == ens.cell_a[1, idx]
