import numpy as np
import pytest

from homflow.fem import (
    dump_binary,
    fields_to_csv,
    grad_norm_Lp,
    gradient,
    inner_r,
    integrate_nodal,
    load_binary,
    make_grid,
    make_torus_grid,
    norm_Lp,
    subsample_map,
)


def test_element_areas_sum_to_one():
    for d, n in ((1, 7), (2, 5)):
        g = make_grid(d, n)
        assert g.n_elems * g.elem_vol == pytest.approx(1.0)
        assert g.vertex_w.sum() == pytest.approx(1.0)


def test_gradient_linear_and_constant():
    g = make_grid(1, 16)
    u = g.nodes[:, 0]
    np.testing.assert_allclose(gradient(g, u)[:, 0], 1.0, atol=1e-13)
    np.testing.assert_allclose(gradient(g, np.full(g.n_nodes, 3.0)), 0.0, atol=0)


def test_gradient_linear_2d():
    g = make_grid(2, 6)
    u = 2.0 * g.nodes[:, 0] - 0.5 * g.nodes[:, 1]
    grads = gradient(g, u)
    np.testing.assert_allclose(grads[:, 0], 2.0, atol=1e-12)
    np.testing.assert_allclose(grads[:, 1], -0.5, atol=1e-12)


def test_gradient_sine_taylor_bound():
    # elementwise slopes of sin(pi x) deviate from pi cos(pi x_mid) by
    # at most pi^3 h^2 / 8 (midpoint Taylor remainder)
    n = 64
    g = make_grid(1, n)
    u = np.sin(np.pi * g.nodes[:, 0])
    slopes = gradient(g, u)[:, 0]
    exact = np.pi * np.cos(np.pi * g.barycenters[:, 0])
    assert np.max(np.abs(slopes - exact)) <= np.pi**3 * g.h**2 / 8


def test_norm_constant_field():
    g = make_grid(1, 10)
    assert norm_Lp(g, None, np.full(g.n_nodes, 2.0), 2.0) == pytest.approx(2.0)


def test_norm_sine_quadrature_error():
    for n in (32, 64, 128):
        g = make_grid(1, n)
        u = np.sin(np.pi * g.nodes[:, 0])
        err = abs(norm_Lp(g, None, u, 2.0) - np.sqrt(0.5))
        assert err <= 2.0 * g.h**2


def test_quadrature_error_order_h2():
    exact = (np.e**2 - 1) / 2  # integral of exp(x)^2 on (0,1)
    errs = []
    for n in (16, 32, 64):
        g = make_grid(1, n)
        u = np.exp(g.nodes[:, 0])
        errs.append(abs(norm_Lp(g, None, u, 2.0) ** 2 - exact))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.2)


def test_inner_r_reduces_to_l2():
    g = make_grid(1, 20)
    u = np.sin(2 * np.pi * g.nodes[:, 0])
    r = np.ones(g.n_nodes)
    assert inner_r(g, None, r, u, u) == pytest.approx(
        norm_Lp(g, None, u, 2.0) ** 2, abs=1e-14)


def test_inner_r_symmetric_positive(rng):
    g = make_grid(1, 12)
    r = rng.uniform(0.5, 2.0, g.n_nodes)
    u = rng.standard_normal(g.n_nodes)
    v = rng.standard_normal(g.n_nodes)
    assert inner_r(g, None, r, u, v) == pytest.approx(inner_r(g, None, r, v, u))
    assert inner_r(g, None, r, u, u) > 0


def test_poincare_constant_on_refinements():
    # Dirichlet fields: ||u||_2 <= C_P ||u'||_2 with C_P near 1/pi
    for n in (16, 64, 256):
        g = make_grid(1, n)
        u = np.sin(np.pi * g.nodes[:, 0])  # extremal mode
        ratio = norm_Lp(g, None, u, 2.0) / grad_norm_Lp(g, None, gradient(g, u)[None], 2.0)
        assert ratio <= 1 / np.pi + 0.05


def test_torus_grid_periodic_gradient():
    g = make_torus_grid(1, 2, 4)
    assert g.n_nodes == 8 and g.n_elems == 8
    u = np.sin(np.pi * g.nodes[:, 0])  # period 2 on [0, 2)
    grads = gradient(g, u)
    # wraparound element sees the jump back to u[0]
    assert grads.shape == (8, 1)
    assert not g.boundary.any()


def test_torus_grid_2d_shapes():
    g = make_torus_grid(2, 2, 2)
    assert g.n_nodes == 16 and g.n_elems == 32
    assert g.vertex_w.sum() == pytest.approx(4.0)  # |torus| = L^d


def test_subsample_map_nested():
    fine, coarse = make_grid(1, 32), make_grid(1, 8)
    idx = subsample_map(fine, coarse)
    np.testing.assert_allclose(fine.nodes[idx, 0], coarse.nodes[:, 0])
    fine2, coarse2 = make_grid(2, 8), make_grid(2, 4)
    idx2 = subsample_map(fine2, coarse2)
    np.testing.assert_allclose(fine2.nodes[idx2.ravel()], coarse2.nodes)


def test_export_roundtrip(tmp_path, rng):
    g = make_grid(1, 6)
    fields = rng.standard_normal((3, g.n_nodes))
    dump_binary(tmp_path / "f.bin", fields)
    np.testing.assert_array_equal(load_binary(tmp_path / "f.bin"), fields)
    fields_to_csv(tmp_path / "f.csv", g, fields)
    data = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 1:].T, fields)


def test_integrate_nodal_matches_trapezoid():
    g = make_grid(1, 50)
    u = g.nodes[:, 0] ** 2
    assert integrate_nodal(g, u) == pytest.approx(np.trapezoid(u, g.nodes[:, 0]) if hasattr(np, "trapezoid") else np.trapz(u, g.nodes[:, 0]))
