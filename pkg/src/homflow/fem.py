"""Uniform-grid P1 finite elements on the unit interval/square, plus the
periodic torus variant used by cell problems.

Quadrature convention, shared by every integral in the package so that the
stationarity identities close exactly:

* zeroth-order integrands (field norms, reaction and dissipation terms) use
  vertex quadrature with lumped weights ``vertex_w``;
* gradient integrands use one-point (barycenter) quadrature, which is exact
  for the piecewise-constant gradients of P1 fields.

Fields are plain arrays: a nodal ensemble field has shape (K, n_nodes) with
the sample axis first, a gradient field has shape (K, n_elems, d).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    d: int
    n: int                  # elements (cells) per side
    h: float
    length: float           # domain side length (1 for Q, L for the torus)
    periodic: bool
    nodes: np.ndarray       # (n_nodes, d)
    conn: np.ndarray        # (n_elems, nv) node indices
    gradop: np.ndarray      # (n_elems, nv, d): grad u|_e = sum_v gradop[e,v]*u[conn[e,v]]
    vertex_w: np.ndarray    # (n_nodes,) lumped quadrature weights, sums to |domain|
    elem_vol: float
    barycenters: np.ndarray  # (n_elems, d)
    corner_cells: np.ndarray  # (n_elems, d) integer lattice index of the element's cell corner
    boundary: np.ndarray    # (n_nodes,) bool mask

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elems(self) -> int:
        return self.conn.shape[0]

    def node_index(self, *ij: int) -> int:
        if self.d == 1:
            return ij[0]
        stride = self.n if self.periodic else self.n + 1
        return ij[0] * stride + ij[1]


def _build(d: int, n: int, length: float, periodic: bool) -> Grid:
    h = length / n
    side = n if periodic else n + 1
    axis = np.arange(side) * h
    if d == 1:
        nodes = axis[:, None]
        e = np.arange(n)
        right = (e + 1) % side if periodic else e + 1
        conn = np.stack([e, right], axis=1)
        gradop = np.tile(np.array([[-1.0], [1.0]]) / h, (n, 1, 1))
        bary = (e[:, None] + 0.5) * h
        corner = e[:, None].copy()
        elem_vol = h
        vw = np.full(side, h)
        if not periodic:
            vw[0] = vw[-1] = h / 2
    else:
        ii, jj = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        nodes = np.stack([ii.ravel() * h, jj.ravel() * h], axis=1)
        ci, cj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        ci, cj = ci.ravel(), cj.ravel()
        ip, jp = (ci + 1) % side if periodic else ci + 1, (cj + 1) % side if periodic else cj + 1

        def nid(a, b):
            return a * side + b

        lower = np.stack([nid(ci, cj), nid(ip, cj), nid(ci, jp)], axis=1)
        upper = np.stack([nid(ip, cj), nid(ip, jp), nid(ci, jp)], axis=1)
        conn = np.concatenate([lower, upper], axis=0)
        g_lower = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]) / h
        g_upper = np.array([[0.0, -1.0], [1.0, 1.0], [-1.0, 0.0]]) / h
        gradop = np.concatenate(
            [np.tile(g_lower, (n * n, 1, 1)), np.tile(g_upper, (n * n, 1, 1))], axis=0
        )
        b_lower = np.stack([(ci + 1 / 3) * h, (cj + 1 / 3) * h], axis=1)
        b_upper = np.stack([(ci + 2 / 3) * h, (cj + 2 / 3) * h], axis=1)
        bary = np.concatenate([b_lower, b_upper], axis=0)
        corner = np.concatenate(
            [np.stack([ci, cj], axis=1), np.stack([ci, cj], axis=1)], axis=0
        )
        elem_vol = h * h / 2
        vw = np.zeros(side * side)
        np.add.at(vw, conn.ravel(), elem_vol / 3)

    if periodic:
        boundary = np.zeros(nodes.shape[0], dtype=bool)
    else:
        on_edge = np.isclose(nodes, 0.0) | np.isclose(nodes, length)
        boundary = on_edge.any(axis=1)
    return Grid(
        d=d, n=n, h=h, length=length, periodic=periodic,
        nodes=nodes, conn=conn, gradop=gradop, vertex_w=vw,
        elem_vol=elem_vol, barycenters=bary, corner_cells=corner,
        boundary=boundary,
    )


def make_grid(d: int, n: int) -> Grid:
    """P1 grid on (0,1)^d with n cells per side (Dirichlet mask on the boundary)."""
    return _build(d, n, 1.0, periodic=False)


def make_torus_grid(d: int, L: int, n_c: int) -> Grid:
    """Periodic P1 grid on the torus [0,L)^d with n_c sub-cells per unit cell."""
    return _build(d, L * n_c, float(L), periodic=True)


# --- field operations --------------------------------------------------------


def gradient(grid: Grid, fields: np.ndarray) -> np.ndarray:
    """Exact P1 element gradients.  fields (K, n_nodes) -> (K, n_elems, d)."""
    fields = np.asarray(fields)
    squeeze = fields.ndim == 1
    if squeeze:
        fields = fields[None, :]
    vals = fields[:, grid.conn]                    # (K, ne, nv)
    out = np.einsum("kev,evd->ked", vals, grid.gradop)
    return out[0] if squeeze else out


def midpoint_values(grid: Grid, fields: np.ndarray) -> np.ndarray:
    """P1 values at element barycenters: (K, n_nodes) -> (K, n_elems)."""
    fields = np.asarray(fields)
    squeeze = fields.ndim == 1
    if squeeze:
        fields = fields[None, :]
    out = fields[:, grid.conn].mean(axis=2)
    return out[0] if squeeze else out


def integrate_nodal(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Vertex-quadrature integral over the domain of nodal values (..., n_nodes)."""
    return np.asarray(values) @ grid.vertex_w


def integrate_elem(grid: Grid, values: np.ndarray) -> np.ndarray:
    """One-point-quadrature integral of elementwise values (..., n_elems)."""
    return grid.elem_vol * np.asarray(values).sum(axis=-1)


def _ensemble_mean(weights: np.ndarray | None, per_sample: np.ndarray) -> float:
    per_sample = np.atleast_1d(per_sample)
    if weights is None:
        if per_sample.shape[0] != 1:
            raise ValueError("ensemble field needs weights")
        return float(per_sample[0])
    return float(weights @ per_sample)


def norm_Lp(grid: Grid, weights: np.ndarray | None, field: np.ndarray, p: float) -> float:
    """L^p(Omega x Q) norm of a nodal field (K, n_nodes) under vertex quadrature."""
    if p < 1:
        raise ValueError("p must be >= 1")
    field = np.atleast_2d(np.asarray(field, dtype=float))
    per = integrate_nodal(grid, np.abs(field) ** p)
    return _ensemble_mean(weights, per) ** (1.0 / p)


def grad_norm_Lp(grid: Grid, weights: np.ndarray | None, grads: np.ndarray, p: float) -> float:
    """L^p norm of an elementwise gradient field (K, n_elems, d)."""
    grads = np.asarray(grads, dtype=float)
    if grads.ndim == 2:
        grads = grads[None]
    mag = np.sqrt((grads**2).sum(axis=-1))
    per = integrate_elem(grid, mag**p)
    return _ensemble_mean(weights, per) ** (1.0 / p)


def inner_r(grid: Grid, weights: np.ndarray | None, r_nodes: np.ndarray,
            u: np.ndarray, v: np.ndarray) -> float:
    """Weighted inner product <r u, v> with the dissipation weight collocated
    at nodes; symmetric and positive definite for admissible r."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    r = np.atleast_2d(np.asarray(r_nodes, dtype=float))
    per = integrate_nodal(grid, r * u * v)
    return _ensemble_mean(weights, per)


def subsample_map(fine: Grid, coarse: Grid) -> np.ndarray:
    """Node indices picking the coarse grid's nodes out of an aligned finer grid."""
    if fine.d != coarse.d or fine.n % coarse.n != 0:
        raise ValueError("grids are not nested")
    s = fine.n // coarse.n
    if fine.d == 1:
        return np.arange(coarse.n + 1) * s
    side_f, side_c = fine.n + 1, coarse.n + 1
    ii, jj = np.meshgrid(np.arange(side_c), np.arange(side_c), indexing="ij")
    return (ii * s) * side_f + jj * s


# --- export -------------------------------------------------------------------

_MAGIC = b"HFLD"
_VERSION = 1


def fields_to_csv(path, grid: Grid, fields: np.ndarray, float_fmt: str = "%.17g") -> None:
    """Node coordinates followed by one column per sample."""
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    data = np.concatenate([grid.nodes, fields.T], axis=1)
    cols = [f"x{i}" for i in range(grid.d)] + [f"sample{k}" for k in range(fields.shape[0])]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(float_fmt % v for v in row) + "\n")


def dump_binary(path, array: np.ndarray) -> None:
    """Compact dump: magic, version, rank, extents (uint32 LE), then
    row-major float64 little-endian payload."""
    array = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def load_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a field dump")
        version, rank = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported dump version {version}")
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(shape)
