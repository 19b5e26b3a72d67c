"""Tensor-product B-spline de Rham complex on the periodic unit cube.

The four discrete spaces mirror grad/curl/div:

    V0 (N,N,N) --grad--> V1 (D,N,N | N,D,N | N,N,D)
               --curl--> V2 (N,D,D | D,N,D | D,D,N) --div--> V3 (D,D,D)

with N the degree-p splines and D the degree-(p-1) integral-normalized
splines per direction.  Discrete derivatives are integer incidence
matrices; mass matrices carry the metric of the mapping and are
assembled on a shared Gauss quadrature grid that every bracket
discretization reuses.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import bsplines as bsp
from .geometry import Mapping, MetricSample

# basis kind per component and form degree: True = D-spline in that direction
_V1_KINDS = [(True, False, False), (False, True, False), (False, False, True)]
_V2_KINDS = [(False, True, True), (True, False, True), (True, True, False)]


@dataclass(frozen=True)
class SplineGrid:
    """Periodic tensor-product spline grid: cell counts and degrees."""

    cells: tuple
    degrees: tuple

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        degrees = tuple(int(p) for p in self.degrees)
        if len(cells) != 3 or len(degrees) != 3:
            raise ValueError("cells and degrees must be triples")
        for n, p in zip(cells, degrees):
            if p < 1:
                raise ValueError(f"spline degree must be >= 1, got {p}")
            if n < p + 1 and not (n == 1 and p == 1):
                raise ValueError(f"periodic splines need cells >= degree + 1, got {n} cells at degree {p}")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "degrees", degrees)

    @property
    def h(self):
        return tuple(1.0 / n for n in self.cells)

    @property
    def n_scalar(self):
        n1, n2, n3 = self.cells
        return n1 * n2 * n3

    @property
    def dims(self):
        """(N0, N1, N2, N3) with N1 = N2 = 3 * n1*n2*n3 under periodicity."""
        ns = self.n_scalar
        return (ns, 3 * ns, 3 * ns, ns)

    def component_dims(self, form_degree):
        if form_degree in (1, 2):
            return (self.n_scalar,) * 3
        return (self.n_scalar,)

    def knots(self, direction):
        """Uniform periodic knot vector (one period plus wrap) for reference."""
        n = self.cells[direction]
        p = self.degrees[direction]
        return np.arange(-p, n + p + 1) / n


def build_spaces(grid):
    """Space descriptor: dims, per-direction basis degrees of every component."""
    p = grid.degrees
    comp = {
        0: [tuple(p)],
        1: [tuple(p[d] - 1 if kinds[d] else p[d] for d in range(3)) for kinds in _V1_KINDS],
        2: [tuple(p[d] - 1 if kinds[d] else p[d] for d in range(3)) for kinds in _V2_KINDS],
        3: [tuple(q - 1 for q in p)],
    }
    return {"dims": grid.dims, "cells": grid.cells, "degrees": grid.degrees, "component_degrees": comp}


def _difference_matrix(n):
    """Cyclic difference (G c)_i = c_i - c_{i-1} as an integer matrix."""
    i = np.arange(n)
    rows = np.concatenate([i, i])
    cols = np.concatenate([i, (i - 1) % n])
    data = np.concatenate([np.ones(n, dtype=np.int64), -np.ones(n, dtype=np.int64)])
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


@dataclass(frozen=True)
class IncidenceMatrices:
    """Integer grad/curl/div acting on spline coefficients."""

    Gmat: sp.csr_matrix
    Cmat: sp.csr_matrix
    Dmat: sp.csr_matrix


def incidence(grid):
    n1, n2, n3 = grid.cells
    I1, I2, I3 = (sp.identity(n, dtype=np.int64, format="csr") for n in grid.cells)
    K1 = sp.kron(sp.kron(_difference_matrix(n1), I2), I3, format="csr")
    K2 = sp.kron(sp.kron(I1, _difference_matrix(n2)), I3, format="csr")
    K3 = sp.kron(sp.kron(I1, I2), _difference_matrix(n3), format="csr")
    Z = sp.csr_matrix((grid.n_scalar, grid.n_scalar), dtype=np.int64)
    Gmat = sp.vstack([K1, K2, K3], format="csr")
    Cmat = sp.bmat([[Z, -K3, K2], [K3, Z, -K1], [-K2, K1, Z]], format="csr")
    Dmat = sp.hstack([K1, K2, K3], format="csr")
    return IncidenceMatrices(Gmat=Gmat, Cmat=Cmat, Dmat=Dmat)


def _direction_tables(n, p, pts, kind):
    if kind:  # D-spline
        return bsp.d_spline_table(n, p, pts)
    return bsp.n_spline_table(n, p, pts)


def _tensor_eval_matrix(grid, kinds, axes):
    """Sparse matrix of scalar tensor-basis values on a tensor point grid.

    Rows run over the C-ordered tensor grid of the per-direction point
    arrays in ``axes``; columns over the C-ordered basis index.
    """
    tabs = []
    for d in range(3):
        n, p = grid.cells[d], grid.degrees[d]
        tabs.append(_direction_tables(n, p, np.asarray(axes[d]), kinds[d]))
    (i1, v1), (i2, v2), (i3, v3) = tabs
    U1, U2, U3 = (len(a) for a in axes)
    n1, n2, n3 = grid.cells
    w1, w2, w3 = v1.shape[1], v2.shape[1], v3.shape[1]
    # row index of point (a,b,c), column index of dof (i,j,k)
    vals = np.einsum("aj,bk,cl->abcjkl", v1, v2, v3)
    cols = (
        (i1[:, None, None, :, None, None] * n2 + i2[None, :, None, None, :, None]) * n3
        + i3[None, None, :, None, None, :]
    )
    cols = np.broadcast_to(cols, vals.shape)
    rows = np.arange(U1 * U2 * U3).reshape(U1, U2, U3)
    rows = np.broadcast_to(rows[..., None, None, None], vals.shape)
    E = sp.coo_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())),
        shape=(U1 * U2 * U3, n1 * n2 * n3),
    )
    E.sum_duplicates()
    return E.tocsr()


@dataclass
class QuadratureGrid:
    """Shared Gauss grid: points, weights, cached metric and basis values."""

    axes: tuple
    axis_weights: tuple
    counts: tuple
    eta: np.ndarray
    weights: np.ndarray
    metric: MetricSample
    E0: sp.csr_matrix
    E1: tuple
    E2: tuple
    E3: sp.csr_matrix

    @property
    def npoints(self):
        return self.weights.size


def build_quadrature(grid, mapping, counts=None):
    """Per-cell Gauss-Legendre grid with cached metric and basis values.

    ``counts`` are Gauss points per cell per direction (default degree+1).
    """
    if counts is None:
        counts = tuple(p + 1 for p in grid.degrees)
    counts = tuple(int(g) for g in counts)
    if any(g < 1 for g in counts):
        raise ValueError("quadrature counts must be >= 1")
    axes, axw = [], []
    for d in range(3):
        pts, wts = bsp.gauss_cells(grid.cells[d], counts[d])
        axes.append(pts)
        axw.append(wts)
    eta = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    weights = (axw[0][:, None, None] * axw[1][None, :, None] * axw[2][None, None, :]).ravel()
    metric = mapping.metric(eta)
    E0 = _tensor_eval_matrix(grid, (False, False, False), axes)
    E1 = tuple(_tensor_eval_matrix(grid, k, axes) for k in _V1_KINDS)
    E2 = tuple(_tensor_eval_matrix(grid, k, axes) for k in _V2_KINDS)
    E3 = _tensor_eval_matrix(grid, (True, True, True), axes)
    return QuadratureGrid(
        axes=tuple(axes), axis_weights=tuple(axw), counts=counts, eta=eta,
        weights=weights, metric=metric, E0=E0, E1=E1, E2=E2, E3=E3,
    )


@dataclass(frozen=True)
class MassMatrices:
    M0: sp.csr_matrix
    M1: sp.csr_matrix
    M2: sp.csr_matrix
    M3: sp.csr_matrix

    def of_degree(self, k):
        return (self.M0, self.M1, self.M2, self.M3)[k]


def assemble_mass(grid, mapping, quad):
    """Metric-weighted mass matrices on the shared quadrature grid.

    Weights per the push-forward rules: sqrt(g) on V0, G^{-1} sqrt(g) on V1,
    G / sqrt(g) on V2, 1/sqrt(g) on V3.
    """
    sg = quad.metric.sqrt_g
    if np.any(sg <= 0.0):
        raise ValueError("singular metric: sqrt_g <= 0 at a quadrature point")
    qw = quad.weights

    def weighted(E_row, E_col, w):
        return (E_row.T @ sp.diags(w) @ E_col).tocsr()

    M0 = weighted(quad.E0, quad.E0, qw * sg)
    M3 = weighted(quad.E3, quad.E3, qw / sg)

    def vector_mass(Eblocks, wfun):
        blocks = [[None] * 3 for _ in range(3)]
        for a in range(3):
            for b in range(a, 3):
                blk = weighted(Eblocks[a], Eblocks[b], wfun(a, b))
                blocks[a][b] = blk
                if a != b:
                    blocks[b][a] = blk.T
        return sp.bmat(blocks, format="csr")

    Ginv, G = quad.metric.Ginv, quad.metric.G
    M1 = vector_mass(quad.E1, lambda a, b: qw * sg * Ginv[:, a, b])
    M2 = vector_mass(quad.E2, lambda a, b: qw * G[:, a, b] / sg)
    return MassMatrices(M0=M0, M1=M1, M2=M2, M3=M3)


def _component_tables(grid, kinds, eta):
    out_idx, out_val = [], []
    for d in range(3):
        idx, val = _direction_tables(grid.cells[d], grid.degrees[d], eta[..., d], kinds[d])
        out_idx.append(idx)
        out_val.append(val)
    return out_idx, out_val


def _eval_scalar(grid, kinds, coeffs3d, eta):
    (i1, i2, i3), (v1, v2, v3) = _component_tables(grid, kinds, eta)
    gath = coeffs3d[
        i1[..., :, None, None],
        i2[..., None, :, None],
        i3[..., None, None, :],
    ]
    return np.einsum("...jkl,...j,...k,...l->...", gath, v1, v2, v3)


def evaluate_field(grid, coeffs, form_degree, eta):
    """Evaluate a discrete k-form proxy at arbitrary logical points.

    Scalars (k = 0, 3) return shape eta.shape[:-1]; vectors (k = 1, 2)
    return shape eta.shape[:-1] + (3,).
    """
    eta = np.mod(np.asarray(eta, dtype=float), 1.0)
    ns = grid.n_scalar
    shape3 = grid.cells
    if form_degree == 0:
        return _eval_scalar(grid, (False,) * 3, np.asarray(coeffs).reshape(shape3), eta)
    if form_degree == 3:
        return _eval_scalar(grid, (True,) * 3, np.asarray(coeffs).reshape(shape3), eta)
    kinds_all = _V1_KINDS if form_degree == 1 else _V2_KINDS
    comps = []
    coeffs = np.asarray(coeffs)
    for mu in range(3):
        block = coeffs[mu * ns : (mu + 1) * ns].reshape(shape3)
        comps.append(_eval_scalar(grid, kinds_all[mu], block, eta))
    return np.stack(comps, axis=-1)


class DeRhamComplex:
    """Bundle of grid, mapping, incidence, quadrature, and mass matrices."""

    def __init__(self, grid, mapping, quad_counts=None):
        self.grid = grid
        self.mapping = mapping
        self.spaces = build_spaces(grid)
        inc = incidence(grid)
        self.incidence = inc
        self.G = inc.Gmat.astype(float).tocsr()
        self.C = inc.Cmat.astype(float).tocsr()
        self.D = inc.Dmat.astype(float).tocsr()
        self.quad = build_quadrature(grid, mapping, quad_counts)
        self.mass = assemble_mass(grid, mapping, self.quad)

    @property
    def dims(self):
        return self.grid.dims

    def evaluate(self, coeffs, form_degree, eta):
        return evaluate_field(self.grid, coeffs, form_degree, eta)

    def eval_at_quad(self, coeffs, form_degree):
        """Field values on the quadrature grid, shape (Nq,) or (Nq, 3)."""
        ns = self.grid.n_scalar
        if form_degree == 0:
            return self.quad.E0 @ np.asarray(coeffs)
        if form_degree == 3:
            return self.quad.E3 @ np.asarray(coeffs)
        E = self.quad.E1 if form_degree == 1 else self.quad.E2
        c = np.asarray(coeffs)
        return np.stack([E[mu] @ c[mu * ns : (mu + 1) * ns] for mu in range(3)], axis=-1)

    def deposit_from_quad(self, values, form_degree):
        """Adjoint of eval_at_quad: point values -> coefficient functional."""
        if form_degree == 0:
            return self.quad.E0.T @ np.asarray(values)
        if form_degree == 3:
            return self.quad.E3.T @ np.asarray(values)
        E = self.quad.E1 if form_degree == 1 else self.quad.E2
        v = np.asarray(values)
        return np.concatenate([E[mu].T @ v[:, mu] for mu in range(3)])

    def mass_operator(self, form_degree):
        """Matrix-free mass application through the quadrature caches."""
        qw = self.quad.weights
        sg = self.quad.metric.sqrt_g
        if form_degree == 0:
            w = qw * sg
            return lambda x: self.quad.E0.T @ (w * (self.quad.E0 @ x))
        if form_degree == 3:
            w = qw / sg
            return lambda x: self.quad.E3.T @ (w * (self.quad.E3 @ x))
        met = qw[:, None, None] * (
            self.quad.metric.Ginv * sg[:, None, None]
            if form_degree == 1
            else self.quad.metric.G / sg[:, None, None]
        )

        def apply(x):
            vals = self.eval_at_quad(x, form_degree)
            return self.deposit_from_quad(np.einsum("qab,qb->qa", met, vals), form_degree)

        return apply
