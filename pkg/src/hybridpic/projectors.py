"""Local commuting quasi-interpolation onto the spline de Rham complex.

Uni-variate building blocks: interpolation of the degree-p space from
2p-1 point samples (weights solve the local B-spline reproduction
conditions), and histopolation of the degree-(p-1) space from 2p
half-cell subinterval integrals.  The histopolation functionals are the
cyclic differences of the interpolation ones composed with an
antiderivative, which makes the diagram

        grad/curl/div on smooth fields  ->  incidence matrices on coefficients

commute by construction.  Tensorizing per direction yields the 3D
projectors; localized fields (particle shapes) touch only O(p) degrees
of freedom per direction, which keeps the particle coupling matrix of
the magnetic force sub-step sparse.
"""

import numpy as np
import scipy.sparse as sp

from . import bsplines as bsp
from .feec import _V1_KINDS, _V2_KINDS


class QuasiInterpolation1D:
    """Interpolation/histopolation functionals on one periodic direction.

    Parameters
    ----------
    n, p : cells and spline degree.
    gauss : Gauss points per histopolation subinterval (default p + 2).
    """

    def __init__(self, n, p, gauss=None):
        self.n = int(n)
        self.p = int(p)
        self.h = 1.0 / self.n
        self.gauss = int(gauss) if gauss is not None else self.p + 2
        self.omega = self._reproduction_weights(self.p)
        w = np.zeros(2 * self.p + 1)
        w[1:-1] = self.omega
        self.omega_t = w[1:] + w[:-1]  # 2p subinterval weights

        # interpolation sample axis: nodes for p = 1, half-grid otherwise
        if self.p == 1:
            self.interp_axis = np.arange(self.n) * self.h
            self.interp_stride = 1  # axis indices per dof
            self.interp_offset = 1  # axis index of dof i's first point is i + 1
        else:
            self.interp_axis = np.arange(2 * self.n) * (0.5 * self.h)
            self.interp_stride = 2
            self.interp_offset = 2
        self.n_interp_pts = 2 * self.p - 1 if self.p > 1 else 1

        # histopolation axis: Gauss points on the 2n half-cells
        xg, wg = np.polynomial.legendre.leggauss(self.gauss)
        sub_left = np.arange(2 * self.n) * (0.5 * self.h)
        self.histo_axis = (sub_left[:, None] + 0.25 * self.h * (xg[None, :] + 1.0)).ravel()
        self.histo_gauss_w = 0.25 * self.h * wg

        self.interp_matrix = self._build_interp_matrix()
        self.histo_matrix = self._build_histo_matrix()

    @staticmethod
    def _reproduction_weights(p):
        """Solve lambda_0(N_m) = delta_{0m} on the local point stencil."""
        if p == 1:
            return np.array([1.0])
        j = np.arange(2 * p - 1)
        x = 1.0 + 0.5 * j  # stencil points of dof 0 in units of h
        m = np.arange(-(p - 1), p)
        A = bsp.cardinal_bspline(p, x[:, None] - m[None, :])
        e = np.zeros(2 * p - 1)
        e[p - 1] = 1.0
        return np.linalg.solve(A.T, e)

    def _build_interp_matrix(self):
        U = self.interp_axis.size
        rows, cols, data = [], [], []
        for i in range(self.n):
            base = self.interp_stride * i + self.interp_offset
            for j in range(self.n_interp_pts):
                rows.append(i)
                cols.append((base + j) % U)
                data.append(self.omega[j])
        M = sp.coo_matrix((data, (rows, cols)), shape=(self.n, U))
        M.sum_duplicates()
        return np.asarray(M.todense())

    def _build_histo_matrix(self):
        g = self.gauss
        U = 2 * self.n * g
        rows, cols, data = [], [], []
        for i in range(self.n):
            for m in range(2 * self.p):
                sub = (2 * i + m) % (2 * self.n)
                for l in range(g):
                    rows.append(i)
                    cols.append(sub * g + l)
                    data.append(self.omega_t[m] * self.histo_gauss_w[l])
        M = sp.coo_matrix((data, (rows, cols)), shape=(self.n, U))
        M.sum_duplicates()
        return np.asarray(M.todense())


class CommutingProjectors:
    """Tensor-product projectors onto V0..V3 from evaluable fields."""

    def __init__(self, grid, gauss=None):
        self.grid = grid
        if gauss is None:
            gauss = [None] * 3
        self.rules = tuple(
            QuasiInterpolation1D(grid.cells[d], grid.degrees[d], gauss[d]) for d in range(3)
        )

    def _axes(self, kinds):
        return tuple(
            (self.rules[d].histo_axis if kinds[d] else self.rules[d].interp_axis)
            for d in range(3)
        )

    def _mats(self, kinds):
        return tuple(
            (self.rules[d].histo_matrix if kinds[d] else self.rules[d].interp_matrix)
            for d in range(3)
        )

    def _sample(self, f, axes, component=None):
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = np.asarray(f(pts), dtype=float)
        if component is not None:
            vals = vals[..., component]
        return vals

    def _project_scalar(self, f, kinds, component=None):
        vals = self._sample(f, self._axes(kinds), component)
        W1, W2, W3 = self._mats(kinds)
        return np.einsum("ia,jb,kc,abc->ijk", W1, W2, W3, vals, optimize=True).ravel()

    def project_0form(self, f):
        """Coefficients of the V0 quasi-interpolant of a scalar field."""
        return self._project_scalar(f, (False, False, False))

    def project_3form(self, f):
        return self._project_scalar(f, (True, True, True))

    def project_1form(self, F):
        """Componentwise V1 projection of a vector proxy field F(eta)->(...,3)."""
        return np.concatenate(
            [self._project_scalar(F, _V1_KINDS[mu], component=mu) for mu in range(3)]
        )

    def project_2form(self, F):
        return np.concatenate(
            [self._project_scalar(F, _V2_KINDS[mu], component=mu) for mu in range(3)]
        )


def _ceil_div_int(x):
    return np.ceil(x).astype(np.int64)


class CouplingAssembler:
    """Assembles the particle/field coupling matrix of the magnetic force step.

    Row block (s, k) holds the V1 quasi-interpolation coefficients of the
    vector field  S(eta - eta_k) / n_h(eta) * DF(eta)^T e_s,  so the matrix
    maps V1 coefficient vectors to per-particle physical kicks.  Rows are
    sparse: the shape support is a few cells and the projector is local.
    """

    def __init__(self, complexe, projectors, shape, density_floor=1e-3, chunk=1024):
        self.complexe = complexe
        self.proj = projectors
        self.shape = shape
        self.floor = float(density_floor)
        self.chunk = int(chunk)
        grid = complexe.grid
        self.grid = grid
        self._per_component = []
        cartesian = complexe.mapping.is_cartesian
        for c in range(3):
            kinds = _V1_KINDS[c]
            axes = projectors._axes(kinds)
            dirs = []
            for d in range(3):
                rule = projectors.rules[d]
                n, p, h = rule.n, rule.p, rule.h
                r = shape.radius[d]
                if kinds[d]:  # histopolation direction
                    M = min(n, int(np.floor(2 * r / h + p)) + 2)
                    R = self._histo_R(rule, M)
                else:
                    M = min(n, int(np.floor(2 * r / h + p - 1)) + 2)
                    R = self._interp_R(rule, M)
                dirs.append({"rule": rule, "M": M, "R": R, "axis": axes[d], "histo": kinds[d]})
            if cartesian:
                dfgrids = None
            else:
                pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
                dfgrids = complexe.mapping.jacobian(pts)  # (...,3,3)
            self._per_component.append({"axes": axes, "dirs": dirs, "df": dfgrids})

    @staticmethod
    def _interp_R(rule, M):
        if rule.p == 1:
            return np.eye(M)
        W = 2 * (M - 1) + rule.n_interp_pts
        R = np.zeros((M, W))
        for m in range(M):
            R[m, 2 * m : 2 * m + rule.n_interp_pts] = rule.omega
        return R

    @staticmethod
    def _histo_R(rule, M):
        g = rule.gauss
        Ws = 2 * (M - 1) + 2 * rule.p
        R = np.zeros((M, Ws * g))
        for m in range(M):
            for mm in range(2 * rule.p):
                s = 2 * m + mm
                R[m, s * g : (s + 1) * g] = rule.omega_t[mm] * rule.histo_gauss_w
        return R

    def _dof_base(self, eta_d, r, h, p):
        return _ceil_div_int((eta_d - r) / h - p)

    def _windows(self, eta):
        """Per-particle DOF windows and sample base indices, per component."""
        out = []
        for c in range(3):
            dirs = self._per_component[c]["dirs"]
            bases, dofs = [], []
            for d in range(3):
                dd = dirs[d]
                rule = dd["rule"]
                D0 = self._dof_base(eta[d], self.shape.radius[d], rule.h, rule.p)
                if dd["histo"]:
                    B = 2 * D0 * rule.gauss
                else:
                    B = rule.interp_stride * D0 + rule.interp_offset
                bases.append(np.ascontiguousarray(B))
                dofs.append((D0[:, None] + np.arange(dd["M"])[None, :]) % rule.n)
            out.append((bases, dofs))
        return out

    def assemble(self, ensemble, density_grids=None):
        """Build the 3K x N1 coupling matrix for the current positions.

        ``density_grids`` may carry precomputed marker densities on the three
        component sample grids (same layout as :meth:`density_grids`).
        Returns (csr_matrix, floor_event_count).
        """
        from . import _kernels as kern
        from .particles import deposit_scalar_grid

        eta = ensemble.eta
        K = ensemble.K
        ns = self.grid.n_scalar
        N1 = 3 * ns
        mapping = self.complexe.mapping
        cartesian = mapping.is_cartesian
        kd, hs, _, mim = self.shape._kernel_args()
        bounds = ensemble.shard_bounds()
        floor_events = 0
        windows = self._windows(eta)
        blocks = [{} for _ in range(3)]  # blocks[s][c] = (data (K, nnz_c), cols (K, nnz_c))

        for c in range(3):
            info = self._per_component[c]
            axes = info["axes"]
            if density_grids is None:
                nh = deposit_scalar_grid(ensemble, axes)
            else:
                nh = density_grids[c]
            mask = nh >= self.floor
            floor_events += int(np.count_nonzero((nh > 0.0) & ~mask))
            gfac = np.where(mask, 1.0, 0.0) / np.where(mask, nh, 1.0)
            if cartesian:
                fields = {c: gfac * mapping.L[c]}
            else:
                fields = {s: gfac * info["df"][..., s, c] for s in range(3)}

            dirs = info["dirs"]
            bases, dof_idx = windows[c]
            R1, R2, R3 = (np.ascontiguousarray(dirs[d]["R"]) for d in range(3))
            Ms = (R1.shape[0], R2.shape[0], R3.shape[0])
            cols = (
                (dof_idx[0][:, :, None, None] * self.grid.cells[1]
                 + dof_idx[1][:, None, :, None]) * self.grid.cells[2]
                + dof_idx[2][:, None, None, :]
            ) + c * ns
            cols = np.broadcast_to(cols, (K,) + Ms).reshape(K, -1)
            for s, fgrid in fields.items():
                coeff = np.empty((K,) + Ms)
                kern.coupling_rows(
                    eta, bases[0], bases[1], bases[2],
                    axes[0], axes[1], axes[2], R1, R2, R3,
                    kd, hs, mim, np.ascontiguousarray(fgrid), bounds, coeff,
                )
                blocks[s][c] = (coeff.reshape(K, -1), cols)

        # rows are already ordered (s, then k): build the CSR arrays directly
        data_parts, idx_parts, counts = [], [], []
        for s in range(3):
            if blocks[s]:
                data_parts.append(np.concatenate([blocks[s][c][0] for c in sorted(blocks[s])], axis=1))
                idx_parts.append(np.concatenate([blocks[s][c][1] for c in sorted(blocks[s])], axis=1))
                counts.append(data_parts[-1].shape[1])
            else:
                data_parts.append(np.zeros((K, 0)))
                idx_parts.append(np.zeros((K, 0), dtype=np.int64))
                counts.append(0)
        indptr = np.concatenate(
            [[0]] + [np.full(K, counts[s], dtype=np.int64) for s in range(3)]
        ).cumsum()
        data = np.concatenate([p.ravel() for p in data_parts])
        indices = np.concatenate([p.ravel() for p in idx_parts])
        L = sp.csr_matrix((data, indices, indptr), shape=(3 * K, N1))
        return L, floor_events

    def density_grids(self, ensemble):
        """Marker density on the three component sample grids."""
        from .particles import deposit_scalar_grid

        return [deposit_scalar_grid(ensemble, self._per_component[c]["axes"]) for c in range(3)]
