"""Matrix-free iterative linear algebra.

Conjugate gradients and restarted GMRES against callable operators, a
fixed-point driver used by the implicit sub-steps, and a fast-diagonalization
inverse of the periodic spline mass matrices (exact on Cartesian boxes,
a surrogate preconditioner on distorted maps).
"""

from dataclasses import dataclass, field

import numpy as np

from . import bsplines as bsp
from .feec import _V1_KINDS, _V2_KINDS


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list)


class LinearOperator:
    """Square operator given by its action; entries are never formed."""

    def __init__(self, n, matvec, symmetric=False):
        self.n = int(n)
        self._matvec = matvec
        self.symmetric = bool(symmetric)

    def __call__(self, x):
        return self._matvec(x)

    @classmethod
    def from_matrix(cls, A, symmetric=False):
        return cls(A.shape[0], lambda x: A @ x, symmetric=symmetric)


def _as_op(A, n=None):
    if isinstance(A, LinearOperator):
        return A
    if callable(A):
        return LinearOperator(n, A)
    return LinearOperator.from_matrix(A)


def pcg(A, rhs, precond=None, tol=1e-13, maxit=500, x0=None):
    """Preconditioned conjugate gradients for symmetric positive definite A.

    Converged when ||A x - rhs|| <= tol * ||rhs||.  Returns (x, SolveReport)
    with the Euclidean residual history.  ``x0`` warm-starts the iteration.
    """
    rhs = np.asarray(rhs, dtype=float)
    A = _as_op(A, rhs.size)
    M = (lambda r: r) if precond is None else (precond if callable(precond) else _as_op(precond))
    nrhs = np.linalg.norm(rhs)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    if nrhs == 0.0:
        return np.zeros_like(rhs), SolveReport(0, 0.0, True, [0.0])
    r = rhs - A(x) if x0 is not None else rhs.copy()
    if float(np.linalg.norm(r)) <= tol * nrhs:
        return x, SolveReport(0, float(np.linalg.norm(r)), True, [float(np.linalg.norm(r))])
    z = M(r)
    p = z.copy()
    rz = float(r @ z)
    hist = [float(np.linalg.norm(r))]
    for it in range(1, maxit + 1):
        Ap = A(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            return x, SolveReport(it - 1, hist[-1], False, hist)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rn = float(np.linalg.norm(r))
        hist.append(rn)
        if rn <= tol * nrhs:
            return x, SolveReport(it, rn, True, hist)
        z = M(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(maxit, hist[-1], False, hist)


def gmres(A, rhs, precond=None, tol=1e-13, maxit=500, restart=30, x0=None):
    """Right-preconditioned restarted GMRES.

    The tracked residual is the true one, ||A x - rhs||, so the convergence
    contract matches pcg regardless of the preconditioner quality.
    ``x0`` warm-starts the iteration.
    """
    rhs = np.asarray(rhs, dtype=float)
    A = _as_op(A, rhs.size)
    M = (lambda v: v) if precond is None else (precond if callable(precond) else _as_op(precond))
    n = rhs.size
    nrhs = np.linalg.norm(rhs)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    if nrhs == 0.0:
        return np.zeros_like(rhs), SolveReport(0, 0.0, True, [0.0])
    restart = max(1, min(int(restart), n))
    hist = []
    total_it = 0
    for _cycle in range(maxit):
        r = rhs - A(x)
        beta = float(np.linalg.norm(r))
        if not hist:
            hist.append(beta)
        if beta <= tol * nrhs:
            return x, SolveReport(total_it, beta, True, hist)
        V = np.zeros((restart + 1, n))
        H = np.zeros((restart + 1, restart))
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        g = np.zeros(restart + 1)
        g[0] = beta
        V[0] = r / beta
        k_used = 0
        for k in range(restart):
            if total_it >= maxit:
                break
            w = A(M(V[k]))
            for i in range(k + 1):
                H[i, k] = float(w @ V[i])
                w -= H[i, k] * V[i]
            H[k + 1, k] = float(np.linalg.norm(w))
            if H[k + 1, k] > 0.0:
                V[k + 1] = w / H[k + 1, k]
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                k_used = k
                break
            cs[k] = H[k, k] / denom
            sn[k] = H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total_it += 1
            k_used = k + 1
            hist.append(abs(float(g[k + 1])))
            if abs(g[k + 1]) <= tol * nrhs or H[k + 1, k_used - 1] == 0.0:
                break
        if k_used > 0:
            y = np.linalg.solve(H[:k_used, :k_used], g[:k_used])
            x = x + M(V[:k_used].T @ y)
        r = rhs - A(x)
        res = float(np.linalg.norm(r))
        hist[-1] = res
        if res <= tol * nrhs:
            return x, SolveReport(total_it, res, True, hist)
        if total_it >= maxit:
            break
    return x, SolveReport(total_it, hist[-1] if hist else np.inf, False, hist)


def fixed_point(update, x0, tol=1e-12, maxit=100, patience=5, growth=100.0):
    """Iterate x <- update(x) until successive iterates agree to tol (inf-norm).

    Divergence is flagged when the increment exceeds ``growth`` times the
    best increment seen for ``patience`` consecutive iterations.
    """
    x = np.asarray(x0, dtype=float).copy()
    best = np.inf
    bad = 0
    hist = []
    for it in range(1, maxit + 1):
        xn = update(x)
        inc = float(np.max(np.abs(xn - x)))
        hist.append(inc)
        x = xn
        if inc <= tol:
            return x, SolveReport(it, inc, True, hist)
        if inc < best:
            best = inc
            bad = 0
        elif inc > growth * best:
            bad += 1
            if bad >= patience:
                return x, SolveReport(it, inc, False, hist)
    return x, SolveReport(maxit, hist[-1] if hist else np.inf, False, hist)


def _circulant_eigs(n, p, kind):
    """FFT eigenvalues of the univariate periodic mass circulant."""
    col = bsp.univariate_mass(n, p, kind)[:, 0]
    return np.fft.fft(col).real


def mass_fft_preconditioner(complexe, form_degree):
    """Fast-diagonalization inverse of the degree-k mass matrix.

    Exact for Cartesian mappings (the mass matrices are Kronecker products
    of circulants); for distorted maps the Cartesian-metric surrogate with
    the same box lengths serves as an approximate preconditioner.
    """
    grid = complexe.grid
    n1, n2, n3 = grid.cells
    Lx, Ly, Lz = complexe.mapping.L
    vol = Lx * Ly * Lz
    L = (Lx, Ly, Lz)

    if form_degree == 0:
        kinds_list, consts = [(False,) * 3], [vol]
    elif form_degree == 3:
        kinds_list, consts = [(True,) * 3], [1.0 / vol]
    elif form_degree == 1:
        kinds_list = list(_V1_KINDS)
        consts = [vol / L[mu] ** 2 for mu in range(3)]
    elif form_degree == 2:
        kinds_list = list(_V2_KINDS)
        consts = [L[mu] ** 2 / vol for mu in range(3)]
    else:
        raise ValueError(f"form_degree must be 0..3, got {form_degree}")

    eigs = []
    for kinds, c in zip(kinds_list, consts):
        lam = [
            _circulant_eigs(grid.cells[d], grid.degrees[d], "D" if kinds[d] else "N")
            for d in range(3)
        ]
        eigs.append(c * lam[0][:, None, None] * lam[1][None, :, None] * lam[2][None, None, :])

    ns = grid.n_scalar
    nb = len(eigs)

    def apply(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for mu in range(nb):
            blk = x[mu * ns : (mu + 1) * ns].reshape(n1, n2, n3)
            out[mu * ns : (mu + 1) * ns] = np.fft.ifftn(np.fft.fftn(blk) / eigs[mu]).real.ravel()
        return out

    return LinearOperator(nb * ns, apply, symmetric=True)
