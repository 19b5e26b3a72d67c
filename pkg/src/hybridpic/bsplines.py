"""Uniform periodic B-spline bases on [0, 1).

Two families appear throughout: the standard partition-of-unity splines of
degree p ("N"), and the integral-normalized splines of degree p-1 ("D"),
related by d/dx sum_i c_i N_i = sum_i (c_i - c_{i-1}) D_i on uniform knots.
Everything here is periodic with n cells of width h = 1/n; basis index i
lives in Z/nZ and evaluation wraps indices modulo n.
"""

import numpy as np

__all__ = [
    "cardinal_values",
    "cardinal_bspline",
    "cardinal_bspline_derivative",
    "n_spline_table",
    "d_spline_table",
    "n_spline_derivative_table",
    "greville",
    "univariate_mass",
    "gauss_cells",
]


def cardinal_values(p, t):
    """Values v[..., j] = B_p(t + j), j = 0..p, for t in [0, 1).

    B_p is the uniform B-spline of degree p with support [0, p+1].  The
    p+1 splines active on a knot cell are exactly these shifted values.
    """
    t = np.asarray(t, dtype=float)
    v = np.zeros(t.shape + (p + 1,))
    v[..., 0] = 1.0
    for d in range(1, p + 1):
        v[..., d] = ((1.0 - t) / d) * v[..., d - 1]
        for j in range(d - 1, 0, -1):
            v[..., j] = ((t + j) / d) * v[..., j] + ((d + 1.0 - t - j) / d) * v[..., j - 1]
        v[..., 0] *= t / d
    return v


def cardinal_bspline(p, x):
    """B_p(x) for arbitrary real x (zero outside [0, p+1])."""
    x = np.asarray(x, dtype=float)
    j0 = np.floor(x).astype(np.int64)
    frac = x - j0
    v = cardinal_values(p, frac)
    out = np.zeros_like(frac)
    inside = (j0 >= 0) & (j0 <= p)
    idx = np.where(inside, j0, 0)
    out = np.where(inside, np.take_along_axis(v, idx[..., None], axis=-1)[..., 0], 0.0)
    return out


def cardinal_bspline_derivative(p, x):
    """d/dx B_p(x) = B_{p-1}(x) - B_{p-1}(x - 1)."""
    if p == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    return cardinal_bspline(p - 1, x) - cardinal_bspline(p - 1, np.asarray(x, dtype=float) - 1.0)


def _cells(n, x):
    u = np.asarray(x, dtype=float) * n
    c = np.floor(u).astype(np.int64)
    c = np.clip(c, 0, n - 1)
    return c, u - c


def n_spline_table(n, p, x):
    """Active N-spline indices and values at points x in [0, 1).

    Returns (idx, val) of shape (len(x), p+1); idx already wrapped mod n.
    Repeated indices (possible when n <= p) must be accumulated by callers.
    """
    c, t = _cells(n, x)
    v = cardinal_values(p, t)
    val = v[..., ::-1]
    j = np.arange(p + 1)
    idx = (c[..., None] - p + j) % n
    return idx, np.ascontiguousarray(val)


def d_spline_table(n, p, x):
    """Active D-spline (degree p-1, scaled by n) indices and values at x."""
    c, t = _cells(n, x)
    v = cardinal_values(p - 1, t) if p >= 1 else np.ones(np.shape(t) + (1,))
    val = v[..., ::-1] * n
    j = np.arange(max(p, 1))
    idx = (c[..., None] - (p - 1) + j) % n
    return idx, np.ascontiguousarray(val)


def n_spline_derivative_table(n, p, x):
    """Derivatives of the active N-splines at x (same index layout)."""
    c, t = _cells(n, x)
    if p == 0:
        return (c[..., None] % n), np.zeros(np.shape(t) + (1,))
    u = cardinal_values(p - 1, t)
    ext = np.zeros(np.shape(t) + (p + 2,))
    ext[..., 1 : p + 1] = u
    der = (ext[..., 1:] - ext[..., :-1]) * n
    val = der[..., ::-1]
    j = np.arange(p + 1)
    idx = (c[..., None] - p + j) % n
    return idx, np.ascontiguousarray(val)


def greville(n, p):
    """Support midpoints (Greville abscissae) of the periodic N-splines."""
    return ((np.arange(n) + 0.5 * (p + 1)) / n) % 1.0


def gauss_cells(n, g):
    """Gauss-Legendre rule with g points per cell on [0, 1], n cells.

    Returns (points, weights) with points sorted ascending and
    sum(weights) = 1.
    """
    xg, wg = np.polynomial.legendre.leggauss(g)
    h = 1.0 / n
    cells = np.arange(n)[:, None] * h
    pts = cells + 0.5 * h * (xg[None, :] + 1.0)
    wts = np.broadcast_to(0.5 * h * wg[None, :], pts.shape)
    return pts.ravel(), wts.ravel().copy()


def periodized_shape_value(k, h, delta):
    """Periodized, centered, unit-integral smoothing kernel of degree k.

    The kernel is the k-fold self-convolution of the width-h box, i.e.
    B_k((x/h) + (k+1)/2) / h, summed over integer period images.  ``delta``
    is an offset on the torus (any real; images are handled here).
    """
    delta = np.asarray(delta, dtype=float)
    r = 0.5 * h * (k + 1)
    out = np.zeros_like(delta)
    m_max = int(np.floor(1.0 + r))
    shift = 0.5 * (k + 1)
    for m in range(-m_max, m_max + 1):
        out += cardinal_bspline(k, (delta - m) / h + shift)
    return out / h


def periodized_shape_derivative(k, h, delta):
    """Derivative of periodized_shape_value with respect to delta."""
    delta = np.asarray(delta, dtype=float)
    r = 0.5 * h * (k + 1)
    out = np.zeros_like(delta)
    m_max = int(np.floor(1.0 + r))
    shift = 0.5 * (k + 1)
    for m in range(-m_max, m_max + 1):
        out += cardinal_bspline_derivative(k, (delta - m) / h + shift)
    return out / h**2


def _accumulate(n, idx, val, wts):
    M = np.zeros((n, n))
    nb = idx.shape[1]
    for a in range(nb):
        for b in range(nb):
            np.add.at(M, (idx[:, a], idx[:, b]), wts * val[:, a] * val[:, b])
    return M


def univariate_mass(n, p, kind="N"):
    """Exact periodic mass matrix of the N (degree p) or D (degree p-1) basis."""
    g = p + 1
    pts, wts = gauss_cells(n, g)
    if kind == "N":
        idx, val = n_spline_table(n, p, pts)
    elif kind == "D":
        idx, val = d_spline_table(n, p, pts)
    else:
        raise ValueError(f"kind must be 'N' or 'D', got {kind!r}")
    return _accumulate(n, idx, val, wts)
