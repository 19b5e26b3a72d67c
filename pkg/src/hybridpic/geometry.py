"""Coordinate mappings from the logical unit cube to the physical domain.

Two map families are supported: an axis-aligned box ("cartesian") and a
smoothly distorted box ("colella").  Both are periodic in the sense that
F(eta + e_d) = F(eta) + L_d e_d, so all fields live on the logical torus.
Metric quantities (Jacobian, metric tensor, volume element) are evaluated
analytically; finite differences appear only in tests.
"""

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class MetricSample:
    """Metric data of a mapping at one or many logical points.

    All arrays are batched: ``DF`` has shape (..., 3, 3) and ``sqrt_g``
    shape (...,).  ``G = DF^T DF`` and ``sqrt_g = det DF``.
    """

    DF: np.ndarray
    DFinv: np.ndarray
    G: np.ndarray
    Ginv: np.ndarray
    sqrt_g: np.ndarray

    @property
    def DFinvT(self):
        return np.swapaxes(self.DFinv, -1, -2)


def _inv33(M):
    """Batched inverse of 3x3 matrices via the adjugate (no LAPACK calls)."""
    a, b, c = M[..., 0, 0], M[..., 0, 1], M[..., 0, 2]
    d, e, f = M[..., 1, 0], M[..., 1, 1], M[..., 1, 2]
    g, h, i = M[..., 2, 0], M[..., 2, 1], M[..., 2, 2]
    A = e * i - f * h
    B = c * h - b * i
    C = b * f - c * e
    D = f * g - d * i
    E = a * i - c * g
    F = c * d - a * f
    G = d * h - e * g
    H = b * g - a * h
    I = a * e - b * d
    det = a * A + b * D + c * G
    out = np.empty_like(M)
    out[..., 0, 0], out[..., 0, 1], out[..., 0, 2] = A, B, C
    out[..., 1, 0], out[..., 1, 1], out[..., 1, 2] = D, E, F
    out[..., 2, 0], out[..., 2, 1], out[..., 2, 2] = G, H, I
    return out / det[..., None, None], det


@dataclass(frozen=True)
class Mapping:
    """Invertible map F from the logical cube [0,1]^3 to a physical box.

    Parameters
    ----------
    kind : {"cartesian", "colella"}
    L : box side lengths (Alfven units), all positive.
    alpha : distortion amplitude of the colella map; requires
        ``|alpha| < 1/(2*pi)`` so that det DF > 0 everywhere.
    """

    kind: str
    L: tuple = (1.0, 1.0, 1.0)
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("cartesian", "colella"):
            raise ValueError(f"unknown mapping kind {self.kind!r}")
        L = tuple(float(v) for v in self.L)
        if len(L) != 3 or any(v <= 0.0 for v in L):
            raise ValueError(f"box lengths must be three positive numbers, got {self.L!r}")
        object.__setattr__(self, "L", L)
        a = float(self.alpha)
        if self.kind == "cartesian" and a != 0.0:
            raise ValueError("cartesian mapping takes alpha = 0")
        if abs(a) >= 1.0 / TWO_PI:
            raise ValueError(f"colella distortion needs |alpha| < 1/(2*pi), got {a}")
        object.__setattr__(self, "alpha", a)

    @property
    def is_cartesian(self):
        return self.kind == "cartesian" or self.alpha == 0.0

    def __call__(self, eta):
        """Physical position F(eta); ``eta`` has shape (..., 3)."""
        eta = np.asarray(eta, dtype=float)
        Lx, Ly, Lz = self.L
        e1, e2, e3 = eta[..., 0], eta[..., 1], eta[..., 2]
        out = np.empty_like(eta)
        if self.is_cartesian:
            out[..., 0] = Lx * e1
            out[..., 1] = Ly * e2
            out[..., 2] = Lz * e3
            return out
        a = self.alpha
        out[..., 0] = Lx * (e1 + a * np.sin(TWO_PI * e1) * np.sin(TWO_PI * e2))
        out[..., 1] = Ly * (e2 + a * np.sin(TWO_PI * e2) * np.sin(TWO_PI * e3))
        out[..., 2] = Lz * e3
        return out

    def jacobian(self, eta):
        """Analytic Jacobian DF(eta), shape (..., 3, 3)."""
        eta = np.asarray(eta, dtype=float)
        Lx, Ly, Lz = self.L
        DF = np.zeros(eta.shape[:-1] + (3, 3))
        if self.is_cartesian:
            DF[..., 0, 0] = Lx
            DF[..., 1, 1] = Ly
            DF[..., 2, 2] = Lz
            return DF
        a = self.alpha
        s1, c1 = np.sin(TWO_PI * eta[..., 0]), np.cos(TWO_PI * eta[..., 0])
        s2, c2 = np.sin(TWO_PI * eta[..., 1]), np.cos(TWO_PI * eta[..., 1])
        s3, c3 = np.sin(TWO_PI * eta[..., 2]), np.cos(TWO_PI * eta[..., 2])
        DF[..., 0, 0] = Lx * (1.0 + TWO_PI * a * c1 * s2)
        DF[..., 0, 1] = Lx * TWO_PI * a * s1 * c2
        DF[..., 1, 1] = Ly * (1.0 + TWO_PI * a * c2 * s3)
        DF[..., 1, 2] = Ly * TWO_PI * a * s2 * c3
        DF[..., 2, 2] = Lz
        return DF

    def metric(self, eta):
        """All metric fields at ``eta`` in one MetricSample."""
        DF = self.jacobian(eta)
        DFinv, det = _inv33(DF)
        if np.any(det <= 0.0):
            raise ValueError("mapping is singular: det DF <= 0 at a requested point")
        G = np.swapaxes(DF, -1, -2) @ DF
        Ginv = DFinv @ np.swapaxes(DFinv, -1, -2)
        return MetricSample(DF=DF, DFinv=DFinv, G=G, Ginv=Ginv, sqrt_g=det)


def pushforward_vector(sample, proxy, form_degree):
    """Push a p-form proxy (p = 1 or 2) to a physical vector field.

    1-form proxies map through DF^{-T}, 2-form proxies through DF/sqrt_g.
    ``proxy`` has shape (..., 3) matching the sample batch shape.
    """
    proxy = np.asarray(proxy, dtype=float)
    if form_degree == 1:
        return np.einsum("...ji,...j->...i", sample.DFinv, proxy)
    if form_degree == 2:
        return np.einsum("...ij,...j->...i", sample.DF, proxy) / sample.sqrt_g[..., None]
    raise ValueError(f"form_degree must be 1 or 2, got {form_degree}")
