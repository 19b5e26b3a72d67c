"""Marker ensemble: shape functions, sampling, deposition and gathering.

Markers carry logical positions (mod 1), physical velocity proxies in
Alfven units, and fixed weights (full-f).  The smoothing shape is a
separable product of k-fold box self-convolutions with unit integral;
periodic images are summed, so supports wider than the period remain
correct (the quasi-2D presets use only two cells in one direction).
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from . import bsplines as bsp


@dataclass(frozen=True)
class ShapeFunction:
    """Separable smoothing kernel: degrees per direction and support scales."""

    degrees: tuple = (2, 2, 2)
    supports: tuple = (0.25, 0.25, 0.25)

    def __post_init__(self):
        deg = tuple(int(k) for k in self.degrees)
        sup = tuple(float(h) for h in self.supports)
        if len(deg) != 3 or any(k < 0 for k in deg):
            raise ValueError("shape degrees must be three integers >= 0")
        if len(sup) != 3 or any(not (0.0 < h < 1.0) for h in sup):
            raise ValueError("shape supports must lie in (0, 1)")
        object.__setattr__(self, "degrees", deg)
        object.__setattr__(self, "supports", sup)

    @property
    def radius(self):
        """Half-width of the support per direction: h * (k + 1) / 2."""
        return tuple(0.5 * h * (k + 1) for k, h in zip(self.degrees, self.supports))

    @property
    def images(self):
        return tuple(int(np.floor(1.0 + r)) for r in self.radius)

    def value(self, offset):
        """S(offset) with periodic images; offset has shape (..., 3)."""
        offset = np.asarray(offset, dtype=float)
        out = np.ones(offset.shape[:-1])
        for d in range(3):
            out = out * bsp.periodized_shape_value(
                self.degrees[d], self.supports[d], offset[..., d]
            )
        return out

    def gradient(self, offset):
        offset = np.asarray(offset, dtype=float)
        vals = [
            bsp.periodized_shape_value(self.degrees[d], self.supports[d], offset[..., d])
            for d in range(3)
        ]
        ders = [
            bsp.periodized_shape_derivative(self.degrees[d], self.supports[d], offset[..., d])
            for d in range(3)
        ]
        comps = [
            ders[0] * vals[1] * vals[2],
            vals[0] * ders[1] * vals[2],
            vals[0] * vals[1] * ders[2],
        ]
        return np.stack(comps, axis=-1)

    def _kernel_args(self):
        return (
            np.asarray(self.degrees, dtype=np.int64),
            np.asarray(self.supports, dtype=float),
            np.asarray(self.radius, dtype=float),
            np.asarray(self.images, dtype=np.int64),
        )


@dataclass
class ParticleEnsemble:
    """Marker state: positions eta (3, K) in [0,1), velocities (3, K), weights."""

    eta: np.ndarray
    vel: np.ndarray
    weights: np.ndarray
    shape: ShapeFunction
    seed: int = 0
    shards: int = 4

    def __post_init__(self):
        self.eta = np.ascontiguousarray(np.mod(self.eta, 1.0), dtype=float)
        self.vel = np.ascontiguousarray(self.vel, dtype=float)
        self.weights = np.ascontiguousarray(self.weights, dtype=float)
        if self.eta.shape != self.vel.shape or self.eta.shape != (3, self.weights.size):
            raise ValueError("eta and vel must be (3, K); weights length K")
        if self.weights.size < 1:
            raise ValueError("need at least one marker")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    @property
    def K(self):
        return self.weights.size

    def shard_bounds(self):
        return np.linspace(0, self.K, self.shards + 1).round().astype(np.int64)


def _axes3(axes):
    return tuple(np.ascontiguousarray(a, dtype=float) for a in axes)


def deposit_scalar_grid(ensemble, axes, coef=None):
    """sum_k coef_k S(u - eta_k) on the tensor grid of the three axes."""
    ax1, ax2, ax3 = _axes3(axes)
    coef = ensemble.weights if coef is None else np.ascontiguousarray(coef, dtype=float)
    kd, hs, rad, mim = ensemble.shape._kernel_args()
    bounds = ensemble.shard_bounds()
    out = np.zeros((ensemble.shards, ax1.size, ax2.size, ax3.size))
    kern.deposit_scalar(ensemble.eta, coef, ax1, ax2, ax3, kd, hs, rad, mim, bounds, out)
    return out.sum(axis=0)


def deposit_vector_grid(ensemble, axes, coef3):
    ax1, ax2, ax3 = _axes3(axes)
    coef3 = np.ascontiguousarray(coef3, dtype=float)
    kd, hs, rad, mim = ensemble.shape._kernel_args()
    bounds = ensemble.shard_bounds()
    out = np.zeros((ensemble.shards, ax1.size, ax2.size, ax3.size, 3))
    kern.deposit_vec3(ensemble.eta, coef3, ax1, ax2, ax3, kd, hs, rad, mim, bounds, out)
    return out.sum(axis=0)


def gather_vector(ensemble, axes, point_field):
    """Per-marker sum of S(u - eta_k) * field_u; field shape (U1, U2, U3, 3)."""
    ax1, ax2, ax3 = _axes3(axes)
    kd, hs, rad, mim = ensemble.shape._kernel_args()
    bounds = ensemble.shard_bounds()
    out = np.empty((3, ensemble.K))
    kern.gather_vec3(
        ensemble.eta, ax1, ax2, ax3, kd, hs, rad, mim, bounds,
        np.ascontiguousarray(point_field, dtype=float), out,
    )
    return out


def gather_gradient(ensemble, axes, point_field):
    """Per-marker sum of field_u * grad S(u - eta_k); field shape (U1, U2, U3)."""
    ax1, ax2, ax3 = _axes3(axes)
    kd, hs, rad, mim = ensemble.shape._kernel_args()
    bounds = ensemble.shard_bounds()
    out = np.empty((3, ensemble.K))
    kern.gather_grad(
        ensemble.eta, ax1, ax2, ax3, kd, hs, rad, mim, bounds,
        np.ascontiguousarray(point_field, dtype=float), out,
    )
    return out


def density_at(ensemble, points):
    """Marker density at arbitrary logical points, shape (M,). Never negative
    for nonnegative weights; callers apply any floor themselves."""
    pts = np.ascontiguousarray(np.mod(np.atleast_2d(points), 1.0), dtype=float)
    kd, hs, rad, mim = ensemble.shape._kernel_args()
    out = np.empty(pts.shape[0])
    kern.density_at_points(ensemble.eta, ensemble.weights, pts, kd, hs, rad, mim, out)
    return out


def sample_maxwellian(
    mapping,
    shape,
    K,
    seed,
    vt=(1.0, 1.0, 1.0),
    drift=(0.0, 0.0, 0.0),
    density=None,
    drift_field=None,
    shards=4,
):
    """Draw a marker ensemble from a (possibly space-modulated) Maxwellian.

    Positions are uniform on the logical cube; velocity components are
    Gaussian with variance vt_d^2 / 2 about the drift.  Weights make the
    deposited density estimate the 3-form proxy sqrt(g) * n:

        w_k = n(x_k) sqrt(g)(eta_k) / K

    ``density`` maps physical positions to the (order-one) density profile;
    ``drift_field`` adds a space-dependent velocity offset (wave pumps).
    Deterministic for a fixed seed: draws use a counter-based generator in a
    fixed order independent of shard count.
    """
    if K < 1:
        raise ValueError("need at least one marker")
    rng = np.random.Generator(np.random.Philox(int(seed)))
    eta = rng.random((3, K))
    normals = rng.standard_normal((3, K))
    x = mapping(eta.T)
    sigma = np.asarray(vt, dtype=float)[:, None] / np.sqrt(2.0)
    vel = np.asarray(drift, dtype=float)[:, None] + sigma * normals
    if drift_field is not None:
        vel = vel + np.asarray(drift_field(x), dtype=float).T
    n = np.ones(K) if density is None else np.asarray(density(x), dtype=float)
    if np.any(n < 0.0):
        raise ValueError("density profile must be nonnegative")
    sqrt_g = mapping.metric(eta.T).sqrt_g
    w = n * sqrt_g / K
    return ParticleEnsemble(eta=eta, vel=vel, weights=w, shape=shape, seed=int(seed), shards=shards)


@dataclass(frozen=True)
class CoefficientFilter:
    """Symmetric smoothing of V1 coefficient blocks (identity by default)."""

    kind: str = "identity"
    passes: int = 1

    def __post_init__(self):
        if self.kind not in ("identity", "binomial"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.passes < 0:
            raise ValueError("filter passes must be >= 0")

    @property
    def is_identity(self):
        return self.kind == "identity" or self.passes == 0

    def apply(self, grid, coeffs):
        """Apply the per-direction (1/4, 1/2, 1/4) cyclic stencil to each block."""
        if self.is_identity:
            return coeffs
        ns = grid.n_scalar
        out = np.array(coeffs, dtype=float, copy=True)
        for mu in range(3):
            blk = out[mu * ns : (mu + 1) * ns].reshape(grid.cells)
            for _ in range(self.passes):
                for ax in range(3):
                    if grid.cells[ax] == 1:
                        continue
                    blk = 0.5 * blk + 0.25 * (np.roll(blk, 1, axis=ax) + np.roll(blk, -1, axis=ax))
            out[mu * ns : (mu + 1) * ns] = blk.ravel()
        return out
