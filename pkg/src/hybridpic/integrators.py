"""Skew bracket sub-steps and their energy-conserving time discretizations.

The dynamics splits into four sub-flows, each generated by a skew
bilinear form, advanced in sequence:

  vv : magnetic rotation of velocities against the marker-mean current
       (midpoint rule, matrix-free scatter/gather, O(K) per evaluation);
  bv : coupled (V, b) midpoint exchange through the projected particle
       coupling matrix (eliminated to one SPD solve for b);
  bb : Hall-term induction, midpoint with an outer fixed point and inner
       Krylov solves, matrix-free;
  xv : streaming plus the electron-pressure kick, either as two explicit
       flows (Cartesian boxes) or as a midpoint discrete-gradient update
       that conserves the full Hamiltonian on any mapping.

Velocities stay fixed in bb, positions stay fixed everywhere except xv,
and the field stays fixed in vv and xv; the weak divergence of b is
preserved by bv and bb because the discrete grad/curl compose to zero.
"""

import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import pushforward_vector
from .particles import (
    CoefficientFilter,
    deposit_scalar_grid,
    deposit_vector_grid,
    gather_gradient,
    gather_vector,
)
from .projectors import CommutingProjectors, CouplingAssembler
from .solvers import gmres, mass_fft_preconditioner, pcg


class SubstepError(RuntimeError):
    """An implicit sub-step failed to converge; carries the solve residual."""

    def __init__(self, name, iterations, residual):
        super().__init__(f"sub-step {name}: no convergence after {iterations} iterations "
                         f"(residual {residual:.3e})")
        self.name = name
        self.iterations = iterations
        self.residual = residual


@dataclass
class IntegratorConfig:
    dt: float
    tol: float = 1e-12
    max_iter: int = 200
    density_floor: float = 1e-3
    xv_mode: str = "hamiltonian_splitting"  # or "discrete_gradient"
    composition: str = "lie"  # or "strang"
    xv_splitting: str = "strang"  # inner composition of the explicit xv flows
    bv_refresh_b: bool = False
    inner_tol: float = 1e-13
    inner_max_iter: int = 500
    gmres_restart: int = 30

    def __post_init__(self):
        if self.xv_mode not in ("hamiltonian_splitting", "discrete_gradient"):
            raise ValueError(f"unknown xv_mode {self.xv_mode!r}")
        if self.composition not in ("lie", "strang"):
            raise ValueError(f"unknown composition {self.composition!r}")
        if self.xv_splitting not in ("lie", "strang"):
            raise ValueError(f"unknown xv_splitting {self.xv_splitting!r}")
        if self.tol <= 0.0 or self.density_floor < 0.0:
            raise ValueError("tolerance must be positive and floor nonnegative")


@dataclass
class SimulationState:
    """One advancing simulation: markers, field coefficients, clock."""

    ensemble: object
    b: np.ndarray
    time: float = 0.0
    pos_version: int = 0

    def __post_init__(self):
        self.b = np.ascontiguousarray(self.b, dtype=float)


@dataclass
class SubstepStats:
    name: str
    iterations: int = 0
    inner_iterations: int = 0
    residual: float = 0.0
    floor_events: int = 0
    seconds: float = 0.0


@dataclass
class EnergyReport:
    total: float
    kinetic: float
    magnetic: float
    thermal: float
    floor_events: int = 0


def _cross(a, b):
    """Cross product along the leading component axis of (3, K) arrays."""
    return np.cross(a, b, axis=0)


class HybridIntegrator:
    """Advances a SimulationState through the four-way splitting."""

    def __init__(self, complexe, shape, kappa, config, projectors=None, coeff_filter=None):
        self.cx = complexe
        self.shape = shape
        self.kappa = float(kappa)
        self.cfg = config
        self.filter = coeff_filter if coeff_filter is not None else CoefficientFilter()
        self.proj = projectors if projectors is not None else CommutingProjectors(complexe.grid)
        self.assembler = CouplingAssembler(
            complexe, self.proj, shape, density_floor=config.density_floor
        )
        if config.xv_mode == "discrete_gradient" and min(shape.degrees) < 2:
            raise ValueError("discrete-gradient streaming needs shape degrees >= 2 "
                             "in every direction")
        if config.xv_mode == "hamiltonian_splitting" and not complexe.mapping.is_cartesian:
            raise ValueError("the explicit streaming split is exact only on Cartesian boxes; "
                             "use discrete_gradient on distorted mappings")
        self.M1 = complexe.mass.M1
        self.m1_inv = mass_fft_preconditioner(complexe, 1)
        self._qw = complexe.quad.weights
        self._sg = complexe.quad.metric.sqrt_g
        self._Ginv = complexe.quad.metric.Ginv
        self._met = complexe.quad.metric
        self._quad_shape = tuple(a.size for a in complexe.quad.axes)
        self._nhat_cache = (None, None)

    # ---------------------------------------------------------------- density
    def density_quad(self, state):
        """Marker density at the quadrature points (cached per positions)."""
        key = (id(state), state.pos_version)
        if self._nhat_cache[0] == key:
            return self._nhat_cache[1]
        nhat = deposit_scalar_grid(state.ensemble, self.cx.quad.axes).ravel()
        self._nhat_cache = (key, nhat)
        return nhat

    def _floor_mask(self, nhat):
        mask = nhat >= self.cfg.density_floor
        events = int(np.count_nonzero(~mask & (nhat > 0.0)))
        return mask, events

    # ------------------------------------------------------------ hamiltonian
    def _thermal(self, nhat):
        mask, events = self._floor_mask(nhat)
        if self.kappa == 0.0:
            return 0.0, events
        safe = np.where(mask, nhat, 1.0)
        vals = self._qw * nhat * np.log(safe / self._sg)
        th = self.kappa * float(np.sum(np.where(mask, vals, 0.0)))
        return th, events

    def hamiltonian(self, state):
        """Discrete energy: kinetic + magnetic + quadratured electron thermal."""
        ens = state.ensemble
        kin = 0.5 * float(np.sum(ens.weights * np.sum(ens.vel**2, axis=0)))
        mag = 0.5 * float(state.b @ (self.M1 @ state.b))
        if self.kappa == 0.0:
            th, events = 0.0, 0
        else:
            th, events = self._thermal(self.density_quad(state))
        return EnergyReport(total=kin + mag + th, kinetic=kin, magnetic=mag,
                            thermal=th, floor_events=events)

    # ------------------------------------------------------------- field eval
    def _b_physical_quad(self, b):
        proxy = self.cx.eval_at_quad(b, 1)
        return pushforward_vector(self._met, proxy, 1)

    # ------------------------------------------------------------- sub-steps
    def substep_vv(self, state, dt):
        """Midpoint velocity rotation; conserves kinetic energy and momentum."""
        t0 = _time.perf_counter()
        stats = SubstepStats("vv")
        ens = state.ensemble
        if not state.b.any():
            stats.seconds = _time.perf_counter() - t0
            return stats
        Bq = self._b_physical_quad(state.b)
        if not Bq.any():
            stats.seconds = _time.perf_counter() - t0
            return stats
        nhat = self.density_quad(state)
        mask, events = self._floor_mask(nhat)
        stats.floor_events = events
        qmask = self._qw * mask
        axes = self.cx.quad.axes
        g1 = gather_vector(ens, axes, (qmask[:, None] * Bq).reshape(self._quad_shape + (3,)))
        denom = np.where(mask, nhat, 1.0)
        w = ens.weights
        V0 = ens.vel

        def rhs(V):
            J = deposit_vector_grid(ens, axes, w * V).reshape(-1, 3)
            Jn = J / denom[:, None]
            P2 = qmask[:, None] * np.cross(Jn, Bq)
            g2 = gather_vector(ens, axes, P2.reshape(self._quad_shape + (3,)))
            return _cross(V, g1) - g2

        V = V0.copy()
        for it in range(1, self.cfg.max_iter + 1):
            Vn = V0 + dt * rhs(0.5 * (V0 + V))
            inc = float(np.max(np.abs(Vn - V)))
            V = Vn
            stats.iterations = it
            stats.residual = inc
            if inc <= self.cfg.tol:
                break
        else:
            raise SubstepError("vv", stats.iterations, stats.residual)
        ens.vel[...] = V
        stats.seconds = _time.perf_counter() - t0
        return stats

    def _qbv_ops(self, b):
        """Matrix-free magnetic-coupling form and its transpose, frozen at b."""
        uq = np.einsum("qab,qb->qa", self._Ginv, self.cx.eval_at_quad(b, 1))
        gsg = self._qw * self._sg

        def qbv(y):
            F = self.cx.eval_at_quad(y, 2)
            c = gsg[:, None] * np.einsum("qab,qb->qa", self._Ginv, np.cross(F, uq))
            return self.cx.deposit_from_quad(c, 1)

        def qbv_t(x):
            X = self.cx.eval_at_quad(x, 1)
            c = gsg[:, None] * np.cross(uq, np.einsum("qab,qb->qa", self._Ginv, X))
            return self.cx.deposit_from_quad(c, 2)

        return qbv, qbv_t

    def substep_bv(self, state, dt):
        """Coupled (V, b) midpoint exchange; conserves kinetic + magnetic energy.

        The b-update lives in the range of the discrete curl transpose, so
        the weak divergence of b is unchanged up to the solver residual.
        """
        t0 = _time.perf_counter()
        stats = SubstepStats("bv")
        ens = state.ensemble
        if not state.b.any():
            stats.seconds = _time.perf_counter() - t0
            return stats
        L, events = self.assembler.assemble(ens)
        stats.floor_events = events
        C, CT = self.cx.C, self.cx.C.T
        wvec = np.repeat(ens.weights[None, :], 3, axis=0).ravel()
        Vflat = ens.vel.ravel()
        b0 = state.b
        filt = self.filter
        grid = self.cx.grid

        def make_ops(b_freeze):
            qbv, qbv_t = self._qbv_ops(b_freeze)

            def Z(x):
                y = qbv(C @ x)
                if not filt.is_identity:
                    y = filt.apply(grid, y)
                return L @ y

            def Zt(u):
                y = L.T @ u
                if not filt.is_identity:
                    y = filt.apply(grid, y)
                return CT @ qbv_t(y)

            return Z, Zt

        outer = 1 if not self.cfg.bv_refresh_b else self.cfg.max_iter
        b_freeze = b0
        b_new = b0
        for it_outer in range(1, outer + 1):
            Z, Zt = make_ops(b_freeze)
            c = 0.25 * dt * dt

            def A(x):
                return self.M1 @ x + c * Zt(wvec * Z(x))

            rhs = self.M1 @ b0 - c * Zt(wvec * Z(b0)) - dt * Zt(wvec * Vflat)
            b_prev = b_new
            b_new, rep = pcg(A, rhs, precond=self.m1_inv,
                             tol=self.cfg.inner_tol, maxit=self.cfg.inner_max_iter, x0=b_new)
            stats.inner_iterations += rep.iterations
            stats.residual = rep.residual
            if not rep.converged:
                raise SubstepError("bv", rep.iterations, rep.residual)
            stats.iterations = it_outer
            if not self.cfg.bv_refresh_b:
                break
            if float(np.max(np.abs(b_new - b_prev))) <= self.cfg.tol:
                break
            b_freeze = 0.5 * (b0 + b_new)
        Vnew = Vflat + dt * Z(0.5 * (b0 + b_new))
        ens.vel[...] = Vnew.reshape(3, -1)
        state.b = b_new
        stats.seconds = _time.perf_counter() - t0
        return stats

    def substep_bb(self, state, dt):
        """Hall-term induction, midpoint with outer fixed point on b^{n+1}."""
        t0 = _time.perf_counter()
        stats = SubstepStats("bb")
        if not state.b.any():
            stats.seconds = _time.perf_counter() - t0
            return stats
        C, CT = self.cx.C, self.cx.C.T
        b0 = state.b
        Cb0 = C @ b0
        if not Cb0.any():
            stats.seconds = _time.perf_counter() - t0
            return stats
        nhat = self.density_quad(state)
        mask, events = self._floor_mask(nhat)
        stats.floor_events = events
        gfac = np.where(mask, self._qw * self._sg / np.where(mask, nhat, 1.0), 0.0)
        M1b0 = self.M1 @ b0

        b_new = b0.copy()
        for it in range(1, self.cfg.max_iter + 1):
            bmid = 0.5 * (b0 + b_new)
            Wq = np.einsum("qab,qb->qa", self._Ginv, self.cx.eval_at_quad(bmid, 1))

            def qbb(y):
                F = self.cx.eval_at_quad(y, 2)
                c = -gfac[:, None] * np.cross(F, Wq)
                return self.cx.deposit_from_quad(c, 2)

            def A(x):
                return self.M1 @ x - 0.5 * dt * (CT @ qbb(C @ x))

            rhs = M1b0 + 0.5 * dt * (CT @ qbb(Cb0))
            b_next, rep = gmres(A, rhs, precond=self.m1_inv, tol=self.cfg.inner_tol,
                                maxit=self.cfg.inner_max_iter, restart=self.cfg.gmres_restart,
                                x0=b_new)
            stats.inner_iterations += rep.iterations
            if not rep.converged:
                raise SubstepError("bb", rep.iterations, rep.residual)
            inc = float(np.max(np.abs(b_next - b_new)))
            b_new = b_next
            stats.iterations = it
            stats.residual = inc
            if inc <= self.cfg.tol:
                break
        else:
            raise SubstepError("bb", stats.iterations, stats.residual)
        state.b = b_new
        stats.seconds = _time.perf_counter() - t0
        return stats

    # ------------------------------------------------------------- streaming
    def _pressure_coefficients(self, nhat):
        """Quadrature coefficients q_j (ln(n/sqrt_g) + 1) with the floor mask."""
        mask, events = self._floor_mask(nhat)
        safe = np.where(mask, nhat, 1.0)
        c = np.where(mask, self._qw * (np.log(safe / self._sg) + 1.0), 0.0)
        return c, events

    def _thermal_kick(self, state, dt):
        ens = state.ensemble
        stats_events = 0
        if self.kappa != 0.0:
            nhat = self.density_quad(state)
            c, stats_events = self._pressure_coefficients(nhat)
            g = gather_gradient(ens, self.cx.quad.axes, c.reshape(self._quad_shape))
            Linv = 1.0 / np.asarray(self.cx.mapping.L)
            ens.vel += dt * self.kappa * Linv[:, None] * g
        return stats_events

    def _drift(self, state, dt):
        ens = state.ensemble
        Linv = 1.0 / np.asarray(self.cx.mapping.L)
        ens.eta[...] = np.mod(ens.eta + dt * Linv[:, None] * ens.vel, 1.0)
        state.pos_version += 1

    def substep_xv_hamiltonian(self, state, dt):
        """Explicit streaming: exact pressure kick and exact drift (Cartesian)."""
        t0 = _time.perf_counter()
        stats = SubstepStats("xv")
        if not self.cx.mapping.is_cartesian:
            raise ValueError("explicit streaming requires a Cartesian mapping")
        if self.cfg.xv_splitting == "strang":
            stats.floor_events += self._thermal_kick(state, 0.5 * dt)
            self._drift(state, dt)
            stats.floor_events += self._thermal_kick(state, 0.5 * dt)
            stats.iterations = 2
        else:
            stats.floor_events += self._thermal_kick(state, dt)
            self._drift(state, dt)
            stats.iterations = 1
        stats.seconds = _time.perf_counter() - t0
        return stats

    def substep_xv_discrete_gradient(self, state, dt):
        """Midpoint discrete-gradient streaming: conserves H on any mapping.

        The scalar correction uses only the thermal part of the energy
        difference; the kinetic part cancels the midpoint gradient term
        identically, so the correction vanishes exactly when kappa = 0.
        """
        t0 = _time.perf_counter()
        stats = SubstepStats("xv")
        ens = state.ensemble
        w = ens.weights
        axes = self.cx.quad.axes
        H0 = ens.eta.copy()
        V0 = ens.vel.copy()

        def thermal_at(eta_arr):
            if self.kappa == 0.0:
                return 0.0, 0
            tmp = replace(ens, eta=np.mod(eta_arr, 1.0))
            nh = deposit_scalar_grid(tmp, axes).ravel()
            return self._thermal(nh)

        th0, _ = thermal_at(H0)
        met0 = self.cx.mapping.metric(H0.T)
        H1 = H0 + dt * np.einsum("kab,bk->ak", met0.DFinv, V0)
        V1 = V0.copy()

        for it in range(1, self.cfg.max_iter + 1):
            Hmid = 0.5 * (H0 + H1)
            Vmid = 0.5 * (V0 + V1)
            met = self.cx.mapping.metric(np.mod(Hmid, 1.0).T)
            if self.kappa != 0.0:
                mid_ens = replace(ens, eta=np.mod(Hmid, 1.0))
                nh_mid = deposit_scalar_grid(mid_ens, axes).ravel()
                c, events = self._pressure_coefficients(nh_mid)
                g = gather_gradient(mid_ens, axes, c.reshape(self._quad_shape))
                gradH = -self.kappa * w[None, :] * g
                th1, _ = thermal_at(H1)
            else:
                gradH = np.zeros_like(H0)
                th1, events = 0.0, 0
            dH = H1 - H0
            dV = V1 - V0
            den = float(np.sum(dH * dH) + np.sum(dV * dV))
            if den < 1e-28:
                fd = 0.0
            else:
                fd = (th1 - th0 - float(np.sum(gradH * dH))) / den
            barV = Vmid + fd * dV / w[None, :]
            barH = gradH + fd * dH
            H1n = H0 + dt * np.einsum("kab,bk->ak", met.DFinv, barV)
            V1n = V0 - dt * np.einsum("kba,bk->ak", met.DFinv, barH) / w[None, :]
            inc = max(float(np.max(np.abs(H1n - H1))), float(np.max(np.abs(V1n - V1))))
            H1, V1 = H1n, V1n
            stats.iterations = it
            stats.residual = inc
            stats.floor_events = events
            if inc <= self.cfg.tol:
                break
        else:
            raise SubstepError("xv", stats.iterations, stats.residual)
        ens.eta[...] = np.mod(H1, 1.0)
        ens.vel[...] = V1
        state.pos_version += 1
        stats.seconds = _time.perf_counter() - t0
        return stats

    def substep_xv(self, state, dt):
        if self.cfg.xv_mode == "hamiltonian_splitting":
            return self.substep_xv_hamiltonian(state, dt)
        return self.substep_xv_discrete_gradient(state, dt)

    # ------------------------------------------------------------------ step
    def step(self, state):
        """One full time step of the chosen composition; returns sub-step stats."""
        dt = self.cfg.dt
        if dt == 0.0:
            return []
        if self.cfg.composition == "lie":
            plan = [("bv", dt), ("bb", dt), ("vv", dt), ("xv", dt)]
        else:
            half = 0.5 * dt
            plan = [("bv", half), ("bb", half), ("vv", half), ("xv", dt),
                    ("vv", half), ("bb", half), ("bv", half)]
        runner = {"bv": self.substep_bv, "bb": self.substep_bb,
                  "vv": self.substep_vv, "xv": self.substep_xv}
        stats = [runner[name](state, h) for name, h in plan]
        state.time += dt
        return stats
