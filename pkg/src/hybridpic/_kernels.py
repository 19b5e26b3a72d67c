"""Numba kernels for particle/grid transfer on tensor-product point grids.

Deposits accumulate into per-shard buffers that are merged in fixed order
by the callers, so results are bitwise reproducible for a fixed shard
count regardless of thread scheduling.  Gathers write disjoint
per-particle slots and are deterministic unconditionally.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _cardinal_scalar(p, x, work):
    """Uniform B-spline B_p at x (support (0, p+1)); work has length p+1."""
    if x <= 0.0 or x >= p + 1.0:
        return 0.0
    j0 = int(x)
    t = x - j0
    work[0] = 1.0
    for d in range(1, p + 1):
        work[d] = (1.0 - t) / d * work[d - 1]
        for j in range(d - 1, 0, -1):
            work[j] = ((t + j) / d) * work[j] + ((d + 1.0 - t - j) / d) * work[j - 1]
        work[0] *= t / d
    return work[j0]


@nb.njit(cache=True)
def _shape_periodic(k, h, mimg, d, work):
    acc = 0.0
    shift = 0.5 * (k + 1)
    for m in range(-mimg, mimg + 1):
        acc += _cardinal_scalar(k, (d - m) / h + shift, work)
    return acc / h


@nb.njit(cache=True)
def _dir_samples(axis, eta_d, k, h, r, mimg, idx, val, der, want_der, work):
    """Collect (index, value[, derivative]) of the shape factor on one axis.

    Loops over period images; duplicate indices are legitimate distinct
    slots and are accumulated correctly by the tensor loops downstream.
    Returns the number of filled slots.
    """
    U = axis.shape[0]
    shift = 0.5 * (k + 1)
    cnt = 0
    for m in range(-mimg, mimg + 1):
        lo = eta_d - r + m
        hi = eta_d + r + m
        if hi <= axis[0] or lo >= axis[U - 1]:
            continue
        a = np.searchsorted(axis, lo, side="right")
        b = np.searchsorted(axis, hi, side="left")
        for j in range(a, b):
            x = (axis[j] - eta_d - m) / h + shift
            v = _cardinal_scalar(k, x, work)
            if v == 0.0 and not want_der:
                continue
            idx[cnt] = j
            val[cnt] = v / h
            if want_der:
                dv = _cardinal_scalar(k - 1, x, work) - _cardinal_scalar(k - 1, x - 1.0, work)
                der[cnt] = dv / (h * h)
            cnt += 1
    return cnt


@nb.njit(cache=True, parallel=True)
def deposit_scalar(eta, coef, ax1, ax2, ax3, kdeg, hsup, rad, mimg, bounds, out):
    """out[s, i1, i2, i3] += coef_k * S(u - eta_k) per shard s."""
    nsh = bounds.shape[0] - 1
    L1 = (2 * mimg[0] + 1) * ax1.shape[0]
    L2 = (2 * mimg[1] + 1) * ax2.shape[0]
    L3 = (2 * mimg[2] + 1) * ax3.shape[0]
    kmax = max(kdeg[0], kdeg[1], kdeg[2]) + 1
    for s in nb.prange(nsh):
        i1 = np.empty(L1, np.int64)
        i2 = np.empty(L2, np.int64)
        i3 = np.empty(L3, np.int64)
        v1 = np.empty(L1)
        v2 = np.empty(L2)
        v3 = np.empty(L3)
        dummy = np.empty(1)
        work = np.empty(kmax + 1)
        for k in range(bounds[s], bounds[s + 1]):
            c = coef[k]
            if c == 0.0:
                continue
            n1 = _dir_samples(ax1, eta[0, k], kdeg[0], hsup[0], rad[0], mimg[0], i1, v1, dummy, False, work)
            n2 = _dir_samples(ax2, eta[1, k], kdeg[1], hsup[1], rad[1], mimg[1], i2, v2, dummy, False, work)
            n3 = _dir_samples(ax3, eta[2, k], kdeg[2], hsup[2], rad[2], mimg[2], i3, v3, dummy, False, work)
            for a in range(n1):
                va = c * v1[a]
                for b in range(n2):
                    vab = va * v2[b]
                    for d in range(n3):
                        out[s, i1[a], i2[b], i3[d]] += vab * v3[d]


@nb.njit(cache=True, parallel=True)
def deposit_vec3(eta, coef, ax1, ax2, ax3, kdeg, hsup, rad, mimg, bounds, out):
    """out[s, i1, i2, i3, :] += coef[:, k] * S(u - eta_k) per shard s."""
    nsh = bounds.shape[0] - 1
    L1 = (2 * mimg[0] + 1) * ax1.shape[0]
    L2 = (2 * mimg[1] + 1) * ax2.shape[0]
    L3 = (2 * mimg[2] + 1) * ax3.shape[0]
    kmax = max(kdeg[0], kdeg[1], kdeg[2]) + 1
    for s in nb.prange(nsh):
        i1 = np.empty(L1, np.int64)
        i2 = np.empty(L2, np.int64)
        i3 = np.empty(L3, np.int64)
        v1 = np.empty(L1)
        v2 = np.empty(L2)
        v3 = np.empty(L3)
        dummy = np.empty(1)
        work = np.empty(kmax + 1)
        for k in range(bounds[s], bounds[s + 1]):
            c0, c1, c2 = coef[0, k], coef[1, k], coef[2, k]
            n1 = _dir_samples(ax1, eta[0, k], kdeg[0], hsup[0], rad[0], mimg[0], i1, v1, dummy, False, work)
            n2 = _dir_samples(ax2, eta[1, k], kdeg[1], hsup[1], rad[1], mimg[1], i2, v2, dummy, False, work)
            n3 = _dir_samples(ax3, eta[2, k], kdeg[2], hsup[2], rad[2], mimg[2], i3, v3, dummy, False, work)
            for a in range(n1):
                va = v1[a]
                for b in range(n2):
                    vab = va * v2[b]
                    for d in range(n3):
                        w = vab * v3[d]
                        out[s, i1[a], i2[b], i3[d], 0] += w * c0
                        out[s, i1[a], i2[b], i3[d], 1] += w * c1
                        out[s, i1[a], i2[b], i3[d], 2] += w * c2


@nb.njit(cache=True, parallel=True)
def gather_vec3(eta, ax1, ax2, ax3, kdeg, hsup, rad, mimg, bounds, field, out):
    """out[:, k] = sum_j S(u_j - eta_k) field[j, :] over the tensor grid."""
    nsh = bounds.shape[0] - 1
    L1 = (2 * mimg[0] + 1) * ax1.shape[0]
    L2 = (2 * mimg[1] + 1) * ax2.shape[0]
    L3 = (2 * mimg[2] + 1) * ax3.shape[0]
    kmax = max(kdeg[0], kdeg[1], kdeg[2]) + 1
    for s in nb.prange(nsh):
        i1 = np.empty(L1, np.int64)
        i2 = np.empty(L2, np.int64)
        i3 = np.empty(L3, np.int64)
        v1 = np.empty(L1)
        v2 = np.empty(L2)
        v3 = np.empty(L3)
        dummy = np.empty(1)
        work = np.empty(kmax + 1)
        for k in range(bounds[s], bounds[s + 1]):
            n1 = _dir_samples(ax1, eta[0, k], kdeg[0], hsup[0], rad[0], mimg[0], i1, v1, dummy, False, work)
            n2 = _dir_samples(ax2, eta[1, k], kdeg[1], hsup[1], rad[1], mimg[1], i2, v2, dummy, False, work)
            n3 = _dir_samples(ax3, eta[2, k], kdeg[2], hsup[2], rad[2], mimg[2], i3, v3, dummy, False, work)
            g0 = 0.0
            g1 = 0.0
            g2 = 0.0
            for a in range(n1):
                va = v1[a]
                for b in range(n2):
                    vab = va * v2[b]
                    for d in range(n3):
                        w = vab * v3[d]
                        g0 += w * field[i1[a], i2[b], i3[d], 0]
                        g1 += w * field[i1[a], i2[b], i3[d], 1]
                        g2 += w * field[i1[a], i2[b], i3[d], 2]
            out[0, k] = g0
            out[1, k] = g1
            out[2, k] = g2


@nb.njit(cache=True, parallel=True)
def gather_grad(eta, ax1, ax2, ax3, kdeg, hsup, rad, mimg, bounds, field, out):
    """out[:, k] = sum_j field[j] * grad S(u_j - eta_k) (gradient in the offset)."""
    nsh = bounds.shape[0] - 1
    L1 = (2 * mimg[0] + 1) * ax1.shape[0]
    L2 = (2 * mimg[1] + 1) * ax2.shape[0]
    L3 = (2 * mimg[2] + 1) * ax3.shape[0]
    kmax = max(kdeg[0], kdeg[1], kdeg[2]) + 1
    for s in nb.prange(nsh):
        i1 = np.empty(L1, np.int64)
        i2 = np.empty(L2, np.int64)
        i3 = np.empty(L3, np.int64)
        v1 = np.empty(L1)
        v2 = np.empty(L2)
        v3 = np.empty(L3)
        d1 = np.empty(L1)
        d2 = np.empty(L2)
        d3 = np.empty(L3)
        work = np.empty(kmax + 1)
        for k in range(bounds[s], bounds[s + 1]):
            n1 = _dir_samples(ax1, eta[0, k], kdeg[0], hsup[0], rad[0], mimg[0], i1, v1, d1, True, work)
            n2 = _dir_samples(ax2, eta[1, k], kdeg[1], hsup[1], rad[1], mimg[1], i2, v2, d2, True, work)
            n3 = _dir_samples(ax3, eta[2, k], kdeg[2], hsup[2], rad[2], mimg[2], i3, v3, d3, True, work)
            g0 = 0.0
            g1 = 0.0
            g2 = 0.0
            for a in range(n1):
                for b in range(n2):
                    for d in range(n3):
                        f = field[i1[a], i2[b], i3[d]]
                        g0 += f * d1[a] * v2[b] * v3[d]
                        g1 += f * v1[a] * d2[b] * v3[d]
                        g2 += f * v1[a] * v2[b] * d3[d]
            out[0, k] = g0
            out[1, k] = g1
            out[2, k] = g2


@nb.njit(cache=True, parallel=True)
def coupling_rows(eta, B1, B2, B3, ax1, ax2, ax3, R1, R2, R3,
                  kdeg, hsup, mimg, g, bounds, out):
    """Per-particle projector coefficients of S_k * g on one component grid.

    out[k, m1, m2, m3] = sum_{a,b,c} R1[m1,a] R2[m2,b] R3[m3,c]
                         * S(u_a - eta1_k) S(u_b - eta2_k) S(u_c - eta3_k)
                         * g[(B1_k+a)%U1, (B2_k+b)%U2, (B3_k+c)%U3]
    """
    nsh = bounds.shape[0] - 1
    M1, W1 = R1.shape
    M2, W2 = R2.shape
    M3, W3 = R3.shape
    U1, U2, U3 = ax1.shape[0], ax2.shape[0], ax3.shape[0]
    kmax = max(kdeg[0], kdeg[1], kdeg[2]) + 1
    for s in nb.prange(nsh):
        work = np.empty(kmax + 1)
        S1 = np.empty(W1)
        S2 = np.empty(W2)
        S3 = np.empty(W3)
        i1 = np.empty(W1, np.int64)
        i2 = np.empty(W2, np.int64)
        i3 = np.empty(W3, np.int64)
        t1 = np.empty((M1, W2, W3))
        t2 = np.empty((M1, M2, W3))
        for k in range(bounds[s], bounds[s + 1]):
            for a in range(W1):
                i1[a] = (B1[k] + a) % U1
                S1[a] = _shape_periodic(kdeg[0], hsup[0], mimg[0], ax1[i1[a]] - eta[0, k], work)
            for b in range(W2):
                i2[b] = (B2[k] + b) % U2
                S2[b] = _shape_periodic(kdeg[1], hsup[1], mimg[1], ax2[i2[b]] - eta[1, k], work)
            for c in range(W3):
                i3[c] = (B3[k] + c) % U3
                S3[c] = _shape_periodic(kdeg[2], hsup[2], mimg[2], ax3[i3[c]] - eta[2, k], work)
            t1[:, :, :] = 0.0
            for a in range(W1):
                sa = S1[a]
                if sa == 0.0:
                    continue
                ga = g[i1[a]]
                for b in range(W2):
                    sb = S2[b]
                    if sb == 0.0:
                        continue
                    gab = ga[i2[b]]
                    sab = sa * sb
                    for c in range(W3):
                        gv = sab * S3[c] * gab[i3[c]]
                        if gv == 0.0:
                            continue
                        for m in range(M1):
                            t1[m, b, c] += R1[m, a] * gv
            for m in range(M1):
                for n in range(M2):
                    for c in range(W3):
                        acc = 0.0
                        for b in range(W2):
                            acc += R2[n, b] * t1[m, b, c]
                        t2[m, n, c] = acc
            for m in range(M1):
                for n in range(M2):
                    for o in range(M3):
                        acc = 0.0
                        for c in range(W3):
                            acc += R3[o, c] * t2[m, n, c]
                        out[k, m, n, o] = acc


@nb.njit(cache=True, parallel=True)
def density_at_points(eta, w, pts, kdeg, hsup, rad, mimg, out):
    """Marker density at arbitrary logical points (sum over all markers)."""
    M = pts.shape[0]
    K = eta.shape[1]
    kmax = max(kdeg[0], kdeg[1], kdeg[2]) + 1
    for m in nb.prange(M):
        work = np.empty(kmax + 1)
        acc = 0.0
        for k in range(K):
            d0 = pts[m, 0] - eta[0, k]
            s0 = _shape_periodic(kdeg[0], hsup[0], mimg[0], d0, work)
            if s0 == 0.0:
                continue
            d1 = pts[m, 1] - eta[1, k]
            s1 = _shape_periodic(kdeg[1], hsup[1], mimg[1], d1, work)
            if s1 == 0.0:
                continue
            d2 = pts[m, 2] - eta[2, k]
            s2 = _shape_periodic(kdeg[2], hsup[2], mimg[2], d2, work)
            acc += w[k] * s0 * s1 * s2
        out[m] = acc
