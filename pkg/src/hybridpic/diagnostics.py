"""Conservation monitors and wave observables.

Pure functions over simulation snapshots.  Fields are analyzed in their
physical components (proxies are pushed forward before any FFT); spectra
follow the convention that a wave cos(k z - w t) with k, w > 0 produces a
peak at positive (k, w).
"""

import csv
import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeSeries", "Spectrogram", "momentum", "weak_divergence",
    "weak_divergence_vector", "temperatures", "fourier_mode",
    "dispersion_spectrogram", "ridge_frequency", "cold_r_mode_omega",
    "growth_rate_fit", "write_timeseries", "read_csv_columns",
    "write_array", "read_array",
]


@dataclass
class TimeSeries:
    name: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or len(self.times) != len(self.values):
            raise ValueError("times and values must align")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("times must be strictly increasing")


@dataclass
class Spectrogram:
    k: np.ndarray
    omega: np.ndarray
    power: np.ndarray  # (len(k), len(omega)) magnitudes
    meta: dict = field(default_factory=dict)


def momentum(ensemble):
    """Total marker momentum: sum_k w_k v_k, a 3-vector."""
    return ensemble.vel @ ensemble.weights


def weak_divergence_vector(complexe, b):
    """Discrete weak divergence: grad^T M1 b (constant under the field steps)."""
    return complexe.G.T @ (complexe.mass.M1 @ np.asarray(b, dtype=float))


def weak_divergence(complexe, b):
    return float(np.max(np.abs(weak_divergence_vector(complexe, b))))


def temperatures(ensemble, parallel_axis=None):
    """Weighted per-axis velocity variances about the mean drift.

    For markers sampled from exp(-|v|^2 / vt^2) each component returns
    vt^2 / 2.  With ``parallel_axis`` given, returns (T_par, T_perp).
    """
    w = ensemble.weights
    wsum = float(np.sum(w))
    ubar = (ensemble.vel @ w) / wsum
    dv = ensemble.vel - ubar[:, None]
    T = (dv * dv) @ w / wsum
    if parallel_axis is None:
        return T
    perp = [d for d in range(3) if d != parallel_axis]
    return float(T[parallel_axis]), float(0.5 * (T[perp[0]] + T[perp[1]]))


def fourier_mode(times, frames, kx, ky, Lx, Ly):
    """Amplitude history sqrt(|Bx(kx,ky)|^2 + |By(kx,ky)|^2) of one 2D mode.

    ``frames`` holds physical field samples of shape (T, n1, n2, n3, 3) on a
    uniform grid; the third axis is averaged away before the transverse FFT.
    """
    frames = np.asarray(frames, dtype=float)
    sig = frames.mean(axis=3)  # (T, nx, ny, 3)
    nx, ny = sig.shape[1], sig.shape[2]
    mx = int(round(kx * Lx / (2.0 * np.pi))) % nx
    my = int(round(ky * Ly / (2.0 * np.pi))) % ny
    Fx = np.fft.fft2(sig[..., 0], axes=(1, 2))[:, mx, my] / (nx * ny)
    Fy = np.fft.fft2(sig[..., 1], axes=(1, 2))[:, mx, my] / (nx * ny)
    amp = np.sqrt(np.abs(Fx) ** 2 + np.abs(Fy) ** 2)
    return TimeSeries(name=f"bmode_{mx}_{my}", times=np.asarray(times), values=amp)


def _hann(n):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def dispersion_spectrogram(times, frames, length, axis=2, component="x+iy", window="hann"):
    """Space-time FFT magnitude over (k, omega) along one grid axis.

    The field is averaged over the two transverse axes (quasi-1D runs keep
    a couple of cells there).  ``component`` is one of "x", "y", "z" or
    "x+iy" (circular polarization; distinguishes propagation direction).
    A wave cos(k z - w t) peaks at (+k, +w) and (-k, -w).
    """
    times = np.asarray(times, dtype=float)
    frames = np.asarray(frames)
    dt = times[1] - times[0]
    if not np.allclose(np.diff(times), dt, rtol=1e-10, atol=1e-12):
        raise ValueError("spectrogram needs uniformly sampled history")
    spatial_axes = [1, 2, 3]
    keep = spatial_axes[axis]
    reduce_axes = tuple(a for a in spatial_axes if a != keep)
    if component == "x+iy":
        sig = frames[..., 0].mean(axis=reduce_axes) + 1j * frames[..., 1].mean(axis=reduce_axes)
    else:
        comp = {"x": 0, "y": 1, "z": 2}[component]
        sig = frames[..., comp].mean(axis=reduce_axes).astype(complex)
    T, N = sig.shape
    if window == "hann":
        sig = sig * _hann(T)[:, None]
    elif window is not None and window != "none":
        raise ValueError(f"unknown window {window!r}")
    F = np.fft.fft2(sig.T)  # (N, T): space index first
    k = 2.0 * np.pi * np.fft.fftfreq(N, d=length / N)
    om = -2.0 * np.pi * np.fft.fftfreq(T, d=dt)
    power = np.abs(np.fft.fftshift(F))
    k_axis = np.fft.fftshift(k)
    om_axis = np.fft.fftshift(om)
    order = np.argsort(om_axis, kind="stable")
    return Spectrogram(
        k=k_axis, omega=om_axis[order], power=power[:, order],
        meta={"length": float(length), "sample_dt": float(dt), "window": window or "none",
              "component": component},
    )


def ridge_frequency(spec, k_value, omega_min=0.0, omega_max=None):
    """Frequency of the strongest spectral peak at the grid k nearest k_value.

    Parabolic interpolation around the peak bin refines the estimate to a
    fraction of the omega resolution.
    """
    ik = int(np.argmin(np.abs(spec.k - k_value)))
    om = spec.omega
    sel = om > omega_min
    if omega_max is not None:
        sel &= om < omega_max
    idx = np.where(sel)[0]
    col = spec.power[ik, idx]
    j = int(np.argmax(col))
    i0 = idx[j]
    if 0 < i0 < len(om) - 1:
        ym, y0, yp = spec.power[ik, i0 - 1], spec.power[ik, i0], spec.power[ik, i0 + 1]
        denom = ym - 2.0 * y0 + yp
        shift = 0.0 if denom == 0.0 else 0.5 * (ym - yp) / denom
        shift = float(np.clip(shift, -0.5, 0.5))
        return float(om[i0] + shift * (om[1] - om[0]))
    return float(om[i0])


def cold_r_mode_omega(k):
    """Positive root of w^2 + k^2 w - k^2 = 0 (cold parallel branch).

    Tends to the Alfven limit w/k -> 1 as k -> 0.
    """
    k = np.asarray(k, dtype=float)
    return 0.5 * k * (np.sqrt(k * k + 4.0) - k)


def growth_rate_fit(series, window):
    """Least-squares slope of ln(values) over the time window (t0, t1)."""
    t0, t1 = window
    sel = (series.times >= t0) & (series.times <= t1)
    if np.count_nonzero(sel) < 2:
        raise ValueError("fit window contains fewer than two samples")
    vals = series.values[sel]
    if np.any(vals <= 0.0):
        raise ValueError("growth fit needs positive values")
    return float(np.polyfit(series.times[sel], np.log(vals), 1)[0])


# ----------------------------------------------------------------- file I/O
def write_timeseries(path, header, columns):
    """CSV (UTF-8, header row) with full round-trip float precision."""
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in zip(*cols):
            wr.writerow([repr(float(v)) for v in row])


def read_csv_columns(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = [[float(v) for v in row] for row in rd]
    data = np.asarray(rows)
    return header, {name: data[:, i] for i, name in enumerate(header)}


_ARRAY_MAGIC = b"HPA1"


def write_array(path, arr):
    """Binary container: magic, uint32 ndim, uint64 dims, float64 LE payload."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_ARRAY_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_array(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _ARRAY_MAGIC:
            raise ValueError(f"not an array container: bad magic {magic!r}")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        payload = fh.read()
    arr = np.frombuffer(payload, dtype="<f8")
    if arr.size != int(np.prod(shape)):
        raise ValueError("array container truncated")
    return arr.reshape(shape).copy()


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
