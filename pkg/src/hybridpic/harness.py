"""Declarative experiment runner: flat text configs, presets, run loop, outputs.

A config is a flat ``key = value`` document (strings, numbers, booleans,
space-separated triples).  Unknown keys are rejected so parameter typos
cannot silently corrupt the physics.  Presets carry the published
parameters of the six reference experiments verbatim, plus ``_desk``
variants scaled down (fewer markers, fewer steps, sometimes a coarser
grid or larger step) for laptop-class validation runs.
"""

import hashlib
import json
import os
import struct
import time as _time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .diagnostics import cold_r_mode_omega, file_sha256, write_array, write_timeseries
from .feec import DeRhamComplex, SplineGrid
from .geometry import Mapping, pushforward_vector
from .integrators import HybridIntegrator, IntegratorConfig, SimulationState
from .particles import CoefficientFilter, ParticleEnsemble, ShapeFunction, sample_maxwellian
from .projectors import CommutingProjectors


class ConfigError(ValueError):
    """Invalid experiment config; ``violations`` lists every problem found."""

    def __init__(self, violations):
        super().__init__("invalid config:\n  " + "\n  ".join(violations))
        self.violations = list(violations)


@dataclass(frozen=True)
class ExperimentConfig:
    mapping_kind: str = "cartesian"
    box: tuple = (1.0, 1.0, 1.0)
    alpha: float = 0.0
    cells: tuple = (4, 4, 4)
    degrees: tuple = (1, 1, 1)
    quad: tuple = None  # default: degrees + 1
    shape_degrees: tuple = (2, 2, 2)
    shape_supports: tuple = None  # default: cell sizes
    particles: int = 1000
    seed: int = 0
    shards: int = 4
    kappa: float = 1.0
    vt: tuple = (1.0, 1.0, 1.0)
    drift: tuple = (0.0, 0.0, 0.0)
    density_eps: float = 0.0
    density_k: float = 0.0
    density_axis: int = 2
    b_background: tuple = (0.0, 0.0, 0.0)
    pump_amplitude: float = 0.0
    pump_k: float = 0.0
    dt: float = 0.01
    steps: int = 100
    scheme: str = "splitting"  # or "discrete_gradient"
    composition: str = "lie"
    xv_splitting: str = "strang"
    filter_kind: str = "identity"
    filter_passes: int = 1
    tol: float = 1e-12
    max_iter: int = 200
    density_floor: float = 1e-3
    inner_tol: float = 1e-13
    gmres_restart: int = 30
    bv_refresh_b: bool = False
    diag_every: int = 1
    field_every: int = 0
    out_dir: str = ""


_TRIPLES_INT = {"cells", "degrees", "quad", "shape_degrees"}
_TRIPLES_FLOAT = {"box", "shape_supports", "vt", "drift", "b_background"}
_INTS = {"particles", "seed", "shards", "density_axis", "steps", "max_iter",
         "gmres_restart", "diag_every", "field_every", "filter_passes"}
_FLOATS = {"alpha", "kappa", "density_eps", "density_k", "pump_amplitude",
           "pump_k", "dt", "tol", "density_floor", "inner_tol"}
_BOOLS = {"bv_refresh_b"}
_STRINGS = {"mapping_kind", "scheme", "composition", "xv_splitting", "filter_kind", "out_dir"}
_ALL_KEYS = _TRIPLES_INT | _TRIPLES_FLOAT | _INTS | _FLOATS | _BOOLS | _STRINGS


def _parse_value(key, raw, violations):
    raw = raw.strip()
    try:
        if key in _TRIPLES_INT or key in _TRIPLES_FLOAT:
            parts = raw.split()
            if len(parts) != 3:
                raise ValueError("expected three values")
            conv = int if key in _TRIPLES_INT else float
            return tuple(conv(p) for p in parts)
        if key in _INTS:
            return int(raw)
        if key in _FLOATS:
            return float(raw)
        if key in _BOOLS:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        return raw
    except ValueError as exc:
        violations.append(f"{key}: cannot parse {raw!r} ({exc})")
        return None


def validate_config(cfg):
    """All constraint violations of a config, as human-readable strings."""
    v = []
    if cfg.mapping_kind not in ("cartesian", "colella"):
        v.append(f"mapping_kind: unknown kind {cfg.mapping_kind!r}")
    if any(not np.isfinite(x) or x <= 0 for x in cfg.box):
        v.append("box: lengths must be positive and finite")
    if cfg.mapping_kind == "colella" and abs(cfg.alpha) >= 1.0 / (2.0 * np.pi):
        v.append("alpha: colella mapping needs |alpha| < 1/(2*pi)")
    if cfg.mapping_kind == "cartesian" and cfg.alpha != 0.0:
        v.append("alpha: cartesian mapping takes alpha = 0")
    try:
        SplineGrid(cfg.cells, cfg.degrees)
    except ValueError as exc:
        v.append(f"cells/degrees: {exc}")
    if cfg.quad is not None and any(g < 1 for g in cfg.quad):
        v.append("quad: counts must be >= 1")
    if any(k < 0 for k in cfg.shape_degrees):
        v.append("shape_degrees: must be >= 0")
    if cfg.shape_supports is not None and any(not (0 < h < 1) for h in cfg.shape_supports):
        v.append("shape_supports: must lie in (0, 1)")
    if cfg.particles < 1:
        v.append("particles: need at least one marker")
    if cfg.shards < 1:
        v.append("shards: need at least one shard")
    if any(x < 0 for x in cfg.vt):
        v.append("vt: thermal speeds must be nonnegative")
    if not np.isfinite(cfg.kappa) or cfg.kappa < 0:
        v.append("kappa: must be finite and nonnegative")
    if abs(cfg.density_eps) >= 1.0:
        v.append("density_eps: |eps| < 1 keeps the density profile positive")
    if cfg.dt <= 0:
        v.append("dt: must be positive")
    if cfg.steps < 0:
        v.append("steps: must be >= 0")
    if cfg.scheme not in ("splitting", "discrete_gradient"):
        v.append(f"scheme: unknown scheme {cfg.scheme!r}")
    if cfg.scheme == "discrete_gradient" and min(cfg.shape_degrees) < 2:
        v.append("scheme: discrete_gradient requires shape degrees >= 2 in each direction")
    if cfg.scheme == "splitting" and cfg.mapping_kind != "cartesian":
        v.append("scheme: the explicit splitting streaming requires a cartesian mapping")
    if cfg.composition not in ("lie", "strang"):
        v.append(f"composition: unknown composition {cfg.composition!r}")
    if cfg.xv_splitting not in ("lie", "strang"):
        v.append(f"xv_splitting: unknown value {cfg.xv_splitting!r}")
    if cfg.filter_kind not in ("identity", "binomial"):
        v.append(f"filter_kind: unknown kind {cfg.filter_kind!r}")
    if cfg.filter_passes < 0:
        v.append("filter_passes: must be >= 0")
    if cfg.tol <= 0 or cfg.inner_tol <= 0:
        v.append("tol/inner_tol: must be positive")
    if cfg.density_floor < 0:
        v.append("density_floor: must be >= 0")
    if cfg.density_axis not in (0, 1, 2):
        v.append("density_axis: must be 0, 1 or 2")
    if cfg.diag_every < 1:
        v.append("diag_every: must be >= 1")
    if cfg.field_every < 0:
        v.append("field_every: must be >= 0")
    return v


def parse_config(text):
    """Parse and validate a flat key = value document."""
    violations = []
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            violations.append(f"line {lineno}: expected 'key = value', got {stripped!r}")
            continue
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _ALL_KEYS:
            violations.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            violations.append(f"line {lineno}: duplicate key {key!r}")
            continue
        val = _parse_value(key, raw, violations)
        if val is not None:
            values[key] = val
    if not values and not violations:
        violations.append("empty document; required keys include cells, degrees, dt, steps, particles")
    if violations:
        raise ConfigError(violations)
    cfg = ExperimentConfig(**values)
    violations = validate_config(cfg)
    if violations:
        raise ConfigError(violations)
    return cfg


def format_config(cfg):
    """Render a config back to the flat text format (round-trips via parse)."""
    lines = []
    for key, value in asdict(cfg).items():
        if value is None:
            continue
        if isinstance(value, tuple):
            lines.append(f"{key} = {' '.join(repr(v) if isinstance(v, float) else str(v) for v in value)}")
        elif isinstance(value, bool):
            lines.append(f"{key} = {str(value).lower()}")
        elif isinstance(value, float):
            lines.append(f"{key} = {value!r}")
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ presets
_FIVE_PI = 5.0 * np.pi

_PRESETS = {
    "finite_grid": dict(
        mapping_kind="cartesian", box=(1.0, 1.0, _FIVE_PI), cells=(4, 4, 32),
        degrees=(1, 1, 3), quad=(2, 2, 4), shape_degrees=(2, 2, 2),
        particles=200_000, kappa=1.0, vt=(0.1, 0.1, 0.1), drift=(0.0, 0.0, 0.1),
        b_background=(0.0, 0.0, 0.0), dt=0.005, steps=20_000, scheme="splitting",
    ),
    "landau": dict(
        mapping_kind="cartesian", box=(1.0, 1.0, _FIVE_PI), cells=(3, 3, 50),
        degrees=(1, 1, 3), quad=(2, 2, 2), shape_degrees=(2, 2, 2),
        particles=50_000, kappa=6.25, vt=(1.4142, 1.4142, 1.4142),
        density_eps=0.5, density_k=0.4, density_axis=2,
        b_background=(0.0, 0.0, 0.0), dt=0.005, steps=1_000_000, scheme="splitting",
    ),
    "r_mode": dict(
        mapping_kind="cartesian", box=(1.0, 1.0, 64.0), cells=(3, 3, 128),
        degrees=(1, 1, 4), quad=(2, 2, 4), shape_degrees=(2, 2, 2),
        particles=500_000, kappa=1.0, vt=(1.0, 1.0, 1.0),
        b_background=(0.0, 0.0, 1.0), dt=0.005, steps=8_000, scheme="splitting",
        field_every=4,
    ),
    "bernstein": dict(
        mapping_kind="cartesian", box=(50.0, 1.0, 1.0), cells=(200, 3, 3),
        degrees=(4, 1, 1), quad=(5, 2, 2), shape_degrees=(2, 2, 2),
        particles=60_000, kappa=0.09, vt=(0.2121, 0.2121, 0.2121),
        b_background=(0.0, 0.0, 1.0), dt=0.01, steps=8_000, scheme="splitting",
        field_every=4,
    ),
    "mirror": dict(
        mapping_kind="cartesian", box=(20.0, 20.0, 2.0), cells=(20, 20, 2),
        degrees=(1, 1, 1), quad=(2, 2, 2), shape_degrees=(2, 2, 2),
        particles=250_000, kappa=1.0, vt=(2.449489742783178, 3.872983346207417, 3.872983346207417),
        b_background=(1.0, 0.0, 0.0), dt=0.01, steps=5_000, scheme="splitting",
        field_every=10,
    ),
    "parametric": dict(
        mapping_kind="cartesian", box=(128.0, 1.0, 1.0), cells=(500, 3, 3),
        degrees=(3, 1, 1), quad=(4, 2, 2), shape_degrees=(2, 2, 2),
        particles=1_000_000, kappa=1.0, vt=(0.5, 0.5, 0.5),
        b_background=(1.0, 0.0, 0.0), pump_amplitude=1.0, pump_k=0.196,
        dt=0.01, steps=15_000, scheme="splitting", field_every=10,
    ),
}

_DESK_OVERRIDES = {
    "finite_grid": dict(particles=10_000, dt=0.02, steps=5_000, quad=(2, 2, 4)),
    "landau": dict(particles=10_000, steps=1_000),
    "r_mode": dict(particles=10_000, cells=(3, 3, 64), dt=0.02, steps=4_000, field_every=2),
    "bernstein": dict(particles=8_000, steps=400),
    "mirror": dict(particles=50_000, dt=0.02, steps=1_700, field_every=5),
    "parametric": dict(particles=20_000, cells=(128, 3, 3), dt=0.02, steps=3_000, field_every=5),
}


def preset(name, desk=False):
    """A reference experiment config; desk variants are CI-sized."""
    if name not in _PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    params = dict(_PRESETS[name])
    if desk:
        params.update(_DESK_OVERRIDES[name])
        params["seed"] = 20260809
    cfg = ExperimentConfig(**params)
    violations = validate_config(cfg)
    if violations:
        raise ConfigError(violations)
    return cfg


# ------------------------------------------------------------- construction
def build_mapping(cfg):
    return Mapping(kind=cfg.mapping_kind, L=cfg.box, alpha=cfg.alpha)


def _density_profile(cfg):
    if cfg.density_eps == 0.0:
        return None
    eps, k, ax = cfg.density_eps, cfg.density_k, cfg.density_axis
    return lambda x: 1.0 + eps * np.cos(k * x[..., ax])


def _pump_field(cfg):
    """Circularly polarized transverse pump delta-b(x) riding on b_background."""
    if cfg.pump_amplitude == 0.0:
        return None
    amp, k = cfg.pump_amplitude, cfg.pump_k

    def db(x):
        phase = k * x[..., 0]
        out = np.zeros(x.shape)
        out[..., 1] = -amp * np.sin(phase)
        out[..., 2] = amp * np.cos(phase)
        return out

    return db


def initial_field_coefficients(cfg, mapping, projectors):
    """Project the physical initial B (background + pump) into V1."""
    bbg = np.asarray(cfg.b_background, dtype=float)
    pump = _pump_field(cfg)

    def proxy(pts):
        x = mapping(pts)
        B = np.broadcast_to(bbg, x.shape).copy()
        if pump is not None:
            B += pump(x)
        DF = mapping.jacobian(pts)
        return np.einsum("...ac,...a->...c", DF, B)

    return projectors.project_1form(proxy)


def build_simulation(cfg):
    """Construct (complex, projectors, integrator, state) from a config."""
    mapping = build_mapping(cfg)
    grid = SplineGrid(cfg.cells, cfg.degrees)
    complexe = DeRhamComplex(grid, mapping, cfg.quad)
    projectors = CommutingProjectors(grid)
    supports = cfg.shape_supports if cfg.shape_supports is not None else grid.h
    shape = ShapeFunction(degrees=cfg.shape_degrees, supports=supports)
    drift_field = None
    pump = _pump_field(cfg)
    if pump is not None:
        w0 = float(cold_r_mode_omega(cfg.pump_k))
        scale = -w0 / cfg.pump_k
        drift_field = lambda x: scale * pump(x)
    ensemble = sample_maxwellian(
        mapping, shape, cfg.particles, cfg.seed, vt=cfg.vt, drift=cfg.drift,
        density=_density_profile(cfg), drift_field=drift_field, shards=cfg.shards,
    )
    b0 = initial_field_coefficients(cfg, mapping, projectors)
    icfg = IntegratorConfig(
        dt=cfg.dt, tol=cfg.tol, max_iter=cfg.max_iter, density_floor=cfg.density_floor,
        xv_mode=("hamiltonian_splitting" if cfg.scheme == "splitting" else "discrete_gradient"),
        composition=cfg.composition, xv_splitting=cfg.xv_splitting,
        bv_refresh_b=cfg.bv_refresh_b, inner_tol=cfg.inner_tol,
        gmres_restart=cfg.gmres_restart,
    )
    coeff_filter = CoefficientFilter(kind=cfg.filter_kind, passes=cfg.filter_passes)
    integ = HybridIntegrator(complexe, shape, cfg.kappa, icfg,
                             projectors=projectors, coeff_filter=coeff_filter)
    state = SimulationState(ensemble=ensemble, b=b0)
    return complexe, projectors, integ, state


# ---------------------------------------------------------------- field I/O
def sample_field_frame(complexe, b):
    """Physical B on the cell-center tensor grid, shape (n1, n2, n3, 3)."""
    grid = complexe.grid
    axes = [(np.arange(n) + 0.5) / n for n in grid.cells]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    proxy = complexe.evaluate(b, 1, pts)
    met = complexe.mapping.metric(pts)
    return pushforward_vector(met, proxy, 1)


# -------------------------------------------------------------- checkpoints
_CKPT_MAGIC = b"HPCK"
_CKPT_VERSION = 1


class ChecksumError(ValueError):
    pass


def write_checkpoint(path, state):
    ens = state.ensemble
    K = ens.K
    body = bytearray()
    body += struct.pack("<QQQd", K, ens.seed, ens.shards, state.time)
    body += struct.pack("<3Q", *ens.shape.degrees)
    body += struct.pack("<3d", *ens.shape.supports)
    body += struct.pack("<Q", state.b.size)
    for arr in (ens.eta, ens.vel, ens.weights, state.b):
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    digest = hashlib.sha256(bytes(body)).digest()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(digest)
        fh.write(bytes(body))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"not a checkpoint: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        digest = fh.read(32)
        body = fh.read()
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checkpoint payload does not match its checksum")
    off = 0
    K, seed, shards, t = struct.unpack_from("<QQQd", body, off)
    off += 32
    sdeg = struct.unpack_from("<3Q", body, off)
    off += 24
    ssup = struct.unpack_from("<3d", body, off)
    off += 24
    (N1,) = struct.unpack_from("<Q", body, off)
    off += 8

    def take(count):
        nonlocal off
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=off).copy()
        off += 8 * count
        return arr

    eta = take(3 * K).reshape(3, K)
    vel = take(3 * K).reshape(3, K)
    w = take(K)
    b = take(N1)
    shape = ShapeFunction(degrees=tuple(int(d) for d in sdeg), supports=ssup)
    ens = ParticleEnsemble(eta=eta, vel=vel, weights=w, shape=shape,
                           seed=int(seed), shards=int(shards))
    return SimulationState(ensemble=ens, b=b, time=float(t))


# --------------------------------------------------------------------- run
@dataclass
class RunManifest:
    config: dict
    version: str
    steps_run: int
    workers: int
    shards: int
    walltime: dict
    iterations: dict
    floor_events: int
    outputs: dict
    aborted: str = ""

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def default_out_dir(cfg):
    return cfg.out_dir or os.environ.get("HYBRIDPIC_OUT", "hybridpic_out")


def run(cfg, workers=None, out_dir=None, state=None, hooks=None):
    """Execute a configured experiment; write diagnostics, fields, checkpoint.

    ``state`` resumes from a checkpointed SimulationState (remaining steps
    are inferred from its clock).  ``hooks`` is an optional callable
    ``hooks(step_index, state, stats)`` fired after every step.
    """
    import numba

    if workers:
        numba.set_num_threads(int(workers))
    out = out_dir or default_out_dir(cfg)
    os.makedirs(out, exist_ok=True)

    complexe, projectors, integ, fresh = build_simulation(cfg)
    if state is None:
        state = fresh
        first_step = 0
    else:
        first_step = int(round(state.time / cfg.dt))
        if first_step > cfg.steps:
            raise ValueError("checkpoint is already past the configured step count")

    from .diagnostics import momentum, weak_divergence_vector

    diag_rows = []
    frame_times, frames = [], []
    wd0 = weak_divergence_vector(complexe, state.b)
    walltime = {}
    iterations = {}
    floor_total = 0
    substep_names = ("bv", "bb", "vv", "xv")

    def record(step_index, stats):
        nonlocal floor_total
        agg = {name: [0, 0] for name in substep_names}
        fl = 0
        for s in stats:
            agg[s.name][0] += s.iterations
            agg[s.name][1] += s.inner_iterations
            fl += s.floor_events
            walltime[s.name] = walltime.get(s.name, 0.0) + s.seconds
            it_tot, it_max = iterations.get(s.name, (0, 0))
            iterations[s.name] = (it_tot + s.iterations, max(it_max, s.iterations))
        floor_total += fl
        rep = integ.hamiltonian(state)
        p = momentum(state.ensemble)
        wd = float(np.max(np.abs(weak_divergence_vector(complexe, state.b) - wd0)))
        diag_rows.append([
            state.time, rep.total, rep.kinetic, rep.magnetic, rep.thermal,
            p[0], p[1], p[2], wd, float(fl + rep.floor_events),
            float(agg["bv"][0]), float(agg["bv"][1]), float(agg["bb"][0]),
            float(agg["bb"][1]), float(agg["vv"][0]), float(agg["xv"][0]),
        ])

    def capture_frame():
        frame_times.append(state.time)
        frames.append(sample_field_frame(complexe, state.b))

    record(first_step, [])
    if cfg.field_every:
        capture_frame()

    aborted = ""
    t_start = _time.perf_counter()
    step_index = first_step
    try:
        for step_index in range(first_step + 1, cfg.steps + 1):
            stats = integ.step(state)
            if step_index % cfg.diag_every == 0 or step_index == cfg.steps:
                record(step_index, stats)
            if cfg.field_every and step_index % cfg.field_every == 0:
                capture_frame()
            if hooks is not None:
                hooks(step_index, state, stats)
    except Exception as exc:  # noqa: BLE001 - recorded in the manifest, then re-raised
        aborted = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        total = _time.perf_counter() - t_start
        header = ["t", "energy_total", "energy_kinetic", "energy_magnetic",
                  "energy_thermal", "momentum_x", "momentum_y", "momentum_z",
                  "weak_div_drift", "floor_events", "bv_iterations",
                  "bv_inner_iterations", "bb_iterations", "bb_inner_iterations",
                  "vv_iterations", "xv_iterations"]
        outputs = {}
        diag_path = os.path.join(out, "diagnostics.csv")
        cols = list(zip(*diag_rows)) if diag_rows else [[] for _ in header]
        write_timeseries(diag_path, header, cols)
        outputs["diagnostics.csv"] = file_sha256(diag_path)
        if frames:
            fpath = os.path.join(out, "field_frames.bin")
            write_array(fpath, np.asarray(frames))
            tpath = os.path.join(out, "field_times.bin")
            write_array(tpath, np.asarray(frame_times))
            outputs["field_frames.bin"] = file_sha256(fpath)
            outputs["field_times.bin"] = file_sha256(tpath)
        ck_path = os.path.join(out, "final_checkpoint.bin")
        write_checkpoint(ck_path, state)
        outputs["final_checkpoint.bin"] = file_sha256(ck_path)
        import numba as _nb

        manifest = RunManifest(
            config={k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
            version=__version__,
            steps_run=step_index - first_step if not aborted else step_index - first_step - 1,
            workers=_nb.get_num_threads(),
            shards=cfg.shards,
            walltime={**walltime, "total": total},
            iterations={k: list(v) for k, v in iterations.items()},
            floor_events=floor_total,
            outputs=outputs,
            aborted=aborted,
        )
        with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
            fh.write(manifest.to_json())
    return manifest
