"""Time stepping of the vorticity transport equation omega_t + u . grad omega = 0.

Two schemes:

* ``rk4``: pseudo-spectral right-hand side, classical RK4, optional 2/3 dealiasing;
* ``semi-lagrangian``: backward characteristics with a midpoint-velocity predictor,
  periodic cubic-spline interpolation of the departure values.

Both re-project onto double-odd fields after every step when asked to.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time as _time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .errors import InvalidArgument, InvalidField, StepRejected
from .field import TorusGrid, VorticityField, derivative_multiplier, symmetrize, write_field

SCHEMES = ("rk4", "semi-lagrangian")


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    scheme: str = "rk4"
    dealias: bool = True
    t_end: float = 1.0
    symmetrize_every_step: bool = True
    cfl_max: float = 1.0
    max_retries: int = 4
    departure_iterations: int = 3

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidArgument(f"dt must be positive, got {self.dt!r}")
        if self.scheme not in SCHEMES:
            raise InvalidArgument(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.t_end >= 0:
            raise InvalidArgument("t_end must be non-negative")
        if self.max_retries < 0:
            raise InvalidArgument("max_retries must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class SpectralOps:
    """Cached multipliers for one grid."""

    _cache: dict[int, "SpectralOps"] = {}

    def __init__(self, grid: TorusGrid):
        # half spectrum of rfft2 along the second axis
        n = grid.n
        m = grid.wavenumbers
        mh = np.arange(n // 2 + 1, dtype=float)
        m1, m2 = np.meshgrid(m, mh, indexing="ij")
        k2 = np.pi**2 * (m1**2 + m2**2)
        k2[0, 0] = 1.0
        self.inv_lap = 1.0 / k2
        self.inv_lap[0, 0] = 0.0
        self.d1 = derivative_multiplier(grid, 1, 0)[:, : n // 2 + 1]
        f2 = np.where(mh == n // 2, 0.0, 1j * np.pi * mh)
        self.d2 = np.broadcast_to(f2, m1.shape)
        keep1 = np.abs(m) < n / 3.0
        keep2 = mh < n / 3.0
        self.mask = np.outer(keep1, keep2).astype(float)
        self.grid = grid

    @classmethod
    def of(cls, grid: TorusGrid) -> "SpectralOps":
        if grid.n not in cls._cache:
            cls._cache[grid.n] = cls(grid)
        return cls._cache[grid.n]


def rfft(v):
    return sfft.rfft2(v)


def irfft(c):
    n = c.shape[0]
    return sfft.irfft2(c, s=(n, n))


def velocity_arrays(omega: np.ndarray, grid: TorusGrid) -> tuple[np.ndarray, np.ndarray]:
    """(u1, u2) on the grid from vorticity node values."""
    sp = SpectralOps.of(grid)
    psi = rfft(omega) * sp.inv_lap
    return -irfft(psi * sp.d2), irfft(psi * sp.d1)


def cfl_number(u1: np.ndarray, u2: np.ndarray, dt: float, h: float) -> float:
    return float(dt * np.max(np.hypot(u1, u2)) / h)


def _rk4_rhs(w_hat, sp: SpectralOps, dealias: bool):
    if dealias:
        w_hat = w_hat * sp.mask
    psi = w_hat * sp.inv_lap
    u1 = -irfft(psi * sp.d2)
    u2 = irfft(psi * sp.d1)
    adv = u1 * irfft(w_hat * sp.d1) + u2 * irfft(w_hat * sp.d2)
    n_hat = rfft(adv)
    if dealias:
        n_hat *= sp.mask
    return -n_hat


def _step_rk4(omega, grid, dt, cfg):
    sp = SpectralOps.of(grid)
    w = rfft(omega)
    k1 = _rk4_rhs(w, sp, cfg.dealias)
    k2 = _rk4_rhs(w + 0.5 * dt * k1, sp, cfg.dealias)
    k3 = _rk4_rhs(w + 0.5 * dt * k2, sp, cfg.dealias)
    k4 = _rk4_rhs(w + dt * k3, sp, cfg.dealias)
    return irfft(w + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


def _interp(coeffs, idx1, idx2):
    return ndimage.map_coordinates(coeffs, [idx1, idx2], order=3, mode="grid-wrap", prefilter=False)


def _departure_values(omega, u1, u2, grid, dt, iterations):
    """omega at the departure points of the backward characteristics through the nodes."""
    n, h = grid.n, grid.h
    j = np.arange(n, dtype=float)
    i1, i2 = np.meshgrid(j, j, indexing="ij")
    c1 = ndimage.spline_filter(u1, order=3, mode="grid-wrap")
    c2 = ndimage.spline_filter(u2, order=3, mode="grid-wrap")
    s1 = dt * u1 / h
    s2 = dt * u2 / h
    for _ in range(iterations):
        m1, m2 = i1 - 0.5 * s1, i2 - 0.5 * s2
        s1 = dt * _interp(c1, m1, m2) / h
        s2 = dt * _interp(c2, m1, m2) / h
    cw = ndimage.spline_filter(omega, order=3, mode="grid-wrap")
    return _interp(cw, i1 - s1, i2 - s2)


def _step_sl(omega, grid, dt, cfg, u_now):
    u1, u2 = u_now
    pred = _departure_values(omega, u1, u2, grid, dt, cfg.departure_iterations)
    p1, p2 = velocity_arrays(pred, grid)
    return _departure_values(omega, 0.5 * (u1 + p1), 0.5 * (u2 + p2), grid, dt, cfg.departure_iterations)


def step(field: VorticityField, cfg: StepperConfig, dt: float | None = None) -> VorticityField:
    """Advance one step of size ``dt`` (default cfg.dt).

    Raises StepRejected when dt*max|u|/h exceeds cfg.cfl_max.
    """
    return _step(field, cfg, dt)[0]


def _step(field, cfg, dt=None):
    dt = cfg.dt if dt is None else dt
    grid = field.grid
    omega = field.values
    u_now = velocity_arrays(omega, grid)
    cfl = cfl_number(*u_now, dt, grid.h)
    if cfl > cfg.cfl_max:
        raise StepRejected(f"CFL {cfl:.3f} exceeds {cfg.cfl_max}", cfl=cfl)
    if cfg.scheme == "rk4":
        new = _step_rk4(omega, grid, dt, cfg)
    else:
        new = _step_sl(omega, grid, dt, cfg, u_now)
    if not np.all(np.isfinite(new)):
        raise InvalidField("step produced non-finite vorticity")
    out = VorticityField(grid, new, field.time + dt)
    if cfg.symmetrize_every_step:
        out = symmetrize(out)
    return out, cfl


def energy(field: VorticityField) -> float:
    """Kinetic energy integral of |u|^2 over the torus."""
    g = field.grid
    m1, m2 = np.meshgrid(g.wavenumbers, g.wavenumbers, indexing="ij")
    k2 = np.pi**2 * (m1**2 + m2**2)
    k2[0, 0] = np.inf
    return float(4.0 * np.sum(np.abs(field.spectral) ** 2 / k2))


def enstrophy(field: VorticityField) -> float:
    """Integral of omega^2 over the torus."""
    return float(4.0 * np.sum(np.abs(field.spectral) ** 2))


Observer = Callable[[VorticityField], object]


@dataclass
class RunResult:
    final: VorticityField
    records: dict[str, list] = dc_field(default_factory=dict)
    times: list[float] = dc_field(default_factory=list)
    manifest: dict = dc_field(default_factory=dict)
    wall_seconds: float = 0.0


def run(field0: VorticityField, cfg: StepperConfig, observers: dict[str, Observer] | None = None,
        observe_every: int = 1, checkpoint_dir=None, checkpoint_every: int = 0,
        step_observers: dict[str, Observer] | None = None) -> RunResult:
    """Integrate from field0.time to field0.time + cfg.t_end.

    ``observers`` are called at t=0, every ``observe_every`` base steps and at the
    final time; ``step_observers`` after every accepted base step (and at t=0).
    A rejected step is retried as 2, 4, ... substeps, at most cfg.max_retries times.
    """
    if observe_every < 1:
        raise InvalidArgument("observe_every must be >= 1")
    observers = dict(observers or {})
    step_observers = dict(step_observers or {})
    t0 = field0.time
    n_steps = max(0, math.ceil(cfg.t_end / cfg.dt - 1e-9))
    result = RunResult(field0)
    result.records = {name: [] for name in observers}
    field = symmetrize(field0) if cfg.symmetrize_every_step else field0
    e0, z0 = energy(field), enstrophy(field)
    max_cfl = 0.0
    rejections = 0
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    def observe(f):
        result.times.append(f.time)
        for name, obs in observers.items():
            result.records[name].append(obs(f))

    def checkpoint(f, k):
        if checkpoint_dir is not None and checkpoint_every and k % checkpoint_every == 0:
            write_field(f, checkpoint_dir / f"omega_{k:06d}.bin")

    start = _time.perf_counter()
    observe(field)
    for obs in step_observers.values():
        obs(field)
    checkpoint(field, 0)
    for k in range(1, n_steps + 1):
        t_target = t0 + min(k * cfg.dt, cfg.t_end)
        dt = t_target - field.time
        for attempt in range(cfg.max_retries + 1):
            sub = 2**attempt
            try:
                trial, cfl = field, 0.0
                for _ in range(sub):
                    trial, c = _step(trial, cfg, dt / sub)
                    cfl = max(cfl, c)
                break
            except StepRejected as exc:
                rejections += 1
                if attempt == cfg.max_retries:
                    raise StepRejected(f"step {k} rejected after {attempt + 1} attempts: {exc}", exc.cfl)
        field = VorticityField(field.grid, trial.values, t_target)
        max_cfl = max(max_cfl, cfl)
        for obs in step_observers.values():
            obs(field)
        if k % observe_every == 0 or k == n_steps:
            observe(field)
        checkpoint(field, k)
    result.wall_seconds = _time.perf_counter() - start
    result.final = field
    r1 = field.grid.reflect(field.values, 0)
    r2 = field.grid.reflect(field.values, 1)
    result.manifest = {
        "config": cfg.to_dict(),
        "n": field.grid.n,
        "t_start": t0,
        "t_final": field.time,
        "steps": n_steps,
        "rejected_steps": rejections,
        "max_cfl": max_cfl,
        "observations": len(result.times),
        "symmetry_defect": float(max(np.max(np.abs(field.values + r1)), np.max(np.abs(field.values + r2)))),
        "energy_relative_drift": (energy(field) - e0) / e0 if e0 > 0 else 0.0,
        "enstrophy_relative_drift": (enstrophy(field) - z0) / z0 if z0 > 0 else 0.0,
    }
    return result


def write_manifest(result: RunResult, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")
    return path
