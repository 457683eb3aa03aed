"""Scenario runner: build initial data, evolve, trace, bound, diagnose, emit.

Config files are INI (see README for the schema); a run manifest (JSON) written
by ``run`` is accepted in place of the INI file and reproduces the run.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import math
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import gradient_ode as go
from . import trajectories as tr
from .errors import ConfigError, DoubleOddError, InvalidArgument
from .evolution import StepperConfig, run, write_manifest
from .field import TorusGrid, VorticityField, read_field, symmetrize

CHECKS = ("representation", "exit_time", "distance", "entry_height", "xi_bounds", "gradient_consistency",
          "envelope", "inequality_fits", "q_lower_bound", "feeding")

# tolerances of the run checks
REPRESENTATION_TOL = 1e-5
DISTANCE_TOL = 1e-6
XI_BOUND_RTOL = 1e-6
GRADIENT_TOL = 1e-2
HALVING_TOL = 1e-8


@dataclass
class ScenarioConfig:
    n: int = 128
    scheme: str = "rk4"
    dt: float = 1e-3
    t_end: float = 0.1
    initial: str = "eigenfunction"  # eigenfunction | bump | file
    m_target: float = 0.64
    width: float = 0.0  # bump collar width; 0 = as wide as the margin allows
    initial_path: str = ""
    delta1: float = 0.15
    delta2: float = 0.2
    delta3: float = 0.1
    alpha: float = 0.2
    min_box_cells: float = 8
    A: float = 1.0
    beta0: float = 0.0
    rho: float = 0.1
    feeding_R: str = "auto"
    tracer_layout: str = "feeding-edge"
    tracer_count: int = 4
    observe_every: int = 10
    checkpoint_every: int = 0
    fit_samples: int = 200
    gammas: tuple = (0.5, 0.5, 0.5)
    checks: tuple = CHECKS
    output: str = "out"
    seed: int = 0

    SECTIONS = {
        "grid": ("n",),
        "time": ("scheme", "dt", "t_end"),
        "initial": ("initial", "m_target", "width", "initial_path"),
        "box": ("delta1", "delta2", "delta3", "alpha", "min_box_cells"),
        "hyper": ("A", "beta0", "rho"),
        "feeding": ("feeding_R",),
        "tracers": ("tracer_layout", "tracer_count"),
        "observe": ("observe_every", "checkpoint_every", "fit_samples", "gammas", "checks"),
        "run": ("output", "seed"),
    }

    def __post_init__(self):
        self.validate()

    def validate(self):
        n = self.n
        if n < 16 or n & (n - 1):
            raise ConfigError(f"n must be a power of two >= 16, got {n}")
        try:
            self.box
            self.stepper
            self.hyper
        except InvalidArgument as exc:
            raise ConfigError(str(exc)) from exc
        if self.initial not in ("eigenfunction", "bump", "file"):
            raise ConfigError(f"unknown initial datum {self.initial!r}")
        if self.initial == "bump" and not 0 < self.m_target < 1:
            raise ConfigError("m_target must lie in (0, 1)")
        if self.initial == "file" and not self.initial_path:
            raise ConfigError("initial = file needs initial_path")
        if self.feeding_R != "auto":
            try:
                if float(self.feeding_R) < 0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"feeding R must be 'auto' or a non-negative number, got {self.feeding_R!r}")
        if self.tracer_layout not in ("grid", "feeding-edge") or self.tracer_count < 1:
            raise ConfigError("tracer layout must be grid|feeding-edge with count >= 1")
        if self.observe_every < 1 or self.checkpoint_every < 0 or self.fit_samples < 2:
            raise ConfigError("observe_every >= 1, checkpoint_every >= 0 and fit_samples >= 2 required")
        unknown = set(self.checks) - set(CHECKS)
        if unknown:
            raise ConfigError(f"unknown checks {sorted(unknown)}")

    @property
    def box(self) -> tr.BoxGeometry:
        return tr.BoxGeometry(self.delta1, self.delta2, self.delta3, self.alpha)

    @property
    def stepper(self) -> StepperConfig:
        return StepperConfig(dt=self.dt, scheme=self.scheme, t_end=self.t_end)

    @property
    def hyper(self) -> dg.HyperParams:
        return dg.HyperParams(self.A, self.beta0, self.rho)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gammas"] = list(self.gammas)
        d["checks"] = list(self.checks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            kw[k] = _coerce(k, v, names[k].default)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".json":
            data = json.loads(text)
            return cls.from_dict(data.get("scenario", data))
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp.read_string(text)
        flat = {}
        for sec in cp.sections():
            if sec not in cls.SECTIONS:
                raise ConfigError(f"unknown section [{sec}]")
            for k, v in cp.items(sec):
                if k not in cls.SECTIONS[sec]:
                    raise ConfigError(f"unknown key {k!r} in [{sec}]")
                flat[k] = v
        return cls.from_dict(flat)

    def to_ini(self) -> str:
        d = self.to_dict()
        lines = []
        for sec, keys in self.SECTIONS.items():
            lines.append(f"[{sec}]")
            for k in keys:
                v = d[k]
                lines.append(f"{k} = {', '.join(map(str, v)) if isinstance(v, list) else v}")
            lines.append("")
        return "\n".join(lines)


def _coerce(key, value, default):
    try:
        if isinstance(default, tuple):
            items = value if isinstance(value, (list, tuple)) else [s.strip() for s in str(value).split(",") if s.strip()]
            return tuple(float(s) for s in items) if key == "gammas" else tuple(str(s) for s in items)
        if isinstance(default, bool):
            return str(value).lower() in ("1", "true", "yes")
        if isinstance(default, int) and not isinstance(default, bool):
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


# --------------------------------------------------------------------------- initial data


def smoothstep7(u):
    """C^3 ramp from 0 (u <= 0) to 1 (u >= 1)."""
    u = np.clip(u, 0.0, 1.0)

    def low(v):
        return v**4 * (35 - 84 * v + 70 * v**2 - 20 * v**3)

    # evaluate the upper half through the symmetry S(u) = 1 - S(1 - u): no overshoot past 1
    return np.where(u <= 0.5, low(u), 1.0 - low(1.0 - u))


def bump_profile(s, m_target: float, width: float = 0.0):
    """Odd, 2-periodic profile equal to 1 on the middle sqrt(m_target) of [0, 1]."""
    if not 0 < m_target < 1:
        raise InvalidArgument(f"m_target must lie in (0, 1), got {m_target}")
    c0 = 0.5 * (1 - math.sqrt(m_target))
    w = c0 if width <= 0 else width
    if w > c0:
        raise InvalidArgument(f"collar width {w} exceeds the margin {c0}")
    s = np.asarray(s, dtype=float)
    s = (s + 1.0) % 2.0 - 1.0
    r = np.abs(s)
    r = np.minimum(r, 1.0 - r)
    return np.sign(s) * smoothstep7((r - (c0 - w)) / w)


def build_initial(cfg: ScenarioConfig) -> VorticityField:
    grid = TorusGrid(cfg.n)
    if cfg.initial == "eigenfunction":
        return VorticityField.from_function(grid, lambda a, b: np.sin(np.pi * a) * np.sin(np.pi * b))
    if cfg.initial == "bump":
        if cfg.m_target >= 1:
            raise InvalidArgument("m_target must be < 1")
        return VorticityField.from_function(
            grid, lambda a, b: bump_profile(a, cfg.m_target, cfg.width) * bump_profile(b, cfg.m_target, cfg.width))
    f = read_field(cfg.initial_path)
    if f.grid.n != cfg.n:
        raise ConfigError(f"file grid n={f.grid.n} differs from config n={cfg.n}")
    return f


# --------------------------------------------------------------------------- scenario


def _finite(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _check(passed: bool, enabled: bool, **info) -> dict:
    return {"passed": bool(passed), "enabled": bool(enabled), **{k: _finite(v) for k, v in info.items()}}


def converged_path(traj, series, box, tol: float = HALVING_TOL, spacing: float = 2e-3, max_halvings: int = 6):
    """Coefficient path and Gronwall bounds, re-tracing with halved sample spacing until the
    bounds change by at most ``tol`` (relative) when every other node is dropped."""
    for k in range(max_halvings + 1):
        coeffs = go.sample_coefficients(traj)
        xi0 = coeffs.meta["grad_field"][0]
        data = go.xi_bounds(coeffs, xi0)
        if data.halving_difference <= tol or series is None or k == max_halvings:
            break
        spacing *= 0.5
        traj = tr.trace(series, traj.start, box, t_start=traj.t_start, max_spacing=spacing)
    return coeffs, xi0, data, spacing


def trajectory_checks(trajs, series, box, beta, dt, xi_rtol=XI_BOUND_RTOL, out_dir: Path | None = None) -> dict:
    """Per-trajectory checks; returns aggregated results and per-trajectory rows."""
    rows = []
    agg = {"representation": 0.0, "exit_violations": 0, "distance": -math.inf, "entry_height": -math.inf,
           "xi_violations": 0, "xi_worst_ratio": 0.0, "gradient": 0.0, "closed": 0, "entered": 0,
           "halving": 0.0}
    for k, traj in enumerate(trajs):
        row = {"index": k, "start": list(traj.start), "status": traj.status, "T0": traj.T0, "T1": traj.T1,
               "Te": traj.Te}
        if out_dir is not None:
            tr.write_trajectory_csv(traj, out_dir / f"trajectory_{k:03d}.csv")
        rep = tr.verify_representation(traj)
        row["representation_residual"] = rep
        if traj.is_closed:
            agg["closed"] += 1
            agg["representation"] = max(agg["representation"], rep)
            row["distance"] = tr.distance_estimate_check(traj, box)
            agg["distance"] = max(agg["distance"], row["distance"])
        if beta is not None and beta > 0:
            ex = tr.exit_time_bound_check(traj, beta, tol=2 * dt)
            row["exit_ok"] = ex.ok
            row["residence"] = ex.residence
            agg["exit_violations"] += int(not ex.ok)
        if traj.T0 is not None and np.sum(traj.in_box_mask()) >= 3:
            agg["entered"] += 1
            row["entry_height"] = tr.entry_height_check(traj, box)
            agg["entry_height"] = max(agg["entry_height"], row["entry_height"])
            coeffs, xi0, data, spacing = converged_path(traj, series, box)
            xi = go.integrate_exact(coeffs, xi0)
            row["sample_spacing"] = spacing
            v = data.violations(xi, rtol=xi_rtol)
            row["xi_violations"] = v["xi1"] + v["xi2"]
            row["xi_worst_ratio"] = max(v["xi1_worst_ratio"], v["xi2_worst_ratio"])
            row["gradient_consistency"] = go.gradient_consistency(coeffs, xi)
            row["halving_difference"] = data.halving_difference
            agg["xi_violations"] += row["xi_violations"]
            agg["xi_worst_ratio"] = max(agg["xi_worst_ratio"], row["xi_worst_ratio"])
            agg["gradient"] = max(agg["gradient"], row["gradient_consistency"])
            agg["halving"] = max(agg["halving"], data.halving_difference)
            if out_dir is not None:
                go.write_gronwall_csv(data, xi, out_dir / f"gronwall_{k:03d}.csv")
        rows.append({key: _finite(val) if isinstance(val, float) else val for key, val in row.items()})
    return {"aggregate": agg, "rows": rows}


def inequality_fits(field, box, samples: int, seed: int, gammas) -> dict:
    rng = np.random.default_rng(seed)
    pts = dg.sample_box_points(box, samples, rng)
    fits = {"q_upper": dg.check_q_upper_bound(field, box, pts)}
    fits.update(dg.check_coefficient_bounds(field, box, pts, gammas))
    return fits


def run_scenario(cfg: ScenarioConfig, out_dir=None, log=print) -> tuple[int, dict]:
    """Full pipeline; returns (exit code, checks dict). Artifacts go to out_dir."""
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    box, hyper, stepper = cfg.box, cfg.hyper, cfg.stepper
    field0 = symmetrize(build_initial(cfg))
    dg.check_resolution(box, field0.grid.h, cfg.min_box_cells)
    crit = dg.measure_m(field0, region_radius=cfg.rho) if cfg.initial != "eigenfunction" else None

    extent = 1.25 * max(box.delta1 + box.delta3, box.delta2, cfg.rho)
    series = tr.FieldSeries()
    observers = {"growth": lambda f: dg.growth_observer(f, box, hyper, min_cells=cfg.min_box_cells)}
    result = run(field0, stepper, observers=observers, observe_every=cfg.observe_every,
                 checkpoint_dir=out / "checkpoints" if cfg.checkpoint_every else None,
                 checkpoint_every=cfg.checkpoint_every,
                 step_observers={"series": series.recorder(extent)})
    records = result.records["growth"]
    log(f"evolved to t={result.final.time:.4g} in {result.wall_seconds:.1f}s, {len(records)} records")
    dg.write_diagnostics_csv(records, out / "diagnostics.csv")

    t0, t1 = series.t_start, series.t_end
    beta = series.region_min_q(box.D, t0, t1) if t1 > t0 else None
    if crit is not None:
        crit.beta0_measured = series.region_min_q(((0.0, cfg.rho), (0.0, cfg.rho)), t0, t1) if t1 > t0 else None

    enabled = set(cfg.checks)
    checks = {}
    if t1 > t0:
        starts = tr.seed_tracers(box, cfg.tracer_layout, cfg.tracer_count)
        trajs = tr.trace_many(series, starts, box)
        tc = trajectory_checks(trajs, series, box, beta, cfg.dt, out_dir=out)
        agg = tc["aggregate"]
        checks["representation"] = _check(agg["representation"] < REPRESENTATION_TOL, "representation" in enabled,
                                          worst=agg["representation"], closed=agg["closed"])
        checks["exit_time"] = _check(beta is not None and beta > 0 and agg["exit_violations"] == 0,
                                     "exit_time" in enabled, beta=beta, violations=agg["exit_violations"])
        checks["distance"] = _check(agg["distance"] <= DISTANCE_TOL, "distance" in enabled, worst=agg["distance"])
        checks["entry_height"] = _check(agg["entry_height"] <= DISTANCE_TOL, "entry_height" in enabled,
                                     worst=agg["entry_height"])
        checks["xi_bounds"] = _check(agg["xi_violations"] == 0, "xi_bounds" in enabled,
                                     violations=agg["xi_violations"], worst_ratio=agg["xi_worst_ratio"],
                                     halving_difference=agg["halving"])
        checks["gradient_consistency"] = _check(agg["gradient"] < GRADIENT_TOL, "gradient_consistency" in enabled,
                                                worst=agg["gradient"], entered=agg["entered"])
        (out / "trajectories.json").write_text(json.dumps(tc["rows"], indent=2) + "\n")

    fits = {"initial": inequality_fits(field0, box, cfg.fit_samples, cfg.seed, cfg.gammas),
            "final": inequality_fits(result.final, box, cfg.fit_samples, cfg.seed, cfg.gammas)}
    flat = [f for group in fits.values() for f in group.values()]
    checks["inequality_fits"] = _check(all(f.stable and math.isfinite(f.C) for f in flat), "inequality_fits" in enabled,
                                       worst_stability=min(f.stability for f in flat))
    fits_out = {k: {name: dg.fit_to_dict(f) for name, f in group.items()} for k, group in fits.items()}
    if len(records) >= 20:
        env = dg.exponential_envelope_fit(records)
        fits_out["envelope"] = dg.fit_to_dict(env)
        checks["envelope"] = _check(env.passes, "envelope" in enabled, C1=env.C1, C2=env.C2,
                                    trend_lower95=env.trend_lower95)
    margins = [r.hyper_margin for r in records]
    checks["q_lower_bound"] = _check(min(margins) >= 0, "q_lower_bound" in enabled, min_margin=min(margins))
    residual = max(r.feeding_residual for r in records)
    R = residual if cfg.feeding_R == "auto" else float(cfg.feeding_R)
    checks["feeding"] = _check(residual <= R, "feeding" in enabled, R=R, measured=residual)
    if crit is not None:
        fits_out["hyperbolicity"] = dataclasses.asdict(crit) | {"k_scaling": crit.k_scaling}
    dg.write_fits_json(fits_out, out / "fits.json")

    result.manifest["scenario"] = cfg.to_dict()
    result.manifest["version"] = __version__
    write_manifest(result, out / "manifest.json")
    (out / "checks.json").write_text(json.dumps(checks, indent=2, sort_keys=True) + "\n")
    failed = [k for k, c in checks.items() if c["enabled"] and not c["passed"]]
    for k, c in checks.items():
        log(f"{'PASS' if c['passed'] else 'FAIL'}{'' if c['enabled'] else ' (disabled)'} {k}")
    return (1 if failed else 0), checks


def check_outputs(out_dir, R: float | None = None) -> tuple[int, dict]:
    """Re-run the checks that can be recomputed from stored CSV outputs."""
    out = Path(out_dir)
    checks = {}
    records = dg.read_diagnostics_csv(out / "diagnostics.csv")
    if len(records) >= 20:
        env = dg.exponential_envelope_fit(records)
        checks["envelope"] = _check(env.passes, True, C2=env.C2, trend_lower95=env.trend_lower95)
    if R is not None:
        worst = max(r.feeding_residual for r in records)
        checks["feeding"] = _check(worst <= R, True, R=R, measured=worst)
    violations = 0
    for p in sorted(out.glob("gronwall_*.csv")):
        a = np.genfromtxt(p, delimiter=",", names=True)
        a = np.atleast_1d(a)
        violations += int(np.sum(a["abs_xi1"] > a["bound_xi1"] * (1 + XI_BOUND_RTOL)))
        violations += int(np.sum(a["abs_xi2"] > a["bound_xi2"] * (1 + XI_BOUND_RTOL)))
    checks["xi_bounds"] = _check(violations == 0, True, violations=violations)
    failed = [k for k, c in checks.items() if not c["passed"]]
    return (1 if failed else 0), checks


def sweep(cfg: ScenarioConfig, delta2s=(0.04, 0.02, 0.01), power: float = 2.0, field=None) -> dict:
    """Fitted constants along delta2 -> delta2 / 2, delta1 = delta2**power."""
    field = field if field is not None else symmetrize(build_initial(cfg))
    per = []
    for d2 in delta2s:
        box = tr.BoxGeometry(d2**power, d2, cfg.delta3, cfg.alpha)
        fits = inequality_fits(field, box, cfg.fit_samples, cfg.seed, cfg.gammas)
        per.append({"delta1": box.delta1, "delta2": d2, "fits": {k: dg.fit_to_dict(v) for k, v in fits.items()}})
    names = list(per[0]["fits"])
    stability = {name: dg.refinement_stability([p["fits"][name]["C"] for p in per]) for name in names}
    return {"sweep": per, "stability": stability, "stable": all(s["stable"] for s in stability.values())}


# --------------------------------------------------------------------------- entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="doubleodd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def overrides(sp):
        sp.add_argument("config", help="INI config or run manifest (JSON)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    r = sub.add_parser("run", help="run a scenario")
    overrides(r)
    r.add_argument("--output", help="artifact directory (overrides config)")
    c = sub.add_parser("check", help="re-run checks on stored outputs")
    c.add_argument("output")
    c.add_argument("--R", type=float, help="feeding bound to test against")
    s = sub.add_parser("sweep", help="delta-refinement series of the inequality fits")
    overrides(s)
    s.add_argument("--delta2", type=float, nargs="+", default=[0.04, 0.02, 0.01])
    s.add_argument("--power", type=float, default=2.0)
    s.add_argument("--field", help="field file to fit (default: the initial datum)")
    s.add_argument("--json", help="write the sweep report here")
    return p


def _load(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config)
    if args.set:
        d = cfg.to_dict()
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            d[k.strip()] = v.strip()
        cfg = ScenarioConfig.from_dict(d)
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _load(args)
            code, _ = run_scenario(cfg, args.output)
        elif args.command == "check":
            code, checks = check_outputs(args.output, args.R)
            print(json.dumps(checks, indent=2, sort_keys=True))
        else:
            cfg = _load(args)
            field = read_field(args.field) if args.field else None
            rep = sweep(cfg, tuple(args.delta2), args.power, field)
            text = json.dumps(rep, indent=2, sort_keys=True, default=dg._json_default)
            if args.json:
                Path(args.json).write_text(text + "\n")
            print(json.dumps(rep["stability"], indent=2, sort_keys=True))
            code = 0 if rep["stable"] else 1
    except DoubleOddError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # structured report for unexpected failures too
        print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                          "traceback": traceback.format_exc()}), file=sys.stderr)
        return 3
    return code


if __name__ == "__main__":
    sys.exit(main())
