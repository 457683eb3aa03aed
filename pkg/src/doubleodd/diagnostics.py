"""Scenario monitors and fitted-constant checks of the growth inequalities.

Region maxima are taken over an evaluation lattice (grid nodes inside the region
plus the region's edge coordinates), then polished by a bounded local search on
the cubic-spline interpolant around the best lattice point.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import optimize, stats

from .biot_savart import Q_INPUTS, VelocityField, q_from_velocity
from .errors import (
    DegenerateField,
    InvalidArgument,
    PreconditionFailed,
    UnderResolvedBox,
)
from .field import GridField, evaluate_spline, spectral_derivative
from .trajectories import BoxGeometry

GradientFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class HyperParams:
    A: float = 1.0
    beta0: float = 0.0
    rho: float = 0.1

    def __post_init__(self):
        if self.A < 0 or self.rho <= 0:
            raise InvalidArgument("need A >= 0 and rho > 0")


@dataclass
class GrowthRecord:
    t: float
    M_D: float
    M_Dhat: float
    sup_grad: float
    hyper_margin: float
    feeding_residual: float

    FIELDS = ("t", "M_D", "M_Dhat", "sup_grad", "hyper_margin", "feeding_residual")


def gradient_sampler(field: GridField) -> GradientFn:
    """Spline interpolant of the spectral gradient of ``field``."""
    c1 = spectral_derivative(field, 1).spline_coefficients
    c2 = spectral_derivative(field, 2).spline_coefficients
    g = field.grid

    def grad(points):
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        return evaluate_spline(g, c1, p), evaluate_spline(g, c2, p)

    return grad


def _lattice(lo: float, hi: float, h: float) -> np.ndarray:
    """Multiples of h inside [lo, hi] plus both end points."""
    j0 = math.ceil(lo / h - 1e-9)
    j1 = math.floor(hi / h + 1e-9)
    pts = h * np.arange(j0, j1 + 1) if j1 >= j0 else np.array([])
    return np.unique(np.concatenate([pts, [lo, hi]]))


def _region_points(region, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    (a1, b1), (a2, b2) = region
    l1, l2 = _lattice(a1, b1, h), _lattice(a2, b2, h)
    P = np.stack(np.meshgrid(l1, l2, indexing="ij"), axis=-1).reshape(-1, 2)
    return P, l1, l2


def region_max(fn: Callable[[np.ndarray], np.ndarray], region, h: float, refine: bool = True):
    """max of fn over the closed rectangle ``region``; returns (value, argmax point)."""
    P, _, _ = _region_points(region, h)
    vals = fn(P)
    i = int(np.argmax(vals))
    best, arg = float(vals[i]), P[i]
    if refine and len(P) > 1:
        (a1, b1), (a2, b2) = region
        res = optimize.minimize(lambda z: -float(fn(z.reshape(1, 2))[0]), arg, method="Powell",
                                bounds=[(a1, b1), (a2, b2)], options={"xtol": 1e-10, "ftol": 1e-13})
        if res.success and -res.fun > best:
            best, arg = float(-res.fun), np.clip(res.x, [a1, a2], [b1, b2])
    return best, (float(arg[0]), float(arg[1]))


def weighted_gradient(grad: GradientFn, alpha: float):
    """y -> max(|y1^alpha d1 omega|, |y2^alpha d2 omega|)."""

    def fn(P):
        g1, g2 = grad(P)
        return np.maximum(np.abs(P[:, 0]) ** alpha * np.abs(g1), np.abs(P[:, 1]) ** alpha * np.abs(g2))

    return fn


def check_resolution(box: BoxGeometry, h: float, min_cells: float = 8):
    cells = min(box.delta1, box.delta2) / h
    if cells < min_cells:
        raise UnderResolvedBox(f"box side spans {cells:.2f} grid cells, need >= {min_cells}")


def hyper_margin(field: GridField, alpha: float, hyper: HyperParams, grad: GradientFn | None = None) -> dict:
    """min over nodes in [0, rho]^2 of Q_i + A |x|^{1-alpha} M(x) - beta0, per i.

    M(x) is the square maximum of the weighted gradient over [0, max(x1, x2)]^2,
    accumulated over the node lattice.
    """
    g = field.grid
    h = g.h
    grad = grad or gradient_sampler(field)
    k = int(math.floor(hyper.rho / h + 1e-9))
    x = h * np.arange(k + 1)
    P = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)
    W = weighted_gradient(grad, alpha)(P).reshape(k + 1, k + 1)
    S = np.empty(k + 1)
    run = 0.0
    for m in range(k + 1):
        run = max(run, float(np.max(W[m, : m + 1])), float(np.max(W[: m + 1, m])))
        S[m] = run
    idx = np.maximum.outer(np.arange(k + 1), np.arange(k + 1)).reshape(-1)
    M = S[idx]
    vel = VelocityField(field)
    q1, q2, _ = q_from_velocity(P, vel.evaluate(Q_INPUTS, P, method="bicubic"))
    extra = hyper.A * np.hypot(P[:, 0], P[:, 1]) ** (1 - alpha) * M
    m1 = q1 + extra - hyper.beta0
    m2 = q2 + extra - hyper.beta0
    return {"margin": float(min(m1.min(), m2.min())), "margin_q1": float(m1.min()), "margin_q2": float(m2.min()),
            "min_q": float(min(q1.min(), q2.min()))}


def growth_observer(field: GridField, box: BoxGeometry, hyper: HyperParams = HyperParams(),
                    min_cells: float = 8, refine: bool = True) -> GrowthRecord:
    """One GrowthRecord for the current snapshot."""
    h = field.grid.h
    check_resolution(box, h, min_cells)
    grad = gradient_sampler(field)
    wfn = weighted_gradient(grad, box.alpha)
    M_D, _ = region_max(wfn, box.D, h, refine)
    M_Dhat, _ = region_max(wfn, box.D_hat, h, refine)
    M_Dhat = max(M_Dhat, M_D)

    def gnorm(P):
        g1, g2 = grad(P)
        return np.hypot(g1, g2)

    sup_grad, _ = region_max(gnorm, box.D, h, refine)
    feed, _ = feeding_residual(grad, box, h, refine)
    margin = hyper_margin(field, box.alpha, hyper, grad)["margin"]
    return GrowthRecord(field.time, M_D, M_Dhat, sup_grad, margin, feed)


def _feeding_region(box: BoxGeometry, h: float):
    # x2 = 0 is excluded: there d1 omega vanishes to first order and the ratio tends to 0
    lo2 = min(h, 0.5 * box.delta2)
    return (box.delta1, box.delta1 + box.delta3), (lo2, box.delta2)


def _feeding_ratio(grad: GradientFn, alpha: float, R: float):
    def fn(P):
        g1, g2 = grad(P)
        r1 = np.abs(g1) / P[:, 1] ** (1 - alpha)
        r2 = np.abs(g2)
        val = np.maximum(r1, r2)
        if R == 1.0:
            return val
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(val == 0, 0.0, val / R) if R > 0 else np.where(val == 0, 0.0, np.inf)

    return fn


def feeding_residual(grad: GradientFn, box: BoxGeometry, h: float, refine: bool = True):
    """Smallest R for which the feeding inequalities hold on the sampled feeding zone."""
    return region_max(_feeding_ratio(grad, box.alpha, 1.0), _feeding_region(box, h), h, refine)


@dataclass
class FeedingReport:
    passed: bool
    worst_ratio: float
    worst_point: tuple[float, float]


def feeding_monitor(field_or_grad, box: BoxGeometry, R: float, h: float | None = None,
                    refine: bool = True, rtol: float = 1e-9) -> FeedingReport:
    """Worst ratio of the two feeding inequalities over the feeding zone; pass iff <= 1.

    Accepts a GridField or a gradient callable (then ``h`` sets the lattice spacing).
    """
    if R < 0:
        raise InvalidArgument("R must be non-negative")
    if isinstance(field_or_grad, GridField):
        grad = gradient_sampler(field_or_grad)
        h = field_or_grad.grid.h if h is None else h
    else:
        grad = field_or_grad
        if h is None:
            raise InvalidArgument("lattice spacing h required with a gradient callable")
    worst, point = region_max(_feeding_ratio(grad, box.alpha, R), _feeding_region(box, h), h, refine)
    return FeedingReport(bool(worst <= 1 + rtol), worst, point)


# --------------------------------------------------------------------------- hyperbolicity


@dataclass
class HyperbolicityCriterion:
    m: float
    K_region: float
    beta0_measured: float | None = None
    level: float = 0.0

    @property
    def k_scaling(self) -> float:
        """Region radius per unit (1 - m)."""
        return self.K_region / (1 - self.m) if self.m < 1 else math.inf


def measure_m(field0: GridField, level_tolerance: float = 1e-9, region_radius: float = 0.1) -> HyperbolicityCriterion:
    """Area of {omega0 >= max - level_tolerance} inside [0, 1]^2 (trapezoid node weights)."""
    g = field0.grid
    idx = g.quadrant_indices()
    q = field0.values[np.ix_(idx, idx)]
    top = float(np.max(np.abs(field0.values)))
    if top == 0:
        raise DegenerateField("omega0 vanishes identically; the maximal level set is undefined")
    if np.min(q) < -1e-12 * top:
        raise PreconditionFailed(f"omega0 takes negative values on [0,1]^2 (min {np.min(q):.3e})")
    w = np.ones(len(idx))
    w[0] = w[-1] = 0.5
    W = np.outer(w, w) * g.h * g.h
    level = float(np.max(q)) - level_tolerance
    m = float(np.sum(W * (q >= level)))
    return HyperbolicityCriterion(min(m, 1.0), region_radius, None, level)


@dataclass
class QLowerBoundReport:
    passed: bool
    min_margin: float
    margins: list
    times: list


def q_lower_bound_check(fields, alpha: float, hyper: HyperParams) -> QLowerBoundReport:
    """Hyperbolicity margin over the sampled region for each snapshot; pass iff all >= 0."""
    margins, times = [], []
    first = True
    for f in fields:
        if first:
            idx = f.grid.quadrant_indices()
            q = f.values[np.ix_(idx, idx)]
            if np.min(q) < -1e-12 * max(1.0, float(np.max(np.abs(q)))):
                raise PreconditionFailed("omega0 must be non-negative on [0,1]^2")
            first = False
        margins.append(hyper_margin(f, alpha, hyper)["margin"])
        times.append(f.time)
    if not margins:
        raise InvalidArgument("no fields supplied")
    mm = float(min(margins))
    return QLowerBoundReport(bool(mm >= 0), mm, margins, times)


# --------------------------------------------------------------------------- inequality fits


@dataclass
class InequalityFit:
    name: str
    samples: int
    C: float
    C_half: float
    stability: float
    stable: bool
    degenerate: bool = False
    note: str = ""

    @classmethod
    def from_ratios(cls, name: str, num: np.ndarray, den: np.ndarray) -> "InequalityFit":
        num = np.abs(np.asarray(num, dtype=float))
        den = np.asarray(den, dtype=float)
        zero = (den == 0) & (num == 0)
        if np.any((den == 0) & (num != 0)):
            return cls(name, len(num), math.inf, math.inf, math.nan, False, False, "zero right side, non-zero left side")
        if np.all(zero):
            return cls(name, len(num), 0.0, 0.0, 1.0, True, True, "all samples 0/0")
        r = np.where(zero, 0.0, num / np.where(den == 0, 1.0, den))
        C = float(np.max(r))
        C_half = float(np.max(r[: max(1, len(r) // 2)]))
        if C == 0:
            return cls(name, len(num), 0.0, 0.0, 1.0, True, True, "zero left side")
        stab = C_half / C
        return cls(name, len(num), C, C_half, stab, bool(0.5 <= stab <= 2.0))


def sample_box_points(box: BoxGeometry, count: int, rng: np.random.Generator, margin: float = 1e-3) -> np.ndarray:
    """Uniform points in the open box D, kept off the axes and the top by margin * delta."""
    u = rng.uniform(margin, 1 - margin, size=(count, 2))
    return np.stack([u[:, 0] * box.delta1, u[:, 1] * box.delta2], axis=1)


def _q_and_derivs(field: GridField, points, method: str):
    vel = VelocityField(field)
    d = vel.evaluate(Q_INPUTS, points, method=method)
    q1, q2, dq = q_from_velocity(points, d)
    return q1, q2, dq, d


def check_q_upper_bound(field: GridField, box: BoxGeometry, points, M_Dhat: float | None = None,
                        method: str = "spectral") -> InequalityFit:
    """C = max |Q_i| / [||omega||_inf (1 + |log d|) + M_Dhat |delta|^{1-alpha}]."""
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    if M_Dhat is None:
        M_Dhat, _ = region_max(weighted_gradient(gradient_sampler(field), box.alpha), box.D_hat, field.grid.h)
    q1, q2, _, _ = _q_and_derivs(field, P, method)
    den = field.max_abs() * (1 + np.abs(np.log(box.d(P)))) + M_Dhat * box.size ** (1 - box.alpha)
    num = np.maximum(np.abs(q1), np.abs(q2))
    return InequalityFit.from_ratios("q_upper", num, den)


def check_coefficient_bounds(field: GridField, box: BoxGeometry, points, gammas=(0.5, 0.5, 0.5),
                             M_Dhat: float | None = None, method: str = "spectral") -> dict[str, InequalityFit]:
    """Fitted constants for |c|, |b| and |x_i dQ_i/dx_i| against their structural right sides.

    gammas = (gamma, gamma1, gamma2) with gamma1 + gamma2 = 1.
    """
    gam, g1, g2 = gammas
    if not all(0 < v < 1 for v in gammas) or abs(g1 + g2 - 1) > 1e-12:
        raise InvalidArgument("need gammas in (0, 1) and gamma1 + gamma2 = 1")
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    if M_Dhat is None:
        M_Dhat, _ = region_max(weighted_gradient(gradient_sampler(field), box.alpha), box.D_hat, field.grid.h)
    q1, q2, dq, d = _q_and_derivs(field, P, method)
    x1, x2 = P[:, 0], P[:, 1]
    dist = box.d(P)
    al = box.alpha
    logt = 1 + np.abs(np.log(dist))
    c = -d["u2_1"]
    b = -d["u1_2"]
    xdq1 = x1 * dq[:, 0, 0]
    xdq2 = x2 * dq[:, 1, 1]
    den_c = M_Dhat * x2 ** (1 - al) + x2 ** (1 - g1 - g2) * x1**g2 * dist ** (-1 + g1 + g2)
    den_b = M_Dhat * x1 ** (1 - al) * logt + x1 ** (1 - gam) * dist ** (-1 + gam)

    def den_x(xi):
        return M_Dhat * xi ** (1 - al) * logt + xi ** (1 - gam) * dist ** (-1 + gam)

    return {
        "c_bound": InequalityFit.from_ratios("c_bound", c, den_c),
        "b_bound": InequalityFit.from_ratios("b_bound", b, den_b),
        "x1_dq1_bound": InequalityFit.from_ratios("x1_dq1_bound", xdq1, den_x(x1)),
        "x2_dq2_bound": InequalityFit.from_ratios("x2_dq2_bound", xdq2, den_x(x2)),
    }


def refinement_stability(constants: list[float]) -> dict:
    """Consecutive ratios of fitted constants along a refinement sweep."""
    ratios = []
    for a, b in zip(constants[:-1], constants[1:]):
        ratios.append(b / a if a > 0 else (1.0 if b == 0 else math.inf))
    ok = all(0.5 <= r <= 2.0 for r in ratios)
    return {"constants": list(constants), "ratios": ratios, "stable": ok}


# --------------------------------------------------------------------------- envelope fit


@dataclass
class EnvelopeFit:
    C1: float
    C2: float
    max_positive_residual: float
    trend_slope: float
    trend_stderr: float
    trend_lower95: float
    passes: bool
    used: int
    excluded: int
    note: str = ""


def exponential_envelope_fit(records, floor: float = 1e-6, min_records: int = 20) -> EnvelopeFit:
    """Least-squares fit log sup_grad = log C1 + C2 t and a residual trend test.

    Residuals of a full-record OLS line are uncorrelated with t by construction,
    so the trend is tested on the later half of the record: the residual slope
    there is regressed on t and the run passes unless the one-sided 95% lower
    confidence bound of that slope exceeds ``floor``.
    """
    t = np.array([r.t if hasattr(r, "t") else r[0] for r in records], dtype=float)
    y = np.array([r.sup_grad if hasattr(r, "sup_grad") else r[1] for r in records], dtype=float)
    ok = np.isfinite(y) & (y > 0)
    excluded = int(np.sum(~ok))
    t, y = t[ok], np.log(y[ok])
    if len(t) < min_records:
        raise InvalidArgument(f"need >= {min_records} positive records, got {len(t)}")
    C2, logC1 = np.polyfit(t, y, 1)
    res = y - (logC1 + C2 * t)
    late = t >= t[0] + 0.5 * (t[-1] - t[0])
    tl, rl = t[late], res[late]
    fit = stats.linregress(tl, rl)
    df = len(tl) - 2
    tq = stats.t.ppf(0.95, df) if df > 0 else math.inf
    stderr = float(fit.stderr) if np.isfinite(fit.stderr) else 0.0
    lower = float(fit.slope - tq * stderr)
    note = f"{excluded} non-positive records excluded" if excluded else ""
    return EnvelopeFit(float(math.exp(logC1)), float(C2), float(max(0.0, res.max())), float(fit.slope),
                       stderr, lower, bool(lower <= floor), int(len(t)), excluded, note)


# --------------------------------------------------------------------------- io


def write_diagnostics_csv(records: list[GrowthRecord], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GrowthRecord.FIELDS)
        for r in records:
            w.writerow([f"{getattr(r, k):.17g}" for k in GrowthRecord.FIELDS])
    return path


def read_diagnostics_csv(path) -> list[GrowthRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [GrowthRecord(*(float(row[k]) for k in GrowthRecord.FIELDS)) for row in rows]


def fit_to_dict(fit) -> dict:
    d = dataclasses.asdict(fit)
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def write_fits_json(fits: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(fits, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if dataclasses.is_dataclass(o):
        return fit_to_dict(o)
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")
