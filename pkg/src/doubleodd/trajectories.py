"""Particle characteristics X1' = -X1 Q1, X2' = X2 Q2 through the box D.

Flow data come from a field series: snapshots of Q1, Q2, the velocity gradient
entries and grad omega on a window around the origin, prefiltered for cubic
B-spline evaluation and interpolated linearly in time.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.integrate import cumulative_trapezoid, solve_ivp

from .errors import (
    InvalidArgument,
    OpenTrajectory,
    PreconditionFailed,
    PreconditionNotChecked,
)
from .evolution import SpectralOps, irfft, rfft
from .field import GridField

SERIES_FIELDS = ("q1", "q2", "a", "b", "c", "w1", "w2", "a2")
GRID_FIELDS = SERIES_FIELDS[:-1]
# a2 = Q2 + x2 dQ2/dx2, from the spline derivative of Q2; a + (-a2) is the trace
PHI_SCALE = 1.0 - math.exp(-1.0)


# --------------------------------------------------------------------------- geometry


@dataclass(frozen=True)
class BoxGeometry:
    """D = (0, d1) x (0, d2) and the extended box (0, d1 + d3) x (0, d2)."""

    delta1: float
    delta2: float
    delta3: float
    alpha: float

    def __post_init__(self):
        d1, d2, d3, a = self.delta1, self.delta2, self.delta3, self.alpha
        if not (0 < d1 < d2 < d1 + d3):
            raise InvalidArgument(f"need 0 < delta1 < delta2 < delta1 + delta3, got {(d1, d2, d3)}")
        if d1 + d3 > 1 or d2 > 1:
            raise InvalidArgument("extended box must lie inside [0, 1]^2")
        if not (0 < a < 0.25):
            raise InvalidArgument(f"alpha must lie in (0, 1/4), got {a}")

    @property
    def D(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return (0.0, self.delta1), (0.0, self.delta2)

    @property
    def D_hat(self):
        return (0.0, self.delta1 + self.delta3), (0.0, self.delta2)

    @property
    def size(self) -> float:
        """|delta| = length of (delta1 + delta3, delta2)."""
        return math.hypot(self.delta1 + self.delta3, self.delta2)

    def d(self, x):
        """Distance to the top of the box."""
        return self.delta2 - np.asarray(x, dtype=float)[..., 1]

    def d1(self, x):
        x = np.asarray(x, dtype=float)
        return np.minimum(x[..., 0], x[..., 1])

    def in_D(self, x, closed: bool = True):
        x = np.asarray(x, dtype=float)
        if closed:
            return (x[..., 0] >= 0) & (x[..., 0] <= self.delta1) & (x[..., 1] >= 0) & (x[..., 1] <= self.delta2)
        return (x[..., 0] > 0) & (x[..., 0] < self.delta1) & (x[..., 1] > 0) & (x[..., 1] < self.delta2)

    def in_D_hat(self, x):
        x = np.asarray(x, dtype=float)
        return ((x[..., 0] >= 0) & (x[..., 0] <= self.delta1 + self.delta3)
                & (x[..., 1] >= 0) & (x[..., 1] <= self.delta2))


def phi(s):
    """Concave profile (1 - 1/e) min(s, 1); below 1 - exp(-s) for all s >= 0."""
    return PHI_SCALE * np.minimum(np.asarray(s, dtype=float), 1.0)


# --------------------------------------------------------------------------- field series


def _bspline_dweights(frac):
    f = frac
    return np.stack([-0.5 * (1 - f) ** 2, 1.5 * f * f - 2 * f, -1.5 * f * f + f + 0.5, 0.5 * f * f], axis=-1)


def _bspline_weights(frac):
    f = frac
    f2, f3 = f * f, f * f * f
    return np.stack([(1 - f) ** 3 / 6, (3 * f3 - 6 * f2 + 4) / 6, (-3 * f3 + 3 * f2 + 3 * f + 1) / 6, f3 / 6], axis=-1)


@dataclass(frozen=True)
class Window:
    """Node window [j0, j0 + size) (indices mod n) around [0, extent]^2."""

    n: int
    j0: int
    size: int

    @classmethod
    def around(cls, n: int, extent: float, margin: int = 12) -> "Window":
        h = 2.0 / n
        cells = math.ceil(extent / h - 1e-9)
        margin = min(margin, (n - cells - 1) // 2)
        if margin < 3:
            raise InvalidArgument(f"grid n={n} too coarse for a window of extent {extent}")
        return cls(n, n // 2 - margin, cells + 2 * margin + 1)

    @property
    def h(self) -> float:
        return 2.0 / self.n

    @property
    def x0(self) -> float:
        return -1.0 + self.j0 * self.h

    @property
    def indices(self) -> np.ndarray:
        return (self.j0 + np.arange(self.size)) % self.n

    @property
    def coords(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.size)

    @property
    def inner(self) -> tuple[float, float]:
        """Coordinate range where the 4x4 stencil stays inside the window."""
        return self.x0 + 1.0 * self.h, self.x0 + (self.size - 3) * self.h

    def contains(self, points) -> bool:
        p = np.asarray(points, dtype=float)
        lo, hi = self.inner
        return bool(np.all((p >= lo) & (p <= hi)))


@dataclass
class Snapshot:
    time: float
    window: Window
    values: dict  # name -> window node values
    coeffs: np.ndarray  # (fields, W, W) spline coefficients

    def evaluate(self, points) -> np.ndarray:
        """All SERIES_FIELDS at points; returns (fields, P)."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        w = self.window
        if not w.contains(p):
            raise InvalidArgument("point outside the snapshot window")
        pos = (p - w.x0) / w.h
        base = np.floor(pos).astype(int)
        frac = pos - base
        w1 = _bspline_weights(frac[:, 0])
        w2 = _bspline_weights(frac[:, 1])
        off = np.arange(-1, 3)
        i1 = base[:, 0, None] + off
        i2 = base[:, 1, None] + off
        block = self.coeffs[:, i1[:, :, None], i2[:, None, :]]  # (F, P, 4, 4)
        out = np.einsum("fpab,pa,pb->fp", block, w1, w2)
        dq2 = np.einsum("pab,pa,pb->p", block[1], w1, _bspline_dweights(frac[:, 1])) / w.h
        return np.vstack([out, out[1] + p[:, 1] * dq2])


def snapshot_from_field(field: GridField, window: Window) -> Snapshot:
    """Q1, Q2, a, b, c and grad omega on the window, from one vorticity snapshot."""
    g = field.grid
    if g.n != window.n:
        raise InvalidArgument("window and field grid differ")
    sp = SpectralOps.of(g)
    w_hat = rfft(field.values)
    psi = w_hat * sp.inv_lap
    idx = window.indices
    sel = np.ix_(idx, idx)
    u1 = -irfft(psi * sp.d2)[sel]
    u2 = irfft(psi * sp.d1)[sel]
    u1_1 = -irfft(psi * sp.d1 * sp.d2)[sel]
    u1_2 = -irfft(psi * sp.d2 * sp.d2)[sel]
    u2_1 = irfft(psi * sp.d1 * sp.d1)[sel]
    w1 = irfft(w_hat * sp.d1)[sel]
    w2 = irfft(w_hat * sp.d2)[sel]
    # unwrapped window coordinates; the axis sits exactly at a node
    x = window.coords
    x[np.abs(x) < 0.5 * window.h] = 0.0
    x1 = x[:, None] * np.ones((1, window.size))
    x2 = np.ones((window.size, 1)) * x[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        q1 = np.where(x1 == 0.0, -u1_1, -u1 / np.where(x1 == 0.0, 1.0, x1))
        q2 = np.where(x2 == 0.0, -u1_1, u2 / np.where(x2 == 0.0, 1.0, x2))
    values = {"q1": q1, "q2": q2, "a": -u1_1, "b": -u1_2, "c": -u2_1, "w1": w1, "w2": w2}
    coeffs = np.stack([ndimage.spline_filter(values[k], order=3, mode="mirror") for k in GRID_FIELDS])
    return Snapshot(field.time, window, values, coeffs)


class FieldSeries:
    """Time-ordered snapshots with linear interpolation in time."""

    def __init__(self, snapshots: list[Snapshot] | None = None):
        self.snapshots: list[Snapshot] = []
        for s in snapshots or []:
            self.append(s)

    def append(self, snap: Snapshot):
        if self.snapshots and not snap.time > self.snapshots[-1].time:
            raise InvalidArgument("snapshot times must increase strictly")
        self.snapshots.append(snap)

    @classmethod
    def from_fields(cls, fields, extent: float = 1.0, margin: int = 12) -> "FieldSeries":
        fields = list(fields)
        window = Window.around(fields[0].grid.n, extent, margin)
        return cls([snapshot_from_field(f, window) for f in fields])

    @classmethod
    def frozen(cls, field: GridField, t_start: float, t_end: float, extent: float = 1.0) -> "FieldSeries":
        """A stationary series: the same snapshot at t_start and t_end."""
        window = Window.around(field.grid.n, extent)
        snap = snapshot_from_field(field, window)
        return cls([Snapshot(t_start, window, snap.values, snap.coeffs),
                    Snapshot(t_end, window, snap.values, snap.coeffs)])

    def recorder(self, extent: float, margin: int = 12):
        """Step observer that appends a snapshot of every field it is handed."""
        state = {}

        def observe(field):
            if "window" not in state:
                state["window"] = Window.around(field.grid.n, extent, margin)
            self.append(snapshot_from_field(field, state["window"]))

        return observe

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def t_start(self) -> float:
        return self.snapshots[0].time

    @property
    def t_end(self) -> float:
        return self.snapshots[-1].time

    def contains(self, points) -> bool:
        return self.snapshots[0].window.contains(points)

    def segment(self, t: float) -> int:
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise InvalidArgument(f"time {t} outside series span [{times[0]}, {times[-1]}]")
        return int(min(max(np.searchsorted(times, t, side="right") - 1, 0), len(times) - 2))

    def evaluate_segment(self, k: int, points, t) -> np.ndarray:
        """(fields, P) at points and times t (scalar or per point) within segment k."""
        s0, s1 = self.snapshots[k], self.snapshots[k + 1]
        theta = (np.asarray(t, dtype=float) - s0.time) / (s1.time - s0.time)
        return (1.0 - theta) * s0.evaluate(points) + theta * s1.evaluate(points)

    def evaluate(self, points, t: float) -> dict[str, np.ndarray]:
        vals = self.evaluate_segment(self.segment(t), points, t)
        return dict(zip(SERIES_FIELDS, vals))

    def region_min_q(self, region, t0: float, t1: float, per_side: int = 16) -> float:
        """min of min(Q1, Q2) over region nodes and an edge-inclusive lattice, for snapshots
        whose segments meet [t0, t1]."""
        (a1, b1), (a2, b2) = region
        w = self.snapshots[0].window
        lat1 = np.unique(np.concatenate([np.linspace(a1, b1, per_side + 1),
                                         w.coords[(w.coords >= a1) & (w.coords <= b1)]]))
        lat2 = np.unique(np.concatenate([np.linspace(a2, b2, per_side + 1),
                                         w.coords[(w.coords >= a2) & (w.coords <= b2)]]))
        pts = np.stack(np.meshgrid(lat1, lat2, indexing="ij"), axis=-1).reshape(-1, 2)
        times = self.times
        k0 = self.segment(t0)
        k1 = self.segment(t1) + 1
        out = math.inf
        for s in self.snapshots[k0 : k1 + 1]:
            v = s.evaluate(pts)
            out = min(out, float(np.min(v[0])), float(np.min(v[1])))
        return out


class AffineSeries:
    """Synthetic flow with constant Q1 = q1, Q2 = q2 (u1 = -q1 x1, u2 = q2 x2), omega = 0."""

    def __init__(self, q1: float, q2: float, t_start: float = 0.0, t_end: float = 10.0):
        if not t_end > t_start:
            raise InvalidArgument("t_end must exceed t_start")
        self.q1, self.q2 = float(q1), float(q2)
        self.t_start, self.t_end = float(t_start), float(t_end)

    @property
    def times(self) -> np.ndarray:
        return np.array([self.t_start, self.t_end])

    def contains(self, points) -> bool:
        return True

    def segment(self, t: float) -> int:
        if t < self.t_start - 1e-12 or t > self.t_end + 1e-12:
            raise InvalidArgument(f"time {t} outside series span")
        return 0

    def evaluate_segment(self, k, points, t) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        one = np.ones(len(p))
        zero = np.zeros(len(p))
        return np.stack([self.q1 * one, self.q2 * one, self.q1 * one, zero, zero, zero, zero, self.q2 * one])

    def evaluate(self, points, t):
        return dict(zip(SERIES_FIELDS, self.evaluate_segment(0, points, t)))

    def region_min_q(self, region, t0, t1, per_side=16) -> float:
        return min(self.q1, self.q2)


# --------------------------------------------------------------------------- tracing


@dataclass
class Trajectory:
    start: tuple[float, float]
    t_start: float
    t: np.ndarray
    X: np.ndarray
    T0: float | None
    Te: float | None
    T1: float | None
    status: str  # exited | open | never_entered | left_box | left_window
    box: BoxGeometry
    coeffs: dict = dc_field(default_factory=dict)  # SERIES_FIELDS sampled at t

    @property
    def is_open(self) -> bool:
        return self.status == "open"

    @property
    def is_closed(self) -> bool:
        return self.status == "exited" and self.T0 is not None

    def in_box_mask(self) -> np.ndarray:
        """Samples with T0 <= t (<= Te when closed)."""
        if self.T0 is None:
            return np.zeros(len(self.t), dtype=bool)
        m = self.t >= self.T0 - 1e-12
        if self.Te is not None:
            m &= self.t <= self.Te + 1e-12
        return m

    def window(self):
        """(t, X, coeffs) restricted to [T0, min(Te, end)]."""
        m = self.in_box_mask()
        return self.t[m], self.X[m], {k: v[m] for k, v in self.coeffs.items()}


def _piece_grid(a, b, per_piece, max_spacing):
    count = max(per_piece, math.ceil((b - a) / max_spacing)) if b > a else 0
    return np.linspace(a, b, count + 1) if count else np.array([a])


def trace(series, start, box: BoxGeometry, t_start: float | None = None, t_end: float | None = None,
          rtol: float = 1e-11, atol: float = 1e-14, samples_per_segment: int = 8,
          max_spacing: float = 2e-3, strict: bool = False) -> Trajectory:
    """Integrate one characteristic from ``start`` until it leaves the box or the series ends.

    Entry into D (X1 = delta1, moving left) and exit (X2 = delta2) are located by the
    event root finder on the dense RK45 output. Sampling is uniform inside every
    piece between snapshot times, entry time and exit time.
    """
    x = np.asarray(start, dtype=float).reshape(2)
    t_start = series.t_start if t_start is None else float(t_start)
    t_stop = series.t_end if t_end is None else min(float(t_end), series.t_end)
    if not box.in_D_hat(x):
        raise InvalidArgument(f"start {tuple(x)} is not in the closed extended box")
    if not series.contains(x):
        raise InvalidArgument("start outside the series window")
    d1, d2, d3 = box.delta1, box.delta2, box.delta3
    T0 = t_start if x[0] <= d1 else None
    status = "open"
    Te = None
    solutions = []  # (t_a, t_b, k, dense)
    if x[1] >= d2:
        Te = t_start
        status = "exited" if T0 is not None else "never_entered"
    times = series.times
    k = series.segment(t_start)
    t_cur, y = t_start, x.copy()
    while status == "open" and t_cur < t_stop - 1e-14:
        t_next = min(times[k + 1], t_stop)

        def rhs(t, z, k=k):
            v = series.evaluate_segment(k, z.reshape(1, 2), t)
            return np.array([-z[0] * v[0, 0], z[1] * v[1, 0]])

        def ev_exit(t, z):
            return z[1] - d2

        def ev_entry(t, z):
            return z[0] - d1

        def ev_right(t, z):
            return z[0] - (d1 + d3)

        for e, direction in ((ev_exit, 1), (ev_entry, -1), (ev_right, 1)):
            e.direction = direction
        ev_exit.terminal = True
        ev_right.terminal = True
        ev_entry.terminal = False
        sol = solve_ivp(rhs, (t_cur, t_next), y, method="RK45", rtol=rtol, atol=atol,
                        dense_output=True, events=(ev_exit, ev_entry, ev_right))
        if not sol.success:
            raise RuntimeError(f"trajectory integration failed: {sol.message}")
        t_end_piece = sol.t[-1]
        if T0 is None and len(sol.t_events[1]):
            T0 = float(sol.t_events[1][0])
        solutions.append((t_cur, t_end_piece, k, sol.sol))
        y = sol.y[:, -1].copy()
        if len(sol.t_events[0]):
            Te = float(sol.t_events[0][0])
            y[1] = d2
            status = "exited" if (T0 is not None and y[0] <= d1 * (1 + 1e-9)) else "never_entered"
        elif len(sol.t_events[2]):
            status = "left_box"
        elif not series.contains(y):
            status = "left_window"
        t_cur = t_end_piece
        if t_cur >= times[k + 1] - 1e-14:
            k = min(k + 1, len(times) - 2)
    # samples
    ts, xs, cs = [], [], []
    for ta, tb, kk, dense in solutions:
        cuts = [ta, tb] + [c for c in (T0, Te) if c is not None and ta < c < tb]
        cuts = sorted(set(cuts))
        for a, b in zip(cuts[:-1], cuts[1:]):
            grid = _piece_grid(a, b, samples_per_segment, max_spacing)
            if ts:
                grid = grid[1:]
            if len(grid) == 0:
                continue
            pts = dense(grid).T
            ts.append(grid)
            xs.append(pts)
            cs.append(series.evaluate_segment(kk, pts, grid))
    if not ts:
        grid = np.array([t_start])
        ts, xs = [grid], [x.reshape(1, 2)]
        cs = [series.evaluate_segment(series.segment(t_start), x.reshape(1, 2), t_start)]
    t_arr = np.concatenate(ts)
    X = np.concatenate(xs)
    C = np.concatenate(cs, axis=1)
    if status == "never_entered":
        T0 = None
    T1 = None
    if T0 is not None:
        m = (t_arr >= T0 - 1e-12) & (X[:, 1] >= 0.5 * d2 * (1 - 1e-12))
        if np.any(m):
            i = int(np.argmax(m))
            T1 = float(t_arr[i])
            if i > 0 and t_arr[i - 1] >= T0 and X[i - 1, 1] < 0.5 * d2:
                T1 = _bisect_crossing(solutions, t_arr[i - 1], t_arr[i], 0.5 * d2)
    traj = Trajectory((float(x[0]), float(x[1])), t_start, t_arr, X, T0, Te, T1, status, box,
                      dict(zip(SERIES_FIELDS, C)))
    if strict and traj.is_open:
        raise OpenTrajectory(f"series ended at t={t_stop} before the particle left the box")
    return traj


def _bisect_crossing(solutions, ta, tb, level, tol=1e-13):
    def height(t):
        for a, b, _, dense in solutions:
            if a - 1e-15 <= t <= b + 1e-15:
                return float(dense(t)[1])
        raise InvalidArgument("time outside the integrated span")

    lo, hi = ta, tb
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if height(mid) < level:
            lo = mid
        else:
            hi = mid
    return hi


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("DOUBLEODD_THREADS", "1")))
    except ValueError:
        return 1


def trace_many(series, starts, box: BoxGeometry, **kwargs) -> list[Trajectory]:
    """trace() for each start point; runs on DOUBLEODD_THREADS worker threads."""
    starts = [tuple(s) for s in starts]
    workers = thread_count()
    if workers == 1 or len(starts) < 2:
        return [trace(series, s, box, **kwargs) for s in starts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: trace(series, s, box, **kwargs), starts))


# --------------------------------------------------------------------------- checks


def _cumint(t, f):
    return cumulative_trapezoid(f, t, initial=0.0)


def verify_representation(traj: Trajectory, field_series=None) -> float:
    """Max relative residual of X_i(t) against X_i(T0) exp(+-int Q_i) on [T0, end].

    With ``field_series`` the rates are re-evaluated along the path instead of
    using the stored samples.
    """
    t, X, c = traj.window()
    if len(t) < 2:
        return 0.0
    if field_series is not None:
        q1 = np.empty(len(t))
        q2 = np.empty(len(t))
        for i, (ti, xi) in enumerate(zip(t, X)):
            v = field_series.evaluate(xi.reshape(1, 2), ti)
            q1[i], q2[i] = v["q1"][0], v["q2"][0]
    else:
        q1, q2 = c["q1"], c["q2"]
    rep1 = X[0, 0] * np.exp(-_cumint(t, q1))
    rep2 = X[0, 1] * np.exp(_cumint(t, q2))
    res = 0.0
    for comp, rep in ((X[:, 0], rep1), (X[:, 1], rep2)):
        scale = np.maximum(np.abs(comp), np.abs(rep))
        nz = scale > 0
        if np.any(nz):
            res = max(res, float(np.max(np.abs(comp[nz] - rep[nz]) / scale[nz])))
    return res


@dataclass
class ExitTimeReport:
    ok: bool
    case: str  # "T1" | "below_half" | "no_entry"
    residence: float | None
    bound: float
    dichotomy_ok: bool
    note: str = ""


def exit_time_bound_check(traj: Trajectory, beta: float | None, tol: float = 0.0) -> ExitTimeReport:
    """Te - T1 <= log 2 / beta (+ tol) and the upper-half dichotomy."""
    if beta is None:
        raise PreconditionNotChecked("hyperbolicity floor beta was not measured")
    if not beta > 0:
        raise PreconditionFailed(f"flow is not beta-hyperbolic (measured beta={beta})")
    bound = math.log(2.0) / beta + tol
    if traj.T0 is None:
        return ExitTimeReport(True, "no_entry", None, bound, True, "particle never entered D")
    t, X, _ = traj.window()
    half = 0.5 * traj.box.delta2
    if traj.T1 is None:
        ok = bool(np.all(X[:, 1] <= half * (1 + 1e-9)))
        return ExitTimeReport(ok, "below_half", None, bound, ok, "X2 stays below delta2/2")
    after = t >= traj.T1
    dich = bool(np.all(X[after, 1] >= half * (1 - 1e-9)))
    if traj.Te is None:
        residence = float(t[-1] - traj.T1)
        ok = dich and residence <= bound
        return ExitTimeReport(ok, "T1", residence, bound, dich, "open trajectory, residence so far")
    residence = traj.Te - traj.T1
    return ExitTimeReport(bool(dich and residence <= bound), "T1", residence, bound, dich)


def distance_estimate_check(traj: Trajectory, box: BoxGeometry) -> float:
    """max over t in [T0, Te] of (delta2 phi(int_t^Te Q2) - d(X(t))) / delta2; <= 0 means no violation."""
    if not traj.is_closed:
        return -math.inf
    t, X, c = traj.window()
    I = _cumint(t, c["q2"])
    tail = I[-1] - I
    return float(np.max(box.delta2 * phi(tail) - box.d(X)) / box.delta2)


def entry_height_check(traj: Trajectory, box: BoxGeometry) -> float:
    """max over T* of (X2(T0) - delta2 exp(-int_T0^T* Q2)) / delta2; <= 0 means no violation."""
    if traj.T0 is None:
        return -math.inf
    t, X, c = traj.window()
    I = _cumint(t, c["q2"])
    return float(np.max(X[0, 1] - box.delta2 * np.exp(-I)) / box.delta2)


def along_path_min_q(traj: Trajectory) -> float:
    t, X, c = traj.window()
    if len(t) == 0:
        return math.inf
    return float(min(np.min(c["q1"]), np.min(c["q2"])))


# --------------------------------------------------------------------------- seeding and io


def seed_tracers(box: BoxGeometry, layout: str, count: int) -> list[tuple[float, float]]:
    """Deterministic start points.

    ``grid``: cell centres of an r x r partition of D (r = ceil(sqrt(count))),
    row-major, first ``count`` of them. ``feeding-edge``: x1 = delta1 + delta3 at
    heights delta2 * 2^-k, k = 1..count.
    """
    if count < 1:
        raise InvalidArgument("count must be >= 1")
    if layout == "grid":
        r = math.ceil(math.sqrt(count))
        pts = [((i + 0.5) * box.delta1 / r, (j + 0.5) * box.delta2 / r) for i in range(r) for j in range(r)]
        return pts[:count]
    if layout == "feeding-edge":
        x1 = box.delta1 + box.delta3
        return [(x1, box.delta2 * 2.0**-k) for k in range(1, count + 1)]
    raise InvalidArgument(f"unknown layout {layout!r}")


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "X1", "X2", "Q1", "Q2", "a", "b", "c"])
        c = traj.coeffs
        for i in range(len(traj.t)):
            w.writerow([f"{v:.17g}" for v in (traj.t[i], traj.X[i, 0], traj.X[i, 1], c["q1"][i], c["q2"][i],
                                               c["a"][i], c["b"][i], c["c"][i])])
    return path
