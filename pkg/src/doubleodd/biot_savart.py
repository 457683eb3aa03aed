"""Velocity and the hyperbolic rate fields Q1, Q2 from vorticity.

Two independent routes are provided:

* spectral: psi = (-Delta)^{-1} omega on the torus, u = (-d2 psi, d1 psi),
  then Q1 = -u1/x1, Q2 = u2/x2 (axis values by l'Hopital);
* kernel: quadrature of the symmetrized kernels G_i^k over [0, 1]^2 plus a
  truncated sum over periodic images, with a local polar rule at y = x.

Throughout, ``dq[i, j]`` stores dQ_{i+1}/dx_{j+1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import AxisPoint, InvalidArgument, InvalidField, SingularPoint
from .field import (
    GridField,
    TorusGrid,
    derivative_multiplier,
    evaluate_spectral,
    evaluate_spline,
    from_spectral,
)

# Prefactor of the symmetrized kernels. Regrouping (1/2pi) (y-x)^perp/|y-x|^2 over
# the four signed reflections of y gives 4 x_i (G_i^1 + G_i^2)/(2 pi), hence 2/pi.
# calibrate_c0() recovers this value from the spectral route to < 1e-4.
C0 = 2.0 / math.pi

WRT = ("x1", "x2", "y1", "y2")


class KernelId(NamedTuple):
    i: int
    k: int

    @classmethod
    def of(cls, kid) -> "KernelId":
        kid = cls(*kid)
        if kid.i not in (1, 2) or kid.k not in (1, 2):
            raise InvalidArgument(f"invalid kernel id {tuple(kid)}")
        return kid


ALL_KERNELS = tuple(KernelId(i, k) for i in (1, 2) for k in (1, 2))


@dataclass(frozen=True)
class ReflectedPoint:
    """x together with x~ = (-x1, x2), x- = (x1, -x2) and -x."""

    x: tuple[float, float]

    @property
    def x_tilde(self):
        return (-self.x[0], self.x[1])

    @property
    def x_bar(self):
        return (self.x[0], -self.x[1])

    @property
    def x_neg(self):
        return (-self.x[0], -self.x[1])

    def distances(self, y):
        """|y-x|, |y-x~|, |y-x-|, |y+x| for an array of points y."""
        y = np.asarray(y, dtype=float).reshape(-1, 2)
        return tuple(
            np.hypot(y[:, 0] - p[0], y[:, 1] - p[1])
            for p in (self.x, self.x_tilde, self.x_bar, self.x_neg)
        )


@dataclass
class QEvaluation:
    point: tuple[float, float]
    q1: float
    q2: float
    dq: np.ndarray | None
    method: str
    quadrature_meta: dict = dc_field(default_factory=dict)


# --------------------------------------------------------------------------- spectral route


class VelocityField:
    """Velocity of a double-odd vorticity snapshot, via the periodic stream function.

    Derivative fields are requested by name: ``u1``, ``u2`` or with a suffix of
    derivative directions, e.g. ``u1_2`` = du1/dx2, ``u2_12`` = d2u2/dx1dx2.
    """

    def __init__(self, vorticity: GridField, mean_tol: float = 1e-12):
        scale = max(1.0, float(np.max(np.abs(vorticity.values))))
        if abs(vorticity.mean()) > mean_tol * scale:
            raise InvalidField(f"vorticity has non-zero mean {vorticity.mean():.3e}")
        g = vorticity.grid
        m1, m2 = np.meshgrid(g.wavenumbers, g.wavenumbers, indexing="ij")
        k2 = (np.pi**2) * (m1**2 + m2**2)
        k2[0, 0] = 1.0
        psi_hat = vorticity.spectral / k2
        psi_hat[0, 0] = 0.0
        self.grid: TorusGrid = g
        self.time = vorticity.time
        self.vorticity = vorticity
        self.psi_hat = psi_hat
        self._cache: dict[str, GridField] = {}
        self._spline: dict[str, np.ndarray] = {}

    @staticmethod
    def _parse(name: str):
        base, _, suffix = name.partition("_")
        if base not in ("u1", "u2", "w") or any(c not in "12" for c in suffix):
            raise InvalidArgument(f"unknown derivative field {name!r}")
        return base, suffix.count("1"), suffix.count("2")

    def coefficients(self, name: str) -> np.ndarray:
        base, p, q = self._parse(name)
        if base == "w":
            return self.vorticity.spectral * derivative_multiplier(self.grid, p, q)
        if base == "u1":
            return -self.psi_hat * derivative_multiplier(self.grid, p, q + 1)
        return self.psi_hat * derivative_multiplier(self.grid, p + 1, q)

    def derivative(self, name: str) -> GridField:
        if name not in self._cache:
            self._cache[name] = from_spectral(self.grid, self.coefficients(name), self.time)
        return self._cache[name]

    @property
    def u1(self) -> GridField:
        return self.derivative("u1")

    @property
    def u2(self) -> GridField:
        return self.derivative("u2")

    def divergence(self) -> np.ndarray:
        return self.derivative("u1_1").values + self.derivative("u2_2").values

    def max_speed(self) -> float:
        return float(np.max(np.hypot(self.u1.values, self.u2.values)))

    def evaluate(self, names, points, method: str = "spectral") -> dict[str, np.ndarray]:
        out = {}
        for name in names:
            if method == "spectral":
                out[name] = evaluate_spectral(self.grid, self.coefficients(name), points)
            elif method == "bicubic":
                if name not in self._spline:
                    self._spline[name] = self.derivative(name).spline_coefficients
                out[name] = evaluate_spline(self.grid, self._spline[name], points)
            else:
                raise InvalidArgument(f"unknown method {method!r}")
        return out


Q_INPUTS = ("u1", "u2", "u1_1", "u1_2", "u2_1", "u2_2", "u1_12", "u2_12")


def q_from_velocity(points, d: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Q1, Q2 and dQ from velocity derivatives at points.

    On an axis the quotient is replaced by its limit; the double-odd parity of u
    makes the limits exact: Q1 = -du1/dx1, dQ1/dx1 = 0, dQ1/dx2 = -d2u1/dx1dx2
    on x1 = 0, and symmetrically for Q2 on x2 = 0.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    x1, x2 = p[:, 0], p[:, 1]
    on1, on2 = x1 == 0.0, x2 == 0.0
    s1 = np.where(on1, 1.0, x1)
    s2 = np.where(on2, 1.0, x2)
    q1 = np.where(on1, -d["u1_1"], -d["u1"] / s1)
    q2 = np.where(on2, d["u2_2"], d["u2"] / s2)
    dq = np.empty((len(p), 2, 2))
    dq[:, 0, 0] = np.where(on1, 0.0, (-d["u1_1"] - q1) / s1)
    dq[:, 0, 1] = np.where(on1, -d.get("u1_12", 0.0), -d["u1_2"] / s1)
    dq[:, 1, 0] = np.where(on2, d.get("u2_12", 0.0), d["u2_1"] / s2)
    dq[:, 1, 1] = np.where(on2, 0.0, (d["u2_2"] - q2) / s2)
    return q1, q2, dq


def velocity_spectral(field: GridField) -> VelocityField:
    """u = grad^perp (-Delta)^{-1} omega; raises InvalidField on non-zero mean."""
    if isinstance(field, VelocityField):
        return field
    return VelocityField(field)


def q_spectral(field, x, method: str = "spectral") -> QEvaluation:
    """Q1, Q2 and dQ at a single point from the spectral velocity."""
    vel = velocity_spectral(field)
    p = np.asarray(x, dtype=float).reshape(1, 2)
    d = vel.evaluate(Q_INPUTS, p, method=method)
    q1, q2, dq = q_from_velocity(p, d)
    return QEvaluation((float(p[0, 0]), float(p[0, 1])), float(q1[0]), float(q2[0]), dq[0], "spectral",
                       {"interpolation": method, "n": vel.grid.n})


def q_spectral_many(field, points, method: str = "bicubic"):
    """Vectorised (q1, q2, dq) at many points."""
    vel = velocity_spectral(field)
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    return q_from_velocity(p, vel.evaluate(Q_INPUTS, p, method=method))


# --------------------------------------------------------------------------- kernels


def _split(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    y1, y2 = y[..., 0], y[..., 1]
    dm = (y1 - x1) ** 2 + (y2 - x2) ** 2
    if np.any(dm == 0.0):
        raise SingularPoint("kernel evaluated at x == y")
    dt = (y1 + x1) ** 2 + (y2 - x2) ** 2
    db = (y1 - x1) ** 2 + (y2 + x2) ** 2
    dp = (y1 + x1) ** 2 + (y2 + x2) ** 2
    return x1, x2, y1, y2, dm, dt, db, dp


def kernel_value(kid, x, y):
    """G_i^k(x, y); broadcasts over leading dimensions of x and y."""
    i, k = KernelId.of(kid)
    x1, x2, y1, y2, dm, dt, db, dp = _split(x, y)
    if (i, k) == (1, 1):
        return y1 * (y2 - x2) / (dm * dt)
    if (i, k) == (1, 2):
        return y1 * (y2 + x2) / (dp * db)
    if (i, k) == (2, 1):
        return y2 * (y1 + x1) / (dp * dt)
    return y2 * (y1 - x1) / (dm * db)


def kernel_sum(i: int, x, y):
    """G_i^1 + G_i^2."""
    return kernel_value((i, 1), x, y) + kernel_value((i, 2), x, y)


def kernel_derivative(kid, wrt: str, x, y):
    """Closed-form partial derivative of G_i^k with respect to x1, x2, y1 or y2."""
    i, k = KernelId.of(kid)
    if wrt not in WRT:
        raise InvalidArgument(f"wrt must be one of {WRT}, got {wrt!r}")
    x1, x2, y1, y2, dm, dt, db, dp = _split(x, y)
    if (i, k) == (1, 1):
        s, t = y2 - x2, y1
        if wrt == "x1":
            return -2 * t * (y1 + x1) * s / (dm * dt**2) + 2 * t * (y1 - x1) * s / (dm**2 * dt)
        if wrt == "x2":
            return 2 * t * s**2 / (dm * dt**2) + 2 * t * s**2 / (dm**2 * dt) - t / (dm * dt)
        if wrt == "y1":
            return (-2 * t * (y1 + x1) * s / (dm * dt**2) - 2 * t * (y1 - x1) * s / (dm**2 * dt)
                    + s / (dm * dt))
        return -2 * t * s**2 / (dm * dt**2) - 2 * t * s**2 / (dm**2 * dt) + t / (dm * dt)
    if (i, k) == (1, 2):
        s, t = y2 + x2, y1
        if wrt == "x1":
            return -2 * t * (y1 + x1) * s / (dp**2 * db) + 2 * t * (y1 - x1) * s / (dp * db**2)
        if wrt in ("x2", "y2"):
            return -2 * t * s**2 / (dp**2 * db) - 2 * t * s**2 / (dp * db**2) + t / (dp * db)
        return (-2 * t * (y1 + x1) * s / (dp**2 * db) - 2 * t * (y1 - x1) * s / (dp * db**2)
                + s / (dp * db))
    if (i, k) == (2, 1):
        s, t = y1 + x1, y2
        if wrt in ("x1", "y1"):
            return -2 * t * s**2 / (dp**2 * dt) - 2 * t * s**2 / (dp * dt**2) + t / (dp * dt)
        if wrt == "x2":
            return -2 * t * s * (y2 + x2) / (dp**2 * dt) + 2 * t * s * (y2 - x2) / (dp * dt**2)
        return (-2 * t * s * (y2 + x2) / (dp**2 * dt) - 2 * t * s * (y2 - x2) / (dp * dt**2)
                + s / (dp * dt))
    s, t = y1 - x1, y2
    if wrt == "x1":
        return 2 * t * s**2 / (dm * db**2) + 2 * t * s**2 / (dm**2 * db) - t / (dm * db)
    if wrt == "x2":
        return -2 * t * s * (y2 + x2) / (dm * db**2) + 2 * t * s * (y2 - x2) / (dm**2 * db)
    if wrt == "y1":
        return -2 * t * s**2 / (dm * db**2) - 2 * t * s**2 / (dm**2 * db) + t / (dm * db)
    return (-2 * t * s * (y2 + x2) / (dm * db**2) - 2 * t * s * (y2 - x2) / (dm**2 * db)
            + s / (dm * db))


# --------------------------------------------------------------------------- kernel quadrature


def _smoothstep(s):
    """C-infinity step, 0 for s <= 0 and 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def _cutoff_radius(x, r_max):
    return min(r_max, 0.9 * min(x))


@dataclass
class _Quadrature:
    total: float
    main: float
    remainder: float
    shell_totals: list
    polar: float

    @property
    def tail(self) -> float:
        """Truncation tail fitted as A / L^2 (L = 2S + 1) from the last two shells."""
        t = self.shell_totals
        if len(t) < 3:
            return float("nan")
        la, lb = 2 * len(t) - 3, 2 * len(t) - 1
        return (t[-1] - t[-2]) * la**2 / (lb**2 - la**2)

    @property
    def extrapolated(self) -> float:
        return self.total + self.tail if len(self.shell_totals) >= 3 else self.total


def _polar_rule(r0, r1, n_r, n_theta, panels=2):
    """Gauss-Legendre panels in rho (log-graded when r0 > 0) times the periodic trapezoid in theta."""
    edges = np.geomspace(r0, r1, panels + 1) if r0 > 0 else np.linspace(r0, r1, panels + 1)
    gx, gw = np.polynomial.legendre.leggauss(n_r)
    rho, w_rho = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        rho.append(0.5 * (b - a) * gx + 0.5 * (b + a))
        w_rho.append(0.5 * (b - a) * gw)
    rho = np.concatenate(rho)
    w_rho = np.concatenate(w_rho)
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    return rho, w_rho, theta, 2 * np.pi / n_theta


def _kernel_quadrature(vort: GridField, x, kernel, images: int, r_cut: float,
                       r_excl: float = 0.0, n_r: int = 24, n_theta: int = 96) -> _Quadrature:
    """Integral of kernel(x, y) * omega(y) over the quadrant [0, 2*images+1]^2.

    ``kernel(x, y)`` is evaluated on arrays of points y (shape (..., 2)).
    The disc B(x, r_cut) is handled by a partition of unity: the grid trapezoid
    sees (1 - chi) * integrand, which vanishes to all orders at y = x, and the
    polar rule integrates chi * integrand over r_excl <= |y - x| <= r_cut.
    """
    g = vort.grid
    n, h = g.n, g.h
    half = n // 2
    x = np.asarray(x, dtype=float)
    nodes = h * np.arange(half + 1)
    w1 = np.ones(half + 1)
    w1[0] = w1[-1] = 0.5
    w_cell = np.outer(w1, w1) * h * h
    values = vort.values
    n_cells = 2 * images + 1
    shell_sum = np.zeros(images + 1)
    main = 0.0
    for m1 in range(n_cells):
        i1 = (half + m1 * half + np.arange(half + 1)) % n
        y1 = m1 + nodes
        for m2 in range(n_cells):
            i2 = (half + m2 * half + np.arange(half + 1)) % n
            y2 = m2 + nodes
            om = values[np.ix_(i1, i2)]
            yy = np.stack(np.meshgrid(y1, y2, indexing="ij"), axis=-1)
            dist = np.hypot(yy[..., 0] - x[0], yy[..., 1] - x[1])
            near = dist < r_cut
            with np.errstate(divide="ignore", invalid="ignore"):
                if np.any(near):
                    far_w = _smoothstep(dist / r_cut)
                    safe = np.where((dist == 0.0)[..., None], x + 0.5, yy)  # keep kernel off y == x
                    kv = kernel(x, safe) * far_w
                    kv = np.where(far_w > 0, kv, 0.0)
                else:
                    kv = kernel(x, yy)
            contrib = float(np.sum(kv * om * w_cell))
            shell = max((m1 + 1) // 2, (m2 + 1) // 2)
            shell_sum[shell] += contrib
            if m1 == 0 and m2 == 0:
                main += contrib
    rho, w_rho, theta, w_theta = _polar_rule(r_excl, r_cut, n_r, n_theta)
    R, T = np.meshgrid(rho, theta, indexing="ij")
    pts = np.stack([x[0] + R * np.cos(T), x[1] + R * np.sin(T)], axis=-1)
    om = evaluate_spline(g, vort.spline_coefficients, pts.reshape(-1, 2)).reshape(R.shape)
    chi = 1.0 - _smoothstep(R / r_cut)
    polar = float(np.sum(kernel(x, pts) * om * chi * R * w_rho[:, None]) * w_theta)
    # polar disc lies inside [0, 1]^2 because r_cut < min(x)
    main += polar
    shell_sum[0] += polar
    totals = np.cumsum(shell_sum)
    return _Quadrature(float(totals[-1]), main, float(totals[-1] - main), totals.tolist(), polar)


def q_kernel(field: GridField, x, images: int = 5, r_max: float = 0.15,
             derivatives: bool = False) -> QEvaluation:
    """Q1, Q2 at x from the symmetrized kernel representation.

    ``images`` is the number of square shells of periodic cells summed for the
    remainder term; shell s covers the cells 2k + [-1, 1]^2 with max|k| = s.
    With ``derivatives=True`` dq is filled from dq_principal_value.
    """
    if images < 1:
        raise InvalidArgument("images must be >= 1")
    vort = field.vorticity if isinstance(field, VelocityField) else field
    g = vort.grid
    x = np.asarray(x, dtype=float).reshape(2)
    if min(x) < g.h or max(x) > 1.0 - g.h:
        raise AxisPoint(f"point {tuple(x)} is within one grid cell of an axis")
    r_cut = _cutoff_radius(x, r_max)
    q = []
    meta = {"images": images, "exclusion_radius": r_cut, "n": g.n}
    for i in (1, 2):
        quad = _kernel_quadrature(vort, x, lambda a, b, i=i: kernel_sum(i, a, b), images, r_cut)
        q.append(C0 * quad.total)
        incr = np.diff(quad.shell_totals)
        meta[f"q{i}_main"] = C0 * quad.main
        meta[f"q{i}_remainder"] = C0 * quad.remainder
        meta[f"q{i}_shells"] = [C0 * v for v in quad.shell_totals]
        meta[f"q{i}_last_shell_increment"] = float(C0 * abs(incr[-1]))
        meta[f"q{i}_truncation_estimate"] = float(C0 * abs(quad.tail)) if images >= 2 else float(C0 * abs(incr[-1]))
    meta["estimated_error"] = max(meta["q1_truncation_estimate"], meta["q2_truncation_estimate"])
    dq = None
    if derivatives:
        dq = np.array([[dq_principal_value(vort, x, j, i, images=images)[0] for j in (1, 2)]
                       for i in (1, 2)])
    return QEvaluation((float(x[0]), float(x[1])), q[0], q[1], dq, "kernel", meta)


def calibrate_c0(field: GridField, x=(0.2, 0.3), images: int = 8) -> float:
    """Kernel prefactor that makes the kernel Q1 match the spectral Q1 at x."""
    x = np.asarray(x, dtype=float)
    ref = q_spectral(field, x).q1
    quad = _kernel_quadrature(field, x, lambda a, b: kernel_sum(1, a, b), images, _cutoff_radius(x, 0.15))
    return ref / quad.extrapolated


def dq_principal_value(field: GridField, x, j: int, i: int, radii=None, images: int = 5,
                       r_max: float = 0.15, order: int = 2):
    """dQ_i/dx_j as principal value plus circle term, extrapolated in the exclusion radius.

    For each radius delta: c0 * [ integral over the quadrant minus B(delta, x) of
    d/dx_j (G_i^1 + G_i^2) omega  -  omega(x) * circle integral of G_i^i nu_j ].
    A two-point Richardson step on the last two radii gives the returned value.
    The excluded disk costs O(delta^2) (the derivative kernel is even and of
    degree -2, so the linear part of omega drops out), hence ``order=2``.
    """
    if i not in (1, 2) or j not in (1, 2):
        raise InvalidArgument("i and j must be 1 or 2")
    vort = field.vorticity if isinstance(field, VelocityField) else field
    g = vort.grid
    x = np.asarray(x, dtype=float).reshape(2)
    if min(x) < g.h or max(x) > 1.0 - g.h:
        raise AxisPoint(f"point {tuple(x)} is within one grid cell of an axis")
    r_cut = _cutoff_radius(x, r_max)
    if radii is None:
        radii = [0.5 * r_cut, 0.25 * r_cut, 0.125 * r_cut]
    radii = [float(r) for r in radii]
    if len(radii) < 2 or any(b >= a for a, b in zip(radii[:-1], radii[1:])) or radii[-1] <= 0:
        raise InvalidArgument("radii must be positive and strictly decreasing (at least two)")
    if radii[0] >= r_cut:
        raise InvalidArgument(f"largest radius {radii[0]} must be below the cutoff {r_cut:.4g}")
    wrt = f"x{j}"

    def dkernel(a, b):
        return kernel_derivative((i, 1), wrt, a, b) + kernel_derivative((i, 2), wrt, a, b)

    om_x = float(evaluate_spline(g, vort.spline_coefficients, x.reshape(1, 2))[0])
    theta = 2 * np.pi * np.arange(256) / 256
    nu = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    values, volume, circle = [], [], []
    for delta in radii:
        quad = _kernel_quadrature(vort, x, dkernel, images, r_cut, r_excl=delta)
        ring = kernel_value((i, i), x, x + delta * nu)
        c = float(np.mean(ring * nu[:, j - 1]) * 2 * np.pi * delta)
        volume.append(C0 * quad.total)
        circle.append(-C0 * om_x * c)
        values.append(volume[-1] + circle[-1])
    d1, d2 = radii[-2], radii[-1]
    v1, v2 = values[-2], values[-1]
    if order < 1:
        raise InvalidArgument("order must be >= 1")
    extrapolated = v2 + (v2 - v1) * d2**order / (d1**order - d2**order)
    diag = {"radii": radii, "values": values, "volume": volume, "circle": circle,
            "extrapolated": extrapolated, "exclusion_radius": r_cut, "order": order}
    return extrapolated, diag
