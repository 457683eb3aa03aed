"""Gradient evolution along a characteristic and its Gronwall-type bounds.

Along a trajectory xi = grad omega(X(t), t) solves xi' = [[a, c], [b, -a]] xi.
Here the system is solved directly (RK4), through the two reduced models
(b = c = 0 and c = 0), through the Volterra representation with the operators
F+ and F-, and bounded through Willett's inequality.

Every path integral is a cumulative trapezoid on the coefficient grid, taken
from the first node (the entry time) onwards.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline

from .errors import InvalidArgument


def cumint(t, f):
    """Cumulative trapezoid of f over t, starting at 0."""
    return cumulative_trapezoid(f, t, initial=0.0)


@dataclass
class CoefficientPath:
    """a, b, c on a time grid starting at the entry time.

    ``a2`` is the second diagonal entry computed independently (Q2 + x2 dQ2/dx2);
    the system matrix has trace a - a2, which vanishes for a divergence-free flow.
    """

    t: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    a2: np.ndarray | None = None
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        n = len(self.t)
        if n < 2 or np.any(np.diff(self.t) <= 0):
            raise InvalidArgument("coefficient grid must be strictly increasing with at least two nodes")
        for name in ("a", "b", "c"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            setattr(self, name, v)
        self.a2 = self.a.copy() if self.a2 is None else np.asarray(self.a2, dtype=float)

    @property
    def T0(self) -> float:
        return float(self.t[0])

    @property
    def A(self) -> np.ndarray:
        return cumint(self.t, self.a)

    def trace_defect(self) -> float:
        """max |a - a2| relative to max |a| (0 for a zero path)."""
        scale = float(np.max(np.abs(self.a)))
        d = float(np.max(np.abs(self.a - self.a2)))
        return d / scale if scale > 0 else d

    def with_c_zero(self) -> "CoefficientPath":
        return replace(self, c=np.zeros_like(self.c), meta=dict(self.meta))

    def subsampled(self) -> "CoefficientPath":
        """Every other node (the last node always kept)."""
        idx = np.arange(0, len(self.t), 2)
        if idx[-1] != len(self.t) - 1:
            idx = np.append(idx, len(self.t) - 1)
        return CoefficientPath(self.t[idx], self.a[idx], self.b[idx], self.c[idx], self.a2[idx], dict(self.meta))

    @classmethod
    def constant(cls, a: float, b: float, c: float, t_end: float = 1.0, nodes: int = 4097) -> "CoefficientPath":
        t = np.linspace(0.0, t_end, nodes)
        return cls(t, np.full(nodes, a), np.full(nodes, b), np.full(nodes, c))


def sample_coefficients(traj, field_series=None, trace_tol: float = 1e-6) -> CoefficientPath:
    """Coefficient path of a trajectory on [T0, min(Te, end)].

    With ``field_series`` the coefficients are re-evaluated along the path; otherwise
    the samples stored by trace() are used. ``meta['trace_ok']`` records the
    trace-zero check at tolerance trace_tol.
    """
    if traj.T0 is None:
        raise InvalidArgument("trajectory never entered the box")
    t, X, c = traj.window()
    if field_series is not None:
        vals = [field_series.evaluate(x.reshape(1, 2), ti) for ti, x in zip(t, X)]
        c = {k: np.array([v[k][0] for v in vals]) for k in vals[0]}
    keep = np.concatenate([[True], np.diff(t) > 0])
    path = CoefficientPath(t[keep], c["a"][keep], c["b"][keep], c["c"][keep], c["a2"][keep])
    path.meta["trace_defect"] = path.trace_defect()
    path.meta["trace_ok"] = path.meta["trace_defect"] < trace_tol
    path.meta["X"] = X[keep]
    path.meta["grad_field"] = np.stack([c["w1"][keep], c["w2"][keep]], axis=1)
    return path


@dataclass(frozen=True)
class GradientState:
    xi1: float
    xi2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.xi1, self.xi2], dtype=float)


@dataclass
class GradientPath:
    t: np.ndarray
    xi: np.ndarray  # (N, 2)

    @property
    def xi1(self):
        return self.xi[:, 0]

    @property
    def xi2(self):
        return self.xi[:, 1]


def _xi0(xi0) -> np.ndarray:
    if isinstance(xi0, GradientState):
        return xi0.as_array()
    return np.asarray(xi0, dtype=float).reshape(2)


def integrate_exact(coeffs: CoefficientPath, xi0) -> GradientPath:
    """Classical RK4 on the coefficient grid; midpoint coefficients from a cubic spline."""
    t = coeffs.t
    z = _xi0(xi0)
    sa, sb, sc = (CubicSpline(t, v) for v in (coeffs.a, coeffs.b, coeffs.c))
    tm = 0.5 * (t[:-1] + t[1:])
    am, bm, cm = sa(tm), sb(tm), sc(tm)
    a, b, c = coeffs.a, coeffs.b, coeffs.c
    out = np.empty((len(t), 2))
    out[0] = z

    def f(ai, bi, ci, y):
        return np.array([ai * y[0] + ci * y[1], bi * y[0] - ai * y[1]])

    for i in range(len(t) - 1):
        h = t[i + 1] - t[i]
        k1 = f(a[i], b[i], c[i], z)
        k2 = f(am[i], bm[i], cm[i], z + 0.5 * h * k1)
        k3 = f(am[i], bm[i], cm[i], z + 0.5 * h * k2)
        k4 = f(a[i + 1], b[i + 1], c[i + 1], z + h * k3)
        z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = z
    return GradientPath(t.copy(), out)


def model_diagonal(coeffs: CoefficientPath, xi0) -> GradientPath:
    """b = c = 0: xi1 = e^A xi1(T0), xi2 = e^-A xi2(T0)."""
    z = _xi0(xi0)
    A = coeffs.A
    return GradientPath(coeffs.t.copy(), np.stack([np.exp(A) * z[0], np.exp(-A) * z[1]], axis=1))


def model_c_zero(coeffs: CoefficientPath, xi0) -> GradientPath:
    """c = 0: xi1 = e^A xi1(T0), xi2 = e^-A [xi2(T0) + xi1(T0) int b e^{2A}]."""
    z = _xi0(xi0)
    t, A = coeffs.t, coeffs.A
    xi2 = np.exp(-A) * (z[1] + z[0] * cumint(t, coeffs.b * np.exp(2 * A)))
    return GradientPath(t.copy(), np.stack([np.exp(A) * z[0], xi2], axis=1))


def F_plus(coeffs: CoefficientPath, g) -> np.ndarray:
    A = coeffs.A
    return g + np.exp(A) * cumint(coeffs.t, coeffs.a * np.exp(-A) * g)


def F_minus(coeffs: CoefficientPath, g) -> np.ndarray:
    A = coeffs.A
    return g - np.exp(-A) * cumint(coeffs.t, coeffs.a * np.exp(A) * g)


def apply_P_hat(coeffs: CoefficientPath, xi: np.ndarray) -> np.ndarray:
    """(P^ xi)(t) = int P xi with P = [[a, 0], [b, -a]]."""
    t, a, b = coeffs.t, coeffs.a, coeffs.b
    return np.stack([cumint(t, a * xi[:, 0]), cumint(t, b * xi[:, 0] - a * xi[:, 1])], axis=1)


@dataclass
class VolterraSolution:
    t: np.ndarray
    phi: np.ndarray
    residual: float


def volterra_solve(coeffs: CoefficientPath, g) -> VolterraSolution:
    """phi = (I - P^)^{-1} g via phi1 = F+ g1, phi2 = F- g2 + e^-A int e^A b F+ g1."""
    g = np.asarray(g, dtype=float)
    if g.shape != (len(coeffs.t), 2):
        raise InvalidArgument(f"g must have shape ({len(coeffs.t)}, 2)")
    A = coeffs.A
    p1 = F_plus(coeffs, g[:, 0])
    p2 = F_minus(coeffs, g[:, 1]) + np.exp(-A) * cumint(coeffs.t, np.exp(A) * coeffs.b * p1)
    phi = np.stack([p1, p2], axis=1)
    residual = float(np.max(np.abs(phi - apply_P_hat(coeffs, phi) - g)))
    return VolterraSolution(coeffs.t.copy(), phi, residual)


@dataclass
class WRepresentation:
    t: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    residual: float
    parts: dict


def w_representation(coeffs: CoefficientPath, xi0, xi_path: GradientPath) -> WRepresentation:
    """w from the closed formula and from w = (I - P^) xi; max relative residual of
    the four identities linking w and xi."""
    z = _xi0(xi0)
    t, A = coeffs.t, coeffs.A
    eA, emA = np.exp(A), np.exp(-A)
    xi = xi_path.xi
    inner = cumint(t, eA * coeffs.b * xi[:, 0])
    w1 = z[0] + z[1] * cumint(t, emA * coeffs.c) + cumint(t, emA * coeffs.c * inner)
    direct = xi - apply_P_hat(coeffs, xi)
    Fw1 = F_plus(coeffs, w1)
    scale = max(1.0, float(np.max(np.abs(xi))))
    parts = {
        "w1_formula_vs_direct": float(np.max(np.abs(w1 - direct[:, 0]))) / scale,
        "w2_constant": float(np.max(np.abs(direct[:, 1] - z[1]))) / scale,
        "xi1_eq_Fw1": float(np.max(np.abs(xi[:, 0] - Fw1))) / scale,
        "xi2_line": float(np.max(np.abs(xi[:, 1] - (z[1] * emA + emA * cumint(t, eA * coeffs.b * Fw1))))) / scale,
    }
    return WRepresentation(t.copy(), w1, np.full(len(t), z[1]), max(parts.values()), parts)


def willett_bound(t, f0, f1, f2, v1, v2) -> np.ndarray:
    """The dominating functional H f0 for z <= f0 + f1 int v1 z + f2 int v2 z.

    Overflow saturates to +inf, which is still an upper bound.
    """
    t = np.asarray(t, dtype=float)
    arrs = [np.broadcast_to(np.asarray(v, dtype=float), t.shape) for v in (f0, f1, f2, v1, v2)]
    for name, v in zip(("f0", "f1", "f2", "v1", "v2"), arrs):
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise InvalidArgument(f"{name} must be finite and non-negative")
    f0, f1, f2, v1, v2 = arrs
    with np.errstate(over="ignore", invalid="ignore"):
        E1 = np.exp(cumint(t, v1 * f1))
        r = f0 + f1 * E1 * cumint(t, v1 * f0)
        k = f2 + f1 * E1 * cumint(t, v1 * f2)
        H = r + k * np.exp(cumint(t, v2 * k)) * cumint(t, v2 * r)
    return np.where(np.isnan(H), np.inf, H)


def picard_solution(t, f0, f1, f2, v1, v2, tol: float = 1e-14, max_iter: int = 10000) -> np.ndarray:
    """Fixed point of z = f0 + f1 int v1 z + f2 int v2 z by Picard iteration.

    Volterra iterations converge on any finite interval; when the per-iteration
    contraction is weak the interval is split and the solution continued piecewise.
    """
    t = np.asarray(t, dtype=float)
    f0, f1, f2, v1, v2 = (np.broadcast_to(np.asarray(v, dtype=float), t.shape) for v in (f0, f1, f2, v1, v2))
    z = f0.copy()
    for _ in range(max_iter):
        nxt = f0 + f1 * cumint(t, v1 * z) + f2 * cumint(t, v2 * z)
        diff = float(np.max(np.abs(nxt - z)))
        z = nxt
        if diff <= tol * max(1.0, float(np.max(np.abs(z)))):
            return z
    return _picard_split(t, f0, f1, f2, v1, v2, tol, max_iter)


def _picard_split(t, f0, f1, f2, v1, v2, tol, max_iter):
    # continue piecewise: on [t_k, t_{k+1}] the history integral is a known offset
    n = len(t)
    pieces = np.linspace(0, n - 1, 9).astype(int)
    z = f0.copy()
    I1 = np.zeros(n)
    I2 = np.zeros(n)
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        sl = slice(lo, hi + 1)
        base1, base2 = I1[lo], I2[lo]
        zs = z[sl].copy()
        for _ in range(max_iter):
            i1 = base1 + cumint(t[sl], v1[sl] * zs)
            i2 = base2 + cumint(t[sl], v2[sl] * zs)
            nxt = f0[sl] + f1[sl] * i1 + f2[sl] * i2
            done = np.max(np.abs(nxt - zs)) <= tol * max(1.0, float(np.max(np.abs(nxt))))
            zs = nxt
            if done:
                break
        z[sl] = zs
        I1[sl] = base1 + cumint(t[sl], v1[sl] * zs)
        I2[sl] = base2 + cumint(t[sl], v2[sl] * zs)
    return z


@dataclass
class GronwallData:
    t: np.ndarray
    f0: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    Hf0: np.ndarray
    bound_xi1: np.ndarray
    bound_xi2: np.ndarray
    halving_difference: float = float("nan")

    def violations(self, xi_path: GradientPath, rtol: float = 1e-6) -> dict:
        """Pointwise dominance of |xi| by the bounds, with relative tolerance rtol."""
        out = {}
        for name, comp, bound in (("xi1", xi_path.xi1, self.bound_xi1), ("xi2", xi_path.xi2, self.bound_xi2)):
            excess = np.abs(comp) - bound * (1 + rtol) - 1e-300
            out[name] = int(np.sum(excess > 0))
            out[f"{name}_worst_ratio"] = float(np.max(np.abs(comp) / np.maximum(bound, 1e-300)))
        return out


def _gronwall(coeffs: CoefficientPath, z: np.ndarray):
    with np.errstate(over="ignore", invalid="ignore"):
        parts = _gronwall_parts(coeffs, z)
    # nan only arises from inf * 0 or inf - inf after overflow; keep the bound conservative
    return tuple(np.where(np.isnan(v), np.inf, v) for v in parts)


def _gronwall_parts(coeffs: CoefficientPath, z: np.ndarray):
    t, A = coeffs.t, coeffs.A
    eA, emA = np.exp(A), np.exp(-A)
    aa, bb, cc = np.abs(coeffs.a), np.abs(coeffs.b), np.abs(coeffs.c)
    f2 = cumint(t, emA * cc)
    f1 = cumint(t, emA * cc * cumint(t, np.exp(2 * A) * bb))
    f0 = abs(z[0]) + f2 * abs(z[1])
    v1 = aa * emA
    v2 = bb * eA
    H = willett_bound(t, f0, f1, f2, v1, v2)
    b1 = H + eA * cumint(t, aa * emA * H)
    b2 = emA * abs(z[1]) + emA * (cumint(t, eA * bb * H) + cumint(t, np.exp(2 * A) * bb * cumint(t, aa * emA * H)))
    return f0, f1, f2, v1, v2, H, b1, b2


def xi_bounds(coeffs: CoefficientPath, xi0) -> GronwallData:
    """Right-hand sides bounding |xi1| and |xi2|, plus the quadrature self-check:
    the relative change of the bounds when every other node is dropped."""
    z = _xi0(xi0)
    parts = _gronwall(coeffs, z)
    data = GronwallData(coeffs.t.copy(), *parts)
    if len(coeffs.t) >= 5:
        sub = coeffs.subsampled()
        coarse = _gronwall(sub, z)
        idx = np.searchsorted(coeffs.t, sub.t)
        diffs = []
        for fine, c in ((parts[6], coarse[6]), (parts[7], coarse[7])):
            f = fine[idx]
            ok = np.isfinite(f) & np.isfinite(c)
            if not np.all(ok == np.isfinite(f)):
                diffs.append(np.inf)
            scale = np.maximum(np.abs(f[ok]), 1e-300)
            diffs.append(float(np.max(np.abs(f[ok] - c[ok]) / scale, initial=0.0)))
        data.halving_difference = max(diffs)
    return data


def write_gronwall_csv(data: GronwallData, xi_path: GradientPath, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "f0", "f1", "f2", "v1", "v2", "Hf0", "bound_xi1", "bound_xi2", "abs_xi1", "abs_xi2"])
        for i in range(len(data.t)):
            row = (data.t[i], data.f0[i], data.f1[i], data.f2[i], data.v1[i], data.v2[i], data.Hf0[i],
                   data.bound_xi1[i], data.bound_xi2[i], abs(xi_path.xi[i, 0]), abs(xi_path.xi[i, 1]))
            w.writerow([f"{v:.17g}" for v in row])
    return path


def gradient_consistency(coeffs: CoefficientPath, xi_path: GradientPath) -> float:
    """max |xi - grad omega(X)| / max |grad omega(X)| along the path."""
    ref = coeffs.meta.get("grad_field")
    if ref is None:
        raise InvalidArgument("coefficient path carries no field gradient samples")
    scale = float(np.max(np.abs(ref)))
    if scale == 0:
        return float(np.max(np.abs(xi_path.xi)))
    return float(np.max(np.abs(xi_path.xi - ref)) / scale)
