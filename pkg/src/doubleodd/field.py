"""Periodic scalar fields on the torus [-1, 1)^2.

Nodes sit at x_j = -1 + j*h with h = 2/n, so both coordinate axes (j = n/2)
and the reflections x1 -> -x1, x2 -> -x2 map the node set onto itself.
Arrays are indexed ``values[i1, i2]`` with the first index running along x1.

Fourier coefficients are the true coefficients of the trigonometric
interpolant, ``f(x) = sum_m c[m] exp(i*pi*(m1*x1 + m2*x2))`` with integer
wavenumbers ``m`` in numpy's ``fftfreq`` ordering.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument, InvalidField

__all__ = [
    "TorusGrid",
    "GridField",
    "VorticityField",
    "ScalarFieldSample",
    "symmetrize",
    "to_spectral",
    "from_spectral",
    "spectral_derivative",
    "sample",
    "evaluate",
    "evaluate_spectral",
    "write_field",
    "read_field",
]

BINARY_MAGIC = b"DOFIELD1"


@dataclass(frozen=True)
class TorusGrid:
    n: int

    def __post_init__(self):
        n = self.n
        if not isinstance(n, (int, np.integer)) or n < 8 or n & (n - 1):
            raise InvalidArgument(f"grid size must be a power of two >= 8, got {n!r}")

    @property
    def h(self) -> float:
        return 2.0 / self.n

    @cached_property
    def coords(self) -> np.ndarray:
        return -1.0 + self.h * np.arange(self.n)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(self.coords, self.coords, indexing="ij"))

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers m; the physical wavenumber is pi*m."""
        return np.fft.fftfreq(self.n, 1.0 / self.n)

    @property
    def origin_index(self) -> int:
        return self.n // 2

    def index_of(self, x):
        """Fractional node index of coordinate(s) x."""
        return (np.asarray(x, dtype=float) + 1.0) / self.h

    def quadrant_indices(self) -> np.ndarray:
        """Node indices covering [0, 1] along one axis (x = 1 wraps to index 0)."""
        return (np.arange(self.n // 2, self.n + 1)) % self.n

    def reflect(self, values: np.ndarray, axis: int) -> np.ndarray:
        """values at the mirrored node, i.e. v(-x) along ``axis``."""
        return np.roll(np.flip(values, axis=axis), 1, axis=axis)


@dataclass(frozen=True)
class ScalarFieldSample:
    point: tuple[float, float]
    value: float
    gradient: tuple[float, float] | None = None


@dataclass(frozen=True, eq=False)
class GridField:
    """Immutable snapshot of a real periodic field sampled on a TorusGrid."""

    grid: TorusGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != (self.grid.n, self.grid.n):
            raise InvalidField(f"values shape {v.shape} does not match grid n={self.grid.n}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "time", float(self.time))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn, time: float = 0.0):
        x1, x2 = grid.mesh
        return cls(grid, fn(x1, x2), time)

    def with_values(self, values, time=None):
        return type(self)(self.grid, values, self.time if time is None else time)

    @cached_property
    def spectral(self) -> np.ndarray:
        return to_spectral(self)

    @cached_property
    def spline_coefficients(self) -> np.ndarray:
        return ndimage.spline_filter(self.values, order=3, mode="grid-wrap")

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def mean(self) -> float:
        return float(np.mean(self.values))

    def l2_norm(self) -> float:
        """Grid L2 norm, sqrt(sum v^2 h^2)."""
        return float(np.sqrt(np.sum(self.values**2)) * self.grid.h)

    def is_double_odd(self, atol: float = 0.0) -> bool:
        g, v = self.grid, self.values
        r1 = g.reflect(v, 0)
        r2 = g.reflect(v, 1)
        return bool(np.all(np.abs(v + r1) <= atol) and np.all(np.abs(v + r2) <= atol))


class VorticityField(GridField):
    """Vorticity snapshot; values must be finite."""

    def __post_init__(self):
        super().__post_init__()
        if not np.all(np.isfinite(self.values)):
            raise InvalidField("vorticity contains non-finite values")


def symmetrize(field: GridField) -> GridField:
    """Project onto double-odd fields by averaging the four signed reflections.

    The grouping ((v - R1 v) - (R2 v - R12 v)) / 4 makes the result exactly odd
    in floating point and the projection exactly idempotent.
    """
    g, v = field.grid, field.values
    r1 = g.reflect(v, 0)
    r2 = g.reflect(v, 1)
    r12 = g.reflect(r1, 1)
    out = ((v - r1) - (r2 - r12)) / 4.0
    return field.with_values(out)


def _phase(grid: TorusGrid) -> np.ndarray:
    m = grid.wavenumbers
    s = np.where(m.astype(np.int64) % 2 == 0, 1.0, -1.0)
    return np.outer(s, s)


def to_spectral(field: GridField) -> np.ndarray:
    v = field.values
    if not np.all(np.isfinite(v)):
        raise InvalidField("cannot transform a field with non-finite values")
    n = field.grid.n
    return np.fft.fft2(v) * _phase(field.grid) / (n * n)


def from_spectral(grid: TorusGrid, coeffs: np.ndarray, time: float = 0.0, cls=GridField):
    n = grid.n
    values = np.real(np.fft.ifft2(coeffs * _phase(grid) * (n * n)))
    return cls(grid, values, time)


def derivative_multiplier(grid: TorusGrid, order1: int, order2: int) -> np.ndarray:
    """Spectral multiplier for d^order1/dx1 d^order2/dx2 (Nyquist dropped on odd orders)."""
    m = grid.wavenumbers
    nyq = np.abs(m) == grid.n // 2
    k = 1j * np.pi * m
    f1 = k**order1
    f2 = k**order2
    if order1 % 2:
        f1 = np.where(nyq, 0.0, f1)
    if order2 % 2:
        f2 = np.where(nyq, 0.0, f2)
    return np.outer(f1, f2)


def spectral_derivative(field: GridField, axis: int, order: int = 1) -> GridField:
    """d^order(field)/dx_axis with axis in {1, 2}."""
    if axis not in (1, 2):
        raise InvalidArgument(f"axis must be 1 or 2, got {axis!r}")
    o1, o2 = (order, 0) if axis == 1 else (0, order)
    coeffs = field.spectral * derivative_multiplier(field.grid, o1, o2)
    return from_spectral(field.grid, coeffs, field.time)


def _as_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    return p.reshape(-1, 2)


def evaluate_spectral(grid: TorusGrid, coeffs: np.ndarray, points, chunk: int = 2048) -> np.ndarray:
    """Evaluate the trigonometric interpolant with coefficients ``coeffs`` at points.

    Cost is O(n^2) per point. The Nyquist column uses cos so the interpolant of
    real data stays real off the nodes.
    """
    p = _as_points(points)
    m = grid.wavenumbers
    nyq = np.abs(m) == grid.n // 2
    out = np.empty(len(p))
    for s in range(0, len(p), chunk):
        q = p[s : s + chunk]
        e1 = np.exp(1j * np.pi * np.outer(q[:, 0], m))
        e2 = np.exp(1j * np.pi * np.outer(q[:, 1], m))
        e1[:, nyq] = np.cos(np.pi * np.outer(q[:, 0], m[nyq]))
        e2[:, nyq] = np.cos(np.pi * np.outer(q[:, 1], m[nyq]))
        out[s : s + chunk] = np.real(np.sum((e1 @ coeffs) * e2, axis=1))
    return out


def evaluate_spline(grid: TorusGrid, spline_coeffs: np.ndarray, points) -> np.ndarray:
    """Periodic cubic-spline interpolation from prefiltered coefficients."""
    p = _as_points(points)
    idx = grid.index_of(p).T
    return ndimage.map_coordinates(spline_coeffs, idx, order=3, mode="grid-wrap", prefilter=False)


def evaluate(field: GridField, points, method: str = "bicubic") -> np.ndarray:
    """Vectorised point evaluation. ``bicubic`` is O(h^4); ``spectral`` is exact
    for band-limited data."""
    if method == "bicubic":
        return evaluate_spline(field.grid, field.spline_coefficients, points)
    if method == "spectral":
        return evaluate_spectral(field.grid, field.spectral, points)
    raise InvalidArgument(f"unknown interpolation method {method!r}")


def sample(field: GridField, point, method: str = "bicubic", gradient: bool = False) -> ScalarFieldSample:
    p = _as_points(point)
    if p.shape[0] != 1:
        raise InvalidArgument("sample takes a single point; use evaluate for many")
    x1, x2 = (float(c) for c in p[0])
    if not (-1.0 <= x1 < 1.0 and -1.0 <= x2 < 1.0):
        raise InvalidArgument(f"point {(x1, x2)} outside the fundamental domain")
    value = float(evaluate(field, p, method)[0])
    grad = None
    if gradient:
        d1 = spectral_derivative(field, 1)
        d2 = spectral_derivative(field, 2)
        grad = (float(evaluate(d1, p, method)[0]), float(evaluate(d2, p, method)[0]))
    return ScalarFieldSample((x1, x2), value, grad)


# --------------------------------------------------------------------------- io


def write_field(field: GridField, path) -> Path:
    """Write CSV (``.csv``) or little-endian binary (anything else).

    CSV: one header line ``# n=<n> time=<repr>``, then n rows (x1 index) of n
    comma-separated values (x2 index), each printed with 17 significant digits.
    Binary: 8-byte magic ``DOFIELD1``, uint64 n, float64 time, then n*n float64
    values row-major; all little-endian.
    """
    path = Path(path)
    if path.suffix == ".csv":
        lines = [f"# n={field.grid.n} time={field.time!r}"]
        lines += [",".join(f"{v:.17g}" for v in row) for row in field.values]
        path.write_text("\n".join(lines) + "\n")
    else:
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<Qd", field.grid.n, field.time))
            fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())
    return path


def read_field(path, cls=VorticityField) -> GridField:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path) as fh:
            header = fh.readline()
            meta = dict(tok.split("=") for tok in header.lstrip("#").split())
            values = np.loadtxt(fh, delimiter=",", ndmin=2)
        n = int(meta["n"])
        return cls(TorusGrid(n), values.reshape(n, n), float(meta["time"]))
    raw = path.read_bytes()
    if raw[:8] != BINARY_MAGIC:
        raise InvalidField(f"{path} is not a field file")
    n, time = struct.unpack("<Qd", raw[8:24])
    values = np.frombuffer(raw[24:], dtype="<f8").reshape(n, n)
    return cls(TorusGrid(int(n)), values, time)
