import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from doubleodd import biot_savart as bs
from doubleodd.errors import AxisPoint, InvalidArgument, InvalidField, SingularPoint
from doubleodd.field import GridField, TorusGrid, VorticityField

from conftest import PI, eigenfunction, random_double_odd
from oracles import fd_kernel_derivative as _fd, mp_kernel

unit = st.floats(0.01, 0.99)


def eig_q(x1, x2):
    return (math.sin(PI * x1) * math.cos(PI * x2) / (2 * PI * x1),
            math.cos(PI * x1) * math.sin(PI * x2) / (2 * PI * x2))


# --------------------------------------------------------------------------- spectral velocity


def test_velocity_eigenfunction(eig128):
    vel = bs.velocity_spectral(eig128)
    x1, x2 = eig128.grid.mesh
    assert np.max(np.abs(vel.u1.values + np.sin(PI * x1) * np.cos(PI * x2) / (2 * PI))) < 1e-14
    assert np.max(np.abs(vel.u2.values - np.cos(PI * x1) * np.sin(PI * x2) / (2 * PI))) < 1e-14


def test_velocity_zero_and_mean():
    g = TorusGrid(32)
    vel = bs.velocity_spectral(VorticityField(g, np.zeros((32, 32))))
    assert vel.max_speed() == 0.0
    with pytest.raises(InvalidField):
        bs.velocity_spectral(GridField(g, np.ones((32, 32))))


@pytest.mark.parametrize("seed", range(4))
def test_velocity_structure_random(seed):
    f = random_double_odd(128, seed)
    vel = bs.velocity_spectral(f)
    assert np.max(np.abs(vel.divergence())) < 1e-10
    pts = [[0, 0], [-1, -1], [0, -1], [-1, 0]]
    d = vel.evaluate(["u1", "u2"], pts)
    assert np.max(np.abs(d["u1"])) < 1e-10 and np.max(np.abs(d["u2"])) < 1e-10
    s = np.linspace(-1, 0.99, 17)
    on_x2_axis = np.stack([np.zeros_like(s), s], 1)
    on_x1_axis = np.stack([s, np.zeros_like(s)], 1)
    assert np.max(np.abs(vel.evaluate(["u1"], on_x2_axis)["u1"])) < 1e-10
    assert np.max(np.abs(vel.evaluate(["u2"], on_x1_axis)["u2"])) < 1e-10


def test_q_spectral_closed_form(eig128):
    q = bs.q_spectral(eig128, (0.2, 0.3))
    e1, e2 = eig_q(0.2, 0.3)
    assert abs(q.q1 - e1) < 1e-12 and abs(q.q2 - e2) < 1e-12
    assert q.method == "spectral"
    origin = bs.q_spectral(eig128, (0.0, 0.0))
    assert abs(origin.q1 - 0.5) < 1e-6 and abs(origin.q2 - 0.5) < 1e-6
    z = bs.q_spectral(VorticityField(eig128.grid, np.zeros((128, 128))), (0.2, 0.3))
    assert z.q1 == 0 and z.q2 == 0 and np.all(z.dq == 0)


def test_q_spectral_dq_finite_difference(eig128):
    x = np.array([0.31, 0.17])
    q = bs.q_spectral(eig128, x)
    eps = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = eps
        qp, qm = eig_q(*(x + e)), eig_q(*(x - e))
        for i in range(2):
            assert abs(q.dq[i, j] - (qp[i] - qm[i]) / (2 * eps)) < 1e-7


def test_axis_limits_continuous(eig128):
    on = bs.q_spectral(eig128, (0.0, 0.4))
    near = bs.q_spectral(eig128, (1e-5, 0.4))
    assert abs(on.q1 - near.q1) < 1e-8
    assert np.max(np.abs(on.dq[0] - near.dq[0])) < 1e-4


# --------------------------------------------------------------------------- kernels


def test_kernel_value_examples():
    x, y = (0.25, 0.25), (0.5, 0.5)
    assert abs(bs.kernel_value((1, 1), x, y) - 1.6) < 1e-14
    assert bs.kernel_value((2, 2), x, (0.4, 0.0)) == 0.0
    assert bs.kernel_value((1, 2), x, (0.0, 0.4)) == 0.0
    with pytest.raises(SingularPoint):
        bs.kernel_value((1, 1), x, x)
    with pytest.raises(SingularPoint):
        bs.kernel_derivative((1, 1), "x1", x, x)
    with pytest.raises(InvalidArgument):
        bs.KernelId.of((3, 1))
    with pytest.raises(InvalidArgument):
        bs.kernel_derivative((1, 1), "z", x, y)


@settings(max_examples=200, deadline=None)
@given(unit, unit, unit, unit)
def test_reflection_identities(x1, x2, y1, y2):
    d, dt, db, dp = bs.ReflectedPoint((x1, x2)).distances([y1, y2])
    assert dt[0] >= d[0] and db[0] >= d[0] and dp[0] >= db[0]


def test_mp_kernel_matches_kernel_value():
    rng = np.random.default_rng(3)
    for kid in bs.ALL_KERNELS:
        for _ in range(50):
            x, y = rng.uniform(0, 1, 2), rng.uniform(0, 1, 2)
            ref = float(mp_kernel(tuple(kid), *map(mpmath.mpf, (*x, *y))))
            assert abs(bs.kernel_value(kid, x, y) - ref) <= 1e-13 * abs(ref)


@pytest.mark.parametrize("kid", bs.ALL_KERNELS)
@pytest.mark.parametrize("wrt", bs.WRT)
def test_derivative_identities_spot(kid, wrt):
    rng = np.random.default_rng([kid.i, kid.k, bs.WRT.index(wrt)])
    done = 0
    while done < 50:
        x, y = rng.uniform(0, 1, 2), rng.uniform(0, 1, 2)
        if np.hypot(*(x - y)) <= 0.1:
            continue
        ref = _fd(kid, wrt, x, y)
        got = bs.kernel_derivative(kid, wrt, x, y)
        assert abs(got - ref) <= 1e-6 * abs(ref)
        done += 1


def test_derivative_at_reference_point():
    x, y = (0.25, 0.25), (0.5, 0.5)
    assert abs(bs.kernel_derivative((1, 1), "x2", x, y) - _fd((1, 1), "x2", x, y)) < 1e-8


def test_translation_antisymmetry():
    # G_1^1 depends on x2 only through y2 - x2, G_2^2 on x1 through y1 - x1
    rng = np.random.default_rng(7)
    for _ in range(100):
        x, y = rng.uniform(0.05, 0.95, 2), rng.uniform(0.05, 0.95, 2)
        for kid, j in (((1, 1), 2), ((2, 2), 1)):
            a = bs.kernel_derivative(kid, f"x{j}", x, y)
            b = bs.kernel_derivative(kid, f"y{j}", x, y)
            assert abs(a + b) < 1e-10 * max(1.0, abs(a))


def test_derivatives_on_vanishing_axis():
    x = np.array([0.3, 0.6])
    for y in ([0.7, 0.0], [0.0, 0.2]):
        for kid in bs.ALL_KERNELS:
            for wrt in bs.WRT:
                ref = _fd(kid, wrt, x, y)
                assert abs(bs.kernel_derivative(kid, wrt, x, y) - ref) <= 1e-6 * max(abs(ref), 1e-3)


def test_kernel_size_bound_fitted_constant():
    rng = np.random.default_rng(42)
    x = rng.uniform(0, 1, (10_000, 2))
    y = rng.uniform(0, 1, (10_000, 2))
    r = np.hypot(*(y - x).T)
    consts = []
    for i, k in bs.ALL_KERNELS:
        c = np.abs(bs.kernel_value((i, k), x, y)) * r * x[:, i - 1]
        consts.append((np.max(c[:5000]), np.max(c)))
    for half, full in consts:
        assert np.isfinite(full) and full < 10
        assert 0.5 <= half / full <= 2


# --------------------------------------------------------------------------- kernel quadrature


def test_q_kernel_zero_and_errors(eig128):
    z = VorticityField(eig128.grid, np.zeros((128, 128)))
    q = bs.q_kernel(z, (0.2, 0.3), images=1)
    assert q.q1 == 0 and q.q2 == 0
    with pytest.raises(AxisPoint):
        bs.q_kernel(eig128, (0.0, 0.3))
    with pytest.raises(AxisPoint):
        bs.q_kernel(eig128, (0.5, 0.005))
    with pytest.raises(InvalidArgument):
        bs.q_kernel(eig128, (0.2, 0.3), images=0)


def test_q_kernel_eigenfunction(eig128):
    q = bs.q_kernel(eig128, (0.2, 0.3), images=5)
    e1, e2 = eig_q(0.2, 0.3)
    assert abs(q.q1 - e1) / abs(e1) < 1e-3
    assert abs(q.q2 - e2) / abs(e2) < 1e-3
    meta = q.quadrature_meta
    assert meta["images"] == 5 and meta["exclusion_radius"] > 0
    # the tail estimate tracks the actual truncation error
    actual = max(abs(q.q1 - e1), abs(q.q2 - e2))
    assert 0.3 < meta["estimated_error"] / actual < 3


def test_q_kernel_along_diagonal(eig128):
    h = eig128.grid.h
    for s in (8 * h, 4 * h):
        q = bs.q_kernel(eig128, (s, s), images=5)
        assert abs(q.q1 - eig_q(s, s)[0]) < 2e-3


def test_truncation_error_decreases_with_images(eig128):
    e1 = eig_q(0.3, 0.6)[0]
    errs = [abs(bs.q_kernel(eig128, (0.3, 0.6), images=s).q1 - e1) for s in (1, 3, 6)]
    assert errs[0] > errs[1] > errs[2]


@pytest.mark.parametrize("seed", [1, 2])
def test_q_kernel_random_fields(seed):
    f = random_double_odd(256, seed)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.05, 0.95, (25, 2))
    scale = max(abs(v) for p in pts for v in (bs.q_spectral(f, p).q1, bs.q_spectral(f, p).q2))
    for p in pts:
        k, s = bs.q_kernel(f, p, images=5), bs.q_spectral(f, p)
        assert abs(k.q1 - s.q1) < 1e-2 * max(abs(s.q1), 0.1 * scale)
        assert abs(k.q2 - s.q2) < 1e-2 * max(abs(s.q2), 0.1 * scale)


def test_c0_calibration_stable():
    vals = [bs.calibrate_c0(eigenfunction(n)) for n in (64, 128, 256)]
    for v in vals:
        assert abs(v / bs.C0 - 1) < 1e-3


# --------------------------------------------------------------------------- principal value


def test_pv_zero_and_radii(eig128):
    z = VorticityField(eig128.grid, np.zeros((128, 128)))
    v, diag = bs.dq_principal_value(z, (0.3, 0.4), 1, 2, images=1)
    assert v == 0 and all(x == 0 for x in diag["values"])
    with pytest.raises(InvalidArgument):
        bs.dq_principal_value(eig128, (0.3, 0.4), 1, 1, radii=[0.02, 0.04])
    with pytest.raises(InvalidArgument):
        bs.dq_principal_value(eig128, (0.3, 0.4), 3, 1)


def test_pv_eigenfunction_reference_point(eig256):
    h = eig256.grid.h
    v, diag = bs.dq_principal_value(eig256, (0.25, 0.25), 2, 2, radii=[8 * h, 4 * h, 2 * h])
    ref = bs.q_spectral(eig256, (0.25, 0.25)).dq[1, 1]
    assert abs(v - ref) / abs(ref) < 1e-3
    # the raw sequence converges at second order in the radius
    e = [abs(u - ref) for u in diag["values"]]
    assert 3 < e[0] / e[1] < 5 and 3 < e[1] / e[2] < 5
    c = diag["circle"]
    assert abs(c[-1] - c[-2]) < 1e-3
