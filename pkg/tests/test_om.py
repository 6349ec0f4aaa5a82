import io

import numpy as np
import pytest

from mppflow.errors import NonConvergence
from mppflow.fields import GaussianKernel
from mppflow.geometry import geometry_jet
from mppflow.om import (
    Path,
    direct_minimize,
    fd_velocities,
    om_gradient,
    om_integral,
    om_integrand,
    path_from_csv,
    path_to_csv,
)
from mppflow.mpp import integrate_mpp, shoot, ShootingProblem

from conftest import conformal_noise, flat_noise, kernel_noise


def straight(x0, xT, T, N):
    times = np.linspace(0.0, T, N + 1)
    pts = np.asarray(x0) + (times / T)[:, None] * (np.asarray(xT) - np.asarray(x0))
    return Path(times, pts)


# ---------------------------------------------------------------- integrand


def test_integrand_flat_is_kinetic_energy():
    nm = flat_noise(2)
    v = np.array([0.7, -0.4])
    H = om_integrand(nm, None, 0.0, np.array([0.3, 0.1]), v)
    assert abs(H - 0.5 * v @ v) < 1e-14


def test_integrand_at_drift_velocity_leaves_potential():
    nm = kernel_noise(seed=21)
    u = GaussianKernel([0.0, 0.0], [0.3, 0.2], 0.8)
    x = np.array([0.2, -0.3])
    jet = geometry_jet(nm, u, 0.0, x, order=2)
    H = om_integrand(nm, u, 0.0, x, jet.z)
    assert abs(H - jet.f) < 1e-14


def test_integrand_conformal_center():
    nm = conformal_noise(0.3)
    x0 = np.zeros(2)
    jet = geometry_jet(nm, None, 0.0, x0, order=2)
    H = om_integrand(nm, None, 0.0, x0, np.array([1.0, 0.0]))
    assert abs(H - (0.5 + jet.f)) < 1e-12


# ---------------------------------------------------------------- integral


def test_integral_flat_straight_line():
    nm = flat_noise(2)
    p = np.array([1.0, 0.0])
    for T in (1.0, 2.5):
        path = straight(np.zeros(2), p, T, 64)
        assert abs(om_integral(nm, None, path) - (p @ p) / (2 * T)) < 1e-12


def test_integral_flat_nonstraight_strictly_larger():
    nm = flat_noise(2)
    base = straight(np.zeros(2), np.array([1.0, 0.0]), 1.0, 64)
    bent = Path(
        base.times,
        base.points + np.column_stack([np.zeros(65), 0.2 * np.sin(np.pi * base.times)]),
    )
    assert om_integral(nm, None, bent) > om_integral(nm, None, base) + 1e-3


def test_integral_grid_refinement():
    nm = conformal_noise(0.3)
    x0, xT = np.array([-0.5, -0.3]), np.array([0.6, 0.4])
    T = 1.0
    v0, _ = shoot(nm, None, ShootingProblem(x0, xT, T, tolerance=1e-10), 100)
    coarse = om_integral(nm, None, integrate_mpp(nm, None, x0, v0, T, 80))
    fine = om_integral(nm, None, integrate_mpp(nm, None, x0, v0, T, 800))
    assert abs(coarse - fine) / abs(fine) < 1e-4


def test_integral_quadrature_order():
    nm = conformal_noise(0.3)
    x0 = np.array([-0.5, -0.3])
    v0 = np.array([1.0, 0.8])
    vals = [om_integral(nm, None, integrate_mpp(nm, None, x0, v0, 1.0, N)) for N in (50, 100, 200)]
    ratio = (vals[0] - vals[1]) / (vals[1] - vals[2])
    assert 3.5 < ratio < 4.5


# ---------------------------------------------------------------- gradient


def test_gradient_matches_fd():
    nm = kernel_noise(seed=23)
    u = GaussianKernel([0.1, 0.0], [0.2, 0.3], 0.9)
    rng = np.random.default_rng(24)
    N = 10
    times = np.linspace(0.0, 1.0, N + 1)
    pts = straight(np.zeros(2), np.array([0.8, 0.3]), 1.0, N).points.copy()
    pts[1:-1] += rng.normal(size=(N - 1, 2)) * 0.05
    path = Path(times, pts)
    val, grad = om_gradient(nm, u, path)
    assert abs(val - om_integral(nm, u, path)) < 1e-14
    h = 1e-6
    for k in (1, N // 2, N - 1):
        for i in range(2):
            pp = pts.copy()
            pp[k, i] += h
            pm = pts.copy()
            pm[k, i] -= h
            fd = (om_integral(nm, u, Path(times, pp)) - om_integral(nm, u, Path(times, pm))) / (2 * h)
            assert abs(grad[k, i] - fd) < 1e-8


def test_first_variation_vanishes_at_ode_solution():
    nm = conformal_noise(0.3)
    x0 = np.array([-0.5, -0.3])
    v0 = np.array([1.0, 0.8])
    norms = []
    for N in (50, 100, 200):
        path = integrate_mpp(nm, None, x0, v0, 1.0, N)
        _, grad = om_gradient(nm, None, path)
        norms.append(np.abs(grad[1:-1]).max())
    assert norms[2] <= 1e-3
    assert norms[0] > norms[2]  # shrinks with refinement


# ---------------------------------------------------------------- minimizer


def test_direct_minimize_flat_straight_line():
    nm = flat_noise(2)
    res = direct_minimize(nm, None, np.zeros(2), np.array([1.0, 0.5]), 1.0, 40)
    line = straight(np.zeros(2), np.array([1.0, 0.5]), 1.0, 40)
    assert np.abs(res.points[1:-1] - line.points[1:-1]).max() < 1e-6


def test_direct_minimize_descends():
    nm = conformal_noise(0.3)
    x0, xT = np.array([-0.5, -0.3]), np.array([0.6, 0.4])
    init = straight(x0, xT, 1.0, 60)
    init_pts = init.points.copy()
    init_pts[1:-1] += 0.1 * np.sin(np.pi * init.times[1:-1])[:, None]
    init = Path(init.times, init_pts)
    res = direct_minimize(nm, None, x0, xT, 1.0, 60, init=init)
    assert om_integral(nm, None, res) <= om_integral(nm, None, init)
    assert np.allclose(res.points[0], x0) and np.allclose(res.points[-1], xT)


def test_direct_minimize_matches_shoot():
    nm = conformal_noise(0.3)
    x0, xT = np.array([-0.5, -0.3]), np.array([0.6, 0.4])
    _, shot = shoot(nm, None, ShootingProblem(x0, xT, 1.0, tolerance=1e-10), 100)
    mini = direct_minimize(nm, None, x0, xT, 1.0, 100)
    assert np.abs(shot.points - mini.points).max() < 1e-3


def test_direct_minimize_nonconvergence_reports_best():
    nm = conformal_noise(0.3)
    with pytest.raises(NonConvergence) as exc:
        direct_minimize(nm, None, np.array([-0.5, -0.3]), np.array([0.6, 0.4]), 1.0, 40, max_iter=2)
    assert exc.value.best is not None
    assert exc.value.residual > 0


def test_direct_minimize_rejects_bad_init():
    nm = flat_noise(2)
    bad = straight(np.zeros(2), np.array([2.0, 0.0]), 1.0, 20)
    with pytest.raises(ValueError):
        direct_minimize(nm, None, np.zeros(2), np.array([1.0, 0.0]), 1.0, 20, init=bad)


# ---------------------------------------------------------------- path type


def test_path_validation():
    with pytest.raises(ValueError):
        Path(np.array([0.0, 1.0]), np.zeros((2, 2)))  # too short
    with pytest.raises(ValueError):
        Path(np.array([0.0, 0.0, 1.0]), np.zeros((3, 2)))  # not increasing
    with pytest.raises(ValueError):
        Path(np.array([0.0, 0.5, 1.0]), np.full((3, 2), np.nan))


def test_velocities_order2():
    # exact for quadratics in t
    times = np.linspace(0.0, 1.0, 11)
    pts = np.column_stack([times**2, 1.0 - times])
    v = fd_velocities(Path(times, pts))
    expected = np.column_stack([2 * times, -np.ones(11)])
    assert np.abs(v - expected).max() < 1e-12


def test_path_csv_roundtrip():
    times = np.linspace(0.0, 1.0, 9)
    pts = np.column_stack([np.sin(times), np.cos(times)])
    path = Path(times, pts)
    buf = io.StringIO()
    path_to_csv(path, buf)
    buf.seek(0)
    assert buf.getvalue().splitlines()[0] == "t,x1,x2"
    back = path_from_csv(io.StringIO(buf.getvalue()))
    assert np.array_equal(back.times, times)
    assert np.array_equal(back.points, pts)
