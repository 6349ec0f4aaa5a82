"""The path functional: integrand, quadrature, and a direct variational
minimizer used as an independent cross-check of the shooting solver.

The discrete functional is the broken-line (midpoint) action: each segment
contributes dt * H(t_mid, x_mid, dx/dt). That rule is order-2 accurate and,
unlike nodal quadrature with one-sided endpoint velocities, its discrete
Euler-Lagrange equations are consistent at every interior node, so the
minimizer and the ODE solver converge to the same curves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .errors import NonConvergence
from .fields import NoiseModel
from .geometry import geometry_jet

__all__ = [
    "Path",
    "fd_velocities",
    "om_integrand",
    "om_integral",
    "om_gradient",
    "direct_minimize",
    "path_to_csv",
    "path_from_csv",
]

_es = np.einsum


@dataclass
class Path:
    """Discretized curve t_k -> x_k. ``velocities`` are optional analytic
    values (e.g. from the ODE integrator); quadrature always re-derives
    centered-difference velocities so functional values are comparable
    across paths of different provenance."""

    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.velocities is not None:
            self.velocities = np.asarray(self.velocities, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 3:
            raise ValueError("need at least 3 nodes (N >= 2)")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.points.shape[0] != len(self.times):
            raise ValueError("points/times length mismatch")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite path points")

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def x0(self):
        return self.points[0]

    @property
    def xT(self):
        return self.points[-1]


def fd_velocities(path: Path) -> np.ndarray:
    return np.gradient(path.points, path.times, axis=0, edge_order=2)


def om_integrand(noise: NoiseModel, drift, t, x, v):
    """H(t, x, v) = (1/2) |v - z|_g^2 + f."""
    jet = geometry_jet(noise, drift, t, x, order=2)
    r = np.asarray(v, dtype=float) - jet.z
    return 0.5 * _es("...m,...mn,...n->...", r, jet.metric, r) + jet.f


def _segment_data(path: Path):
    times, pts = path.times, path.points
    dt = np.diff(times)
    tm = 0.5 * (times[1:] + times[:-1])
    xm = 0.5 * (pts[1:] + pts[:-1])
    v = np.diff(pts, axis=0) / dt[:, None]
    return dt, tm, xm, v


def om_integral(noise: NoiseModel, drift, path: Path) -> float:
    """Midpoint-rule quadrature of the integrand along the path."""
    dt, tm, xm, v = _segment_data(path)
    h = om_integrand(noise, drift, tm, xm, v)
    return float(np.sum(dt * h))


def om_gradient(noise: NoiseModel, drift, path: Path):
    """Value and exact gradient of the discrete functional w.r.t. all nodes.

    Differentiates the midpoint quadrature rule itself, so the gradient is
    the forward derivative of exactly what ``om_integral`` computes.
    """
    dt, tm, xm, v = _segment_data(path)
    jet = geometry_jet(noise, drift, tm, xm, order=3)
    r = v - jet.z
    p = _es("kmn,kn->km", jet.metric, r)
    value = float(np.sum(dt * (0.5 * np.sum(r * p, axis=1) + jet.f)))

    dH_x = (
        0.5 * _es("km,kimn,kn->ki", r, jet.metric_d, r)
        - _es("kmi,km->ki", jet.z_jacobian, p)
        + jet.f_d
    )
    seg = dt[:, None] * dH_x  # segment contribution through the midpoint
    grad = np.zeros_like(path.points)
    grad[:-1] += 0.5 * seg
    grad[1:] += 0.5 * seg
    grad[:-1] -= p
    grad[1:] += p
    return value, grad


def direct_minimize(
    noise: NoiseModel,
    drift,
    x0,
    xT,
    T: float,
    N: int,
    init: Path | None = None,
    gtol: float = 1e-8,
    max_iter: int = 10000,
) -> Path:
    """Minimize the discrete functional over interior nodes, endpoints
    pinned.

    L-BFGS with the exact discrete gradient, followed by a Barzilai-Borwein
    polish until the interior gradient max-norm drops below ``gtol``. Raises
    ``NonConvergence`` (carrying the best path) if the cap is hit first.
    """
    x0 = np.asarray(x0, dtype=float)
    xT = np.asarray(xT, dtype=float)
    d = x0.shape[0]
    times = np.linspace(0.0, T, N + 1)
    if init is None:
        pts = x0 + (xT - x0) * (times / T)[:, None]
    else:
        if not (
            np.allclose(init.x0, x0, atol=1e-12) and np.allclose(init.xT, xT, atol=1e-12)
        ):
            raise ValueError("init path endpoints do not match the problem")
        if len(init.times) != N + 1:
            raise ValueError("init path must live on the same N+1 grid")
        pts = init.points.copy()
        times = init.times

    def pack(p):
        return p[1:-1].ravel()

    def unpack(vec):
        q = pts.copy()
        q[1:-1] = vec.reshape(N - 1, d)
        return q

    def objective(vec):
        pth = Path(times, unpack(vec))
        val, grad = om_gradient(noise, drift, pth)
        return val, grad[1:-1].ravel()

    res = _scipy_minimize(
        objective,
        pack(pts),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": 1e-18, "gtol": gtol, "maxcor": 20},
    )
    vec = res.x
    val, grad = objective(vec)
    g_norm = np.abs(grad).max()
    iters = res.nit
    # BB polish: L-BFGS may stop on its own criteria slightly above gtol
    g_prev = None
    v_prev = None
    step = 1e-2
    while g_norm > gtol and iters < max_iter:
        if g_prev is not None:
            dv = vec - v_prev
            dg = grad - g_prev
            denom = dv @ dg
            step = (dv @ dv) / denom if abs(denom) > 1e-300 else step
            if not np.isfinite(step) or step <= 0:
                step = 1e-2
        v_prev, g_prev = vec.copy(), grad.copy()
        vec = vec - step * grad
        val, grad = objective(vec)
        g_norm = np.abs(grad).max()
        iters += 1
    best = Path(times, unpack(vec))
    if g_norm > gtol:
        raise NonConvergence(
            f"minimizer stopped at gradient max-norm {g_norm:.3e} after {iters} iterations",
            best=best,
            residual=g_norm,
        )
    return best


def path_to_csv(path: Path, file) -> None:
    d = path.dim
    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "w", newline="")
        close = True
    try:
        wr = csv.writer(file)
        wr.writerow(["t"] + [f"x{i + 1}" for i in range(d)])
        for t, x in zip(path.times, path.points):
            wr.writerow([repr(float(t))] + [repr(float(c)) for c in x])
    finally:
        if close:
            file.close()


def path_from_csv(file) -> Path:
    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "r", newline="")
        close = True
    try:
        rd = csv.reader(file)
        header = next(rd)
        if header[0] != "t":
            raise ValueError("path CSV must start with a 't' column")
        rows = [[float(c) for c in row] for row in rd if row]
    finally:
        if close:
            file.close()
    arr = np.asarray(rows, dtype=float)
    return Path(arr[:, 0], arr[:, 1:])
