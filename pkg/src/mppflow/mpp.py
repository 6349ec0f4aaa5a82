"""Forward integration of the most-probable-path ODE and the two-point
boundary solver.

The ODE is integrated in (x, a) variables with a = xdot - z(t, x); this is
the Euler-Lagrange form of the path functional and needs only spatial jets
at the current time:

    dx = a + z
    da^k = - Gamma^k_ij dx^i a^j - [gdot(a,.)^sharp]^k - [(nabla z)* a]^k
           + (grad f)^k

Everything is batched over tracked points: one RK4 sweep advances all
landmarks (and, during shooting, all finite-difference Jacobian columns) per
geometry evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import BlowUpError, NonConvergence
from .fields import NoiseModel
from .geometry import geometry_jet
from .om import Path

__all__ = [
    "MppState",
    "ShootingProblem",
    "curve_rhs",
    "integrate_mpp",
    "shoot",
    "mpp_flow",
    "FlowResult",
    "deterministic_flow",
]

_es = np.einsum


@dataclass
class MppState:
    """x and the shifted velocity a = xdot - z(t, x)."""

    x: np.ndarray
    a: np.ndarray


@dataclass
class ShootingProblem:
    x0: np.ndarray
    xT: np.ndarray
    T: float
    tolerance: float = 1e-8
    max_iter: int = 50

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.xT = np.asarray(self.xT, dtype=float)
        if self.T <= 0:
            raise ValueError("horizon T must be positive")


def _rhs_batch(noise, drift, t, X, Aa):
    jet = geometry_jet(noise, drift, t, X, order=3)
    dx = Aa + jet.z
    gam = _es("pkij,pi,pj->pk", jet.christoffel, dx, Aa)
    gdot_sharp = _es("pkj,pji,pi->pk", jet.cometric, jet.metric_dt, Aa)
    adj = _es("pkm,pi,pis,psm->pk", jet.cometric, Aa, jet.metric, jet.z_covariant)
    da = -gam - gdot_sharp - adj + jet.grad_f
    return dx, da


def curve_rhs(noise: NoiseModel, drift, t: float, state: MppState):
    """Right-hand side of the (x, a) system at a single state."""
    X = np.asarray(state.x, dtype=float)[None, :]
    Aa = np.asarray(state.a, dtype=float)[None, :]
    dx, da = _rhs_batch(noise, drift, t, X, Aa)
    return dx[0], da[0]


def _integrate_batch(noise, drift, X0, A0, T, N, bound=1e6, store=False):
    """Classic RK4 on the stacked batch. Rows that blow up are frozen at
    their last finite state and reported in the returned mask."""
    X = X0.copy()
    A = A0.copy()
    P = X.shape[0]
    h = T / N
    active = np.ones(P, dtype=bool)
    freeze_t = np.full(P, np.nan)
    traj_X = traj_A = None
    if store:
        traj_X = np.empty((N + 1,) + X.shape)
        traj_A = np.empty((N + 1,) + A.shape)
        traj_X[0] = X
        traj_A[0] = A
    for k in range(N):
        t = k * h
        Xp, Ap = X.copy(), A.copy()
        k1x, k1a = _rhs_batch(noise, drift, t, X, A)
        k2x, k2a = _rhs_batch(noise, drift, t + 0.5 * h, X + 0.5 * h * k1x, A + 0.5 * h * k1a)
        k3x, k3a = _rhs_batch(noise, drift, t + 0.5 * h, X + 0.5 * h * k2x, A + 0.5 * h * k2a)
        k4x, k4a = _rhs_batch(noise, drift, t + h, X + h * k3x, A + h * k3a)
        Xn = X + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        An = A + (h / 6.0) * (k1a + 2 * k2a + 2 * k3a + k4a)
        upd = active[:, None]
        X = np.where(upd, Xn, X)
        A = np.where(upd, An, A)
        bad = active & (
            ~np.all(np.isfinite(X), axis=1)
            | ~np.all(np.isfinite(A), axis=1)
            | (np.linalg.norm(X, axis=1) > bound)
        )
        if np.any(bad):
            X[bad] = Xp[bad]
            A[bad] = Ap[bad]
            active[bad] = False
            freeze_t[bad] = t + h
        if store:
            traj_X[k + 1] = X
            traj_A[k + 1] = A
    blown = ~active
    if store:
        return traj_X, traj_A, blown, freeze_t
    return X, A, blown, freeze_t


def _z_at(noise, drift, t, X):
    return geometry_jet(noise, drift, t, X, order=2).z


def integrate_mpp(
    noise: NoiseModel,
    drift,
    x0,
    v0,
    T: float,
    N: int,
    bound: float = 1e6,
) -> Path:
    """Integrate the path ODE from (x0, v0); returns the path with analytic
    velocities a + z."""
    x0 = np.asarray(x0, dtype=float)[None, :]
    v0 = np.asarray(v0, dtype=float)[None, :]
    a0 = v0 - _z_at(noise, drift, 0.0, x0)
    tX, tA, blown, freeze_t = _integrate_batch(noise, drift, x0, a0, T, N, bound, store=True)
    if blown[0]:
        raise BlowUpError(float(freeze_t[0]), float(np.linalg.norm(tX[-1, 0])), bound)
    times = np.linspace(0.0, T, N + 1)
    pts = tX[:, 0, :]
    z_nodes = _z_at(noise, drift, times, pts)
    vel = tA[:, 0, :] + z_nodes
    return Path(times, pts, vel)


def _endpoint_sweep(noise, drift, X0, Vs, T, N, bound, fd_step):
    """Endpoints for each landmark and each Jacobian column in one batch.

    Returns (end (P,d), J (P,d,d), blown (P,)).
    """
    P, d = X0.shape
    eps = fd_step * (1.0 + np.abs(Vs))  # (P, d)
    Vstack = np.concatenate([Vs] + [_col(Vs, j, eps) for j in range(d)], axis=0)
    X0stack = np.tile(X0, (d + 1, 1))
    A0stack = Vstack - _z_at(noise, drift, 0.0, X0stack)
    Xe, _, blown, _ = _integrate_batch(noise, drift, X0stack, A0stack, T, N, bound, store=False)
    end = Xe[:P]
    J = np.empty((P, d, d))
    for j in range(d):
        J[:, :, j] = (Xe[(j + 1) * P : (j + 2) * P] - end) / eps[:, j : j + 1]
    return end, J, blown[:P].copy()


def _col(Vs, j, eps):
    out = Vs.copy()
    out[:, j] += eps[:, j]
    return out


def _shoot_batch(
    noise,
    drift,
    X0,
    XT,
    T,
    N,
    tol=1e-8,
    max_iter=50,
    v0=None,
    bound=1e6,
    fd_step=1e-6,
):
    """Damped Newton on the endpoint map for a batch of landmarks.

    Each landmark carries its own Levenberg-Marquardt damping ``mu`` which
    stays at zero while plain Newton keeps reducing the residual and grows
    when a trial step fails.
    """
    P, d = X0.shape
    V = ((XT - X0) / T).copy() if v0 is None else np.asarray(v0, dtype=float).copy()
    end, J, blown = _endpoint_sweep(noise, drift, X0, V, T, N, bound, fd_step)
    R = end - XT
    rnorm = np.linalg.norm(R, axis=1)
    mu = np.zeros(P)
    n_iter = np.zeros(P, dtype=int)
    for _ in range(max_iter):
        act = (rnorm > tol) & ~blown
        if not np.any(act):
            break
        idx = np.flatnonzero(act)
        Vtrial = V.copy()
        for p in idx:
            Jp = J[p]
            rp = R[p]
            if mu[p] == 0.0:
                try:
                    step = np.linalg.solve(Jp, -rp)
                except np.linalg.LinAlgError:
                    mu[p] = 1e-6
                    step = None
            else:
                step = None
            if step is None:
                JtJ = Jp.T @ Jp
                step = np.linalg.solve(
                    JtJ + mu[p] * np.trace(JtJ) / d * np.eye(d), -Jp.T @ rp
                )
            Vtrial[p] = V[p] + step
        end_t, J_t, blown_t = _endpoint_sweep(
            noise, drift, X0[idx], Vtrial[idx], T, N, bound, fd_step
        )
        R_t = end_t - XT[idx]
        rn_t = np.linalg.norm(R_t, axis=1)
        for q, p in enumerate(idx):
            n_iter[p] += 1
            if blown_t[q]:
                mu[p] = max(mu[p] * 10.0, 1e-4)
                continue
            if rn_t[q] < rnorm[p]:
                # stalling Newton (reduction < 1%) switches damping on
                if mu[p] == 0.0 and rn_t[q] > 0.99 * rnorm[p]:
                    mu[p] = 1e-6
                else:
                    mu[p] = mu[p] / 3.0 if mu[p] > 1e-12 else 0.0
                V[p] = Vtrial[p]
                R[p] = R_t[q]
                J[p] = J_t[q]
                rnorm[p] = rn_t[q]
            else:
                mu[p] = max(mu[p] * 10.0, 1e-6)
    converged = (rnorm <= tol) & ~blown
    return V, rnorm, converged, blown, n_iter


def shoot(
    noise: NoiseModel,
    drift,
    prob: ShootingProblem,
    N: int,
    v0=None,
    bound: float = 1e6,
):
    """Solve the two-point problem; returns (v0, path).

    Raises ``NonConvergence`` with the best iterate attached if the residual
    tolerance is not met within ``prob.max_iter`` Newton sweeps.
    """
    X0 = prob.x0[None, :]
    XT = prob.xT[None, :]
    V, rnorm, converged, blown, _ = _shoot_batch(
        noise,
        drift,
        X0,
        XT,
        prob.T,
        N,
        tol=prob.tolerance,
        max_iter=prob.max_iter,
        v0=None if v0 is None else np.asarray(v0, dtype=float)[None, :],
        bound=bound,
    )
    path = integrate_mpp(noise, drift, prob.x0, V[0], prob.T, N, bound=bound)
    if not converged[0]:
        raise NonConvergence(
            f"shooting residual {rnorm[0]:.3e} above tolerance {prob.tolerance:.1e}",
            best=(V[0], path),
            residual=float(rnorm[0]),
        )
    return V[0], path


def deterministic_flow(drift, points, T: float, N: int):
    """RK4 characteristics of the plain drift (the zero-noise flow)."""
    X = np.atleast_2d(np.asarray(points, dtype=float)).copy()
    P, d = X.shape
    h = T / N
    traj = np.empty((N + 1, P, d))
    traj[0] = X

    def vel(t, Y):
        if drift is None:
            return np.zeros_like(Y)
        return drift._jet(t, Y, 0)[0]

    for k in range(N):
        t = k * h
        k1 = vel(t, X)
        k2 = vel(t + 0.5 * h, X + 0.5 * h * k1)
        k3 = vel(t + 0.5 * h, X + 0.5 * h * k2)
        k4 = vel(t + h, X + h * k3)
        X = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        traj[k + 1] = X
    times = np.linspace(0.0, T, N + 1)
    return [Path(times, traj[:, p, :]) for p in range(P)]


@dataclass
class FlowResult:
    """Per-point outcome of a most-probable-flow computation."""

    paths: list
    v0: np.ndarray
    residuals: np.ndarray
    converged: np.ndarray
    statuses: list = dc_field(default_factory=list)


def mpp_flow(
    noise: NoiseModel,
    drift,
    points,
    targets=None,
    T: float = 1.0,
    N: int = 100,
    initial_a=None,
    tolerance: float = 1e-8,
    max_iter: int = 50,
    bound: float = 1e6,
) -> FlowResult:
    """Most probable flow realized pointwise over tracked points.

    Without targets: forward integration with v0 = z(0, x0) (+ optional
    initial a per point). With targets: per-point shooting. Points evolve
    independently; failures are reported per point, not raised.
    """
    X0 = np.atleast_2d(np.asarray(points, dtype=float))
    P, d = X0.shape
    if targets is not None:
        XT = np.atleast_2d(np.asarray(targets, dtype=float))
        if XT.shape != X0.shape:
            raise ValueError("targets must match points in shape")
        V, rnorm, converged, blown, _ = _shoot_batch(
            noise, drift, X0, XT, T, N, tol=tolerance, max_iter=max_iter, bound=bound
        )
    else:
        A0 = (
            np.zeros_like(X0)
            if initial_a is None
            else np.atleast_2d(np.asarray(initial_a, dtype=float))
        )
        V = _z_at(noise, drift, 0.0, X0) + A0
        rnorm = np.zeros(P)
        converged = np.ones(P, dtype=bool)
        blown = np.zeros(P, dtype=bool)
    A0 = V - _z_at(noise, drift, 0.0, X0)
    tX, tA, blown2, _ = _integrate_batch(noise, drift, X0, A0, T, N, bound, store=True)
    times = np.linspace(0.0, T, N + 1)
    # velocities a + z at every node of every path in one geometry call
    flatX = tX.reshape(-1, d)
    flatT = np.repeat(times, P)
    z_all = _z_at(noise, drift, flatT, flatX).reshape(N + 1, P, d)
    vel = tA + z_all
    paths = [Path(times, tX[:, p, :], vel[:, p, :]) for p in range(P)]
    converged = converged & ~blown2
    statuses = [
        "converged"
        if converged[p]
        else ("blow-up" if (blown[p] or blown2[p]) else f"residual {rnorm[p]:.3e}")
        for p in range(P)
    ]
    return FlowResult(paths, V, rnorm, converged, statuses)
