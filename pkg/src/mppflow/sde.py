"""Simulation of the driving SDE and tube-probability estimation.

Two schemes: Heun (predictor-corrector) for the Stratonovich form and
Euler-Maruyama for the Ito form with the converted drift. One Brownian
realization drives every tracked point inside a sample, matching the flow
semantics; the scalar increments are shared, the fields are evaluated at
each point.

Randomness is counter-based: sample ``i`` of a run seeded with ``s`` draws
from ``Philox(key=(s, i))``, so results are bit-identical regardless of
chunking or parallel scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError
from .fields import NoiseModel, VectorField
from .om import Path

__all__ = [
    "SdeConfig",
    "TubeQuery",
    "Ensemble",
    "ito_drift_conversion",
    "brownian_increments",
    "heun_paths",
    "euler_maruyama_paths",
    "simulate_stratonovich",
    "simulate_ito",
    "tube_probability",
    "tube_probability_many",
]

_es = np.einsum


@dataclass
class SdeConfig:
    noise: NoiseModel
    drift: VectorField | None
    T: float
    steps: int
    seed: int = 0
    n_samples: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.T <= 0:
            raise ValueError("T must be positive")


@dataclass
class TubeQuery:
    """Sup-over-time Euclidean tube of radius epsilon around a center path."""

    center: Path
    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class Ensemble:
    times: np.ndarray
    trajectories: np.ndarray  # (n_samples, steps+1, n_points, d)

    @property
    def n_samples(self):
        return self.trajectories.shape[0]

    def mean_path(self):
        return self.trajectories.mean(axis=0)

    def variance_envelope(self):
        return self.trajectories.var(axis=0)


def ito_drift_conversion(noise: NoiseModel, drift, t, x):
    """u_hat = u + (1/2) sum_j (D sigma_j) sigma_j at (t, x)."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    V, D, _, _, _, _ = noise.jets(t, X, order=1)
    corr = 0.5 * _es("...jmi,...ji->...m", D, V)
    if drift is not None:
        corr = corr + drift._jet(t, X, 0)[0]
    return corr[0] if single else corr


def brownian_increments(seed: int, first: int, count: int, steps: int, n_fields: int, h: float):
    """Increments for samples [first, first+count), shape (count, steps, J)."""
    out = np.empty((count, steps, n_fields))
    key_hi = int(seed) % (2**64)
    for r in range(count):
        gen = np.random.Generator(np.random.Philox(key=[key_hi, first + r]))
        out[r] = gen.standard_normal((steps, n_fields))
    return out * math.sqrt(h)


def _drift_values(drift, t, X):
    if drift is None:
        return 0.0
    return drift._jet(t, X, 0)[0]


def _sigma_apply(noise, t, X, dW):
    """sum_j sigma_j(t, x) dW^j for every sample/point; dW is (S, J)."""
    V = noise.jets(t, X, order=0)[0]  # (S, P, J, d)
    return _es("spjd,sj->spd", V, dW)


def _check_finite(X, t, bound):
    norms = np.linalg.norm(X, axis=-1)
    if not np.all(np.isfinite(norms)) or np.any(norms > bound):
        worst = float(np.nanmax(norms))
        raise BlowUpError(t, worst, bound)


def heun_paths(noise, drift, x0, T, increments, bound=1e9, store=True):
    """Stratonovich Heun integration of one chunk of samples.

    ``increments`` is (S, steps, J) of Brownian increments; ``x0`` is
    (P, d). Returns (S, steps+1, P, d) when storing, else the final states.
    """
    X0 = np.atleast_2d(np.asarray(x0, dtype=float))
    S, steps, J = increments.shape
    P, d = X0.shape
    h = T / steps
    X = np.broadcast_to(X0, (S, P, d)).copy()
    traj = None
    if store:
        traj = np.empty((S, steps + 1, P, d))
        traj[:, 0] = X
    for k in range(steps):
        t = k * h
        dW = increments[:, k, :]
        u0 = _drift_values(drift, t, X)
        s0 = _sigma_apply(noise, t, X, dW)
        Xp = X + h * u0 + s0
        u1 = _drift_values(drift, t + h, Xp)
        s1 = _sigma_apply(noise, t + h, Xp, dW)
        X = X + 0.5 * h * (u0 + u1) + 0.5 * (s0 + s1)
        _check_finite(X, t + h, bound)
        if store:
            traj[:, k + 1] = X
    return traj if store else X


def euler_maruyama_paths(noise, drift, x0, T, increments, bound=1e9, store=True):
    """Ito Euler-Maruyama with the converted drift, same contract as
    ``heun_paths``."""
    X0 = np.atleast_2d(np.asarray(x0, dtype=float))
    S, steps, J = increments.shape
    P, d = X0.shape
    h = T / steps
    X = np.broadcast_to(X0, (S, P, d)).copy()
    traj = None
    if store:
        traj = np.empty((S, steps + 1, P, d))
        traj[:, 0] = X
    for k in range(steps):
        t = k * h
        dW = increments[:, k, :]
        V, D, _, _, _, _ = noise.jets(t, X, order=1)
        u_hat = 0.5 * _es("spjmi,spji->spm", D, V)
        if drift is not None:
            u_hat = u_hat + drift._jet(t, X, 0)[0]
        X = X + h * u_hat + _es("spjd,sj->spd", V, dW)
        _check_finite(X, t + h, bound)
        if store:
            traj[:, k + 1] = X
    return traj if store else X


def _chunk_ranges(total, chunk):
    out = []
    done = 0
    while done < total:
        n = min(chunk, total - done)
        out.append((done, n))
        done += n
    return out


def _simulate(cfg: SdeConfig, x0, scheme, chunk=4096, threads=1) -> Ensemble:
    X0 = np.atleast_2d(np.asarray(x0, dtype=float))
    stepper = heun_paths if scheme == "stratonovich" else euler_maruyama_paths
    h = cfg.T / cfg.steps
    J = cfg.noise.n_fields

    def run(rng_span):
        first, n = rng_span
        dW = brownian_increments(cfg.seed, first, n, cfg.steps, J, h)
        return stepper(cfg.noise, cfg.drift, X0, cfg.T, dW, store=True)

    spans = _chunk_ranges(cfg.n_samples, chunk)
    if threads > 1 and len(spans) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, spans))
    else:
        parts = [run(s) for s in spans]
    times = np.linspace(0.0, cfg.T, cfg.steps + 1)
    return Ensemble(times, np.concatenate(parts, axis=0))


def simulate_stratonovich(cfg: SdeConfig, x0, threads: int = 1) -> Ensemble:
    """Heun scheme on the Stratonovich form; reproducible from cfg.seed."""
    return _simulate(cfg, x0, "stratonovich", threads=threads)


def simulate_ito(cfg: SdeConfig, x0, threads: int = 1) -> Ensemble:
    """Euler-Maruyama on the Ito form with the converted drift."""
    return _simulate(cfg, x0, "ito", threads=threads)


def _center_at(times, query: TubeQuery):
    c = query.center
    return np.column_stack(
        [np.interp(times, c.times, c.points[:, i]) for i in range(c.points.shape[1])]
    )


def tube_probability_many(cfg: SdeConfig, x0, queries, chunk=10000, threads=1):
    """Tube-sojourn estimates for several center paths from one ensemble.

    Sharing the realizations across queries keeps comparisons between
    centers common-random-number coupled; each estimate is the fraction of
    samples whose discrete sup-distance to the center stays below epsilon,
    with the binomial standard error.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 1:
        raise ValueError("tube tracking follows a single point")
    queries = list(queries)
    for q in queries:
        if not np.allclose(q.center.points[0], x0, atol=1e-12):
            raise ValueError("tube center path must start at x0")
    times = np.linspace(0.0, cfg.T, cfg.steps + 1)
    centers = np.stack([_center_at(times, q) for q in queries])  # (Q, K+1, d)
    eps = np.array([q.epsilon for q in queries])
    h = cfg.T / cfg.steps
    J = cfg.noise.n_fields

    def run(rng_span):
        first, n = rng_span
        dW = brownian_increments(cfg.seed, first, n, cfg.steps, J, h)
        traj = heun_paths(cfg.noise, cfg.drift, x0[None, :], cfg.T, dW, store=True)
        traj = traj[:, :, 0, :]  # (S, K+1, d)
        local = np.zeros(len(queries), dtype=np.int64)
        for qi in range(len(queries)):
            dist = np.linalg.norm(traj - centers[qi], axis=-1)
            local[qi] = np.sum(dist.max(axis=1) < eps[qi])
        return local

    spans = _chunk_ranges(cfg.n_samples, chunk)
    if threads > 1 and len(spans) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = sum(pool.map(run, spans))
    else:
        counts = sum(run(s) for s in spans)
    est = counts / cfg.n_samples
    se = np.sqrt(np.maximum(est * (1.0 - est), 0.0) / cfg.n_samples)
    return est, se


def tube_probability(cfg: SdeConfig, x0, query: TubeQuery):
    """Fraction of samples staying within epsilon of the center path at all
    grid times, plus its binomial standard error."""
    est, se = tube_probability_many(cfg, x0, [query])
    return float(est[0]), float(se[0])
