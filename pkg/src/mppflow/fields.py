"""Parametric vector fields on open subsets of R^d with exact derivative jets.

Every field variant knows its own spatial derivatives up to third order and
its first time derivative in closed form (plus the mixed d/dt of the spatial
jacobian, needed downstream when the noise geometry is time dependent).
Finite differences never enter the evaluation path; ``fd_jet_oracle`` exists
for tests only.

Evaluation is batched: ``x`` may be a single point ``(d,)`` or any stack of
points ``(..., d)``. All returned arrays carry the same leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Jet",
    "VectorField",
    "Constant",
    "GaussianKernel",
    "ConformalAxis",
    "KernelMomentum",
    "Sinusoid",
    "Sum",
    "TimeScaled",
    "ConstantSchedule",
    "LinearSchedule",
    "SineSchedule",
    "NoiseModel",
    "eval_jet",
    "eval_values",
    "fd_jet_oracle",
]


@dataclass
class Jet:
    """Spatial/temporal derivative bundle of a vector field at one point.

    Index conventions (single point):
      value[m]            component m
      jacobian[m, i]      d_i of component m
      hessians[m, i, j]   d_i d_j of component m (symmetric in i, j)
      third[m, i, j, k]   d_i d_j d_k of component m (fully symmetric)
      time_derivative[m]  d_t of component m
      time_jacobian[m, i] d_t d_i of component m

    Entries above the requested order are None. For batched evaluation every
    array gains the batch shape in front.
    """

    value: np.ndarray
    jacobian: np.ndarray | None = None
    hessians: np.ndarray | None = None
    third: np.ndarray | None = None
    time_derivative: np.ndarray | None = None
    time_jacobian: np.ndarray | None = None


def _zeros(shape):
    return np.zeros(shape)


class VectorField:
    """Base class; subclasses implement ``_jet``.

    ``_jet(t, X, order)`` returns the tuple
    ``(value, jac, hess, third, tder, tjac)`` with batched arrays; slots
    above ``order`` are None. ``tder``/``tjac`` are always present (zero for
    autonomous fields).
    """

    dim: int

    def _jet(self, t, X, order):
        raise NotImplementedError

    def value(self, t, X):
        return self._jet(t, np.asarray(X, dtype=float), 0)[0]


@dataclass
class Constant(VectorField):
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float)
        self.dim = self.vector.shape[0]

    def _jet(self, t, X, order):
        d = self.dim
        bshape = X.shape[:-1]
        val = np.broadcast_to(self.vector, bshape + (d,)).copy()
        jac = _zeros(bshape + (d, d)) if order >= 1 else None
        hess = _zeros(bshape + (d, d, d)) if order >= 2 else None
        third = _zeros(bshape + (d, d, d, d)) if order >= 3 else None
        return val, jac, hess, third, _zeros(bshape + (d,)), _zeros(bshape + (d, d))


def _gaussian_scalar_jets(X, center, inv_tau2, order):
    """Jets of phi(x) = exp(-|x-c|^2 * inv_tau2 / 2).

    Returns (phi, dphi, d2phi, d3phi) with shapes (...,), (..., d),
    (..., d, d), (..., d, d, d); entries above ``order`` are None.
    """
    diff = X - center
    w = inv_tau2 * diff
    phi = np.exp(-0.5 * inv_tau2 * np.sum(diff * diff, axis=-1))
    d = X.shape[-1]
    eye = np.eye(d)
    dphi = d2 = d3 = None
    if order >= 1:
        dphi = -w * phi[..., None]
    if order >= 2:
        ww = w[..., :, None] * w[..., None, :]
        d2 = (ww - inv_tau2 * eye) * phi[..., None, None]
    if order >= 3:
        www = w[..., :, None, None] * w[..., None, :, None] * w[..., None, None, :]
        sym = (
            eye[:, :, None] * w[..., None, None, :]
            + eye[:, None, :] * w[..., None, :, None]
            + eye[None, :, :] * w[..., :, None, None]
        )
        d3 = (inv_tau2 * sym - www) * phi[..., None, None, None]
    return phi, dphi, d2, d3


def _scalar_times_vector(amp, phi, dphi, d2, d3, bshape, d, order):
    """Jets of a(x) = amp * phi(x) for a constant vector amp."""
    val = amp * phi[..., None]
    jac = hess = third = None
    if order >= 1:
        jac = amp[:, None] * dphi[..., None, :]
    if order >= 2:
        hess = amp[:, None, None] * d2[..., None, :, :]
    if order >= 3:
        third = amp[:, None, None, None] * d3[..., None, :, :, :]
    return val, jac, hess, third, _zeros(bshape + (d,)), _zeros(bshape + (d, d))


@dataclass
class GaussianKernel(VectorField):
    """a * exp(-|x-c|^2 / (2 tau^2)) for a constant amplitude vector a."""

    center: np.ndarray
    amplitude: np.ndarray
    width: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.amplitude = np.asarray(self.amplitude, dtype=float)
        if self.width <= 0:
            raise ValueError("kernel width must be positive")
        self.dim = self.center.shape[0]
        self._inv_tau2 = 1.0 / self.width**2

    def _jet(self, t, X, order):
        phi, dphi, d2, d3 = _gaussian_scalar_jets(X, self.center, self._inv_tau2, order)
        return _scalar_times_vector(
            self.amplitude, phi, dphi, d2, d3, X.shape[:-1], self.dim, order
        )


@dataclass
class ConformalAxis(VectorField):
    """exp(-beta |x|^2) e_axis; a Gaussian kernel centred at the origin."""

    axis: int
    beta: float
    dim: int = 2

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        self._inv_tau2 = 2.0 * self.beta
        amp = np.zeros(self.dim)
        amp[self.axis] = 1.0
        self._amp = amp
        self._center = np.zeros(self.dim)

    def _jet(self, t, X, order):
        phi, dphi, d2, d3 = _gaussian_scalar_jets(X, self._center, self._inv_tau2, order)
        return _scalar_times_vector(
            self._amp, phi, dphi, d2, d3, X.shape[:-1], self.dim, order
        )


@dataclass
class KernelMomentum(VectorField):
    """Sum_i exp(-|x-q_i|^2/(2 tau^2)) p_i; the LDDMM-style kernel field."""

    points: np.ndarray
    momenta: np.ndarray
    width: float

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.momenta = np.atleast_2d(np.asarray(self.momenta, dtype=float))
        if self.points.shape != self.momenta.shape:
            raise ValueError("points and momenta must have matching shapes")
        if self.width <= 0:
            raise ValueError("kernel width must be positive")
        self.dim = self.points.shape[1]
        self._inv_tau2 = 1.0 / self.width**2

    def _jet(self, t, X, order):
        # Batch the kernel bank along a trailing axis K, then contract.
        diff = X[..., None, :] - self.points  # (..., K, d)
        w = self._inv_tau2 * diff
        phi = np.exp(-0.5 * self._inv_tau2 * np.sum(diff * diff, axis=-1))  # (..., K)
        P = self.momenta  # (K, d)
        d = self.dim
        eye = np.eye(d)
        bshape = X.shape[:-1]
        val = np.einsum("...k,km->...m", phi, P)
        jac = hess = third = None
        if order >= 1:
            jac = np.einsum("...k,km,...ki->...mi", phi, P, -w)
        if order >= 2:
            ww = w[..., :, None] * w[..., None, :] - self._inv_tau2 * eye
            hess = np.einsum("...k,km,...kij->...mij", phi, P, ww)
        if order >= 3:
            www = (
                w[..., :, None, None] * w[..., None, :, None] * w[..., None, None, :]
            )
            sym = (
                eye[:, :, None] * w[..., :, None, None, :]
                + eye[:, None, :] * w[..., :, None, :, None]
                + eye[None, :, :] * w[..., :, :, None, None]
            )
            third = np.einsum(
                "...k,km,...kijl->...mijl", phi, P, self._inv_tau2 * sym - www
            )
        return val, jac, hess, third, _zeros(bshape + (d,)), _zeros(bshape + (d, d))


@dataclass
class Sinusoid(VectorField):
    """(offset + amplitude * sin(k . x + phase)) e_axis."""

    axis: int
    offset: float
    amplitude: float
    wavevector: np.ndarray
    phase: float = 0.0

    def __post_init__(self):
        self.wavevector = np.atleast_1d(np.asarray(self.wavevector, dtype=float))
        self.dim = self.wavevector.shape[0]
        amp = np.zeros(self.dim)
        amp[self.axis] = 1.0
        self._e = amp

    def _jet(self, t, X, order):
        k = self.wavevector
        arg = X @ k + self.phase
        s, c = np.sin(arg), np.cos(arg)
        d = self.dim
        bshape = X.shape[:-1]
        e = self._e
        val = (self.offset + self.amplitude * s)[..., None] * e
        jac = hess = third = None
        if order >= 1:
            jac = self.amplitude * c[..., None, None] * np.einsum("m,i->mi", e, k)
        if order >= 2:
            hess = -self.amplitude * s[..., None, None, None] * np.einsum(
                "m,i,j->mij", e, k, k
            )
        if order >= 3:
            third = -self.amplitude * c[..., None, None, None, None] * np.einsum(
                "m,i,j,l->mijl", e, k, k, k
            )
        return val, jac, hess, third, _zeros(bshape + (d,)), _zeros(bshape + (d, d))


@dataclass
class Sum(VectorField):
    terms: list

    def __post_init__(self):
        if not self.terms:
            raise ValueError("Sum needs at least one term")
        self.dim = self.terms[0].dim
        if any(f.dim != self.dim for f in self.terms):
            raise ValueError("all summands must share the dimension")

    def _jet(self, t, X, order):
        parts = [f._jet(t, X, order) for f in self.terms]
        out = []
        for slot in range(6):
            arrs = [p[slot] for p in parts]
            out.append(None if arrs[0] is None else sum(arrs))
        return tuple(out)


@dataclass
class ConstantSchedule:
    c: float = 1.0

    def __call__(self, t):
        return self.c

    def derivative(self, t):
        return 0.0


@dataclass
class LinearSchedule:
    a: float
    b: float

    def __call__(self, t):
        return self.a + self.b * t

    def derivative(self, t):
        return self.b


@dataclass
class SineSchedule:
    offset: float
    amplitude: float
    omega: float
    phase: float = 0.0

    def __call__(self, t):
        return self.offset + self.amplitude * np.sin(self.omega * np.asarray(t) + self.phase)

    def derivative(self, t):
        return self.amplitude * self.omega * np.cos(self.omega * np.asarray(t) + self.phase)


def _bcast_time(scal, arr):
    """Multiply an (optionally per-point) time scalar onto a jet array."""
    if arr is None:
        return None
    scal = np.asarray(scal, dtype=float)
    if scal.ndim == 0:
        return scal * arr
    return scal.reshape(scal.shape + (1,) * (arr.ndim - scal.ndim)) * arr


@dataclass
class TimeScaled(VectorField):
    """s(t) * field, with the schedule's rate entering the time derivative."""

    base: VectorField
    schedule: object

    def __post_init__(self):
        self.dim = self.base.dim

    def _jet(self, t, X, order):
        val, jac, hess, third, tder, tjac = self.base._jet(t, X, order)
        s = self.schedule(t)
        ds = self.schedule.derivative(t)
        if jac is None:
            jac_for_mix = self.base._jet(t, X, 1)[1]
        else:
            jac_for_mix = jac
        out_tder = _bcast_time(ds, val) + _bcast_time(s, tder)
        out_tjac = _bcast_time(ds, jac_for_mix) + _bcast_time(s, tjac)
        scale = lambda a: _bcast_time(s, a)
        return scale(val), scale(jac), scale(hess), scale(third), out_tder, out_tjac


def eval_jet(field: VectorField, t: float, x, order: int = 3) -> Jet:
    """Evaluate a field and its derivatives at (t, x).

    Derivatives are exact for every variant (closed-form differentiation of
    the evaluation rule). ``x`` may be a point ``(d,)`` or a batch
    ``(..., d)``; ``order`` selects how many spatial derivative levels to
    produce (0..3). The time derivative and mixed time-jacobian are always
    included.
    """
    if not 0 <= order <= 3:
        raise ValueError(f"unsupported jet order {order}")
    X = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite evaluation point")
    val, jac, hess, third, tder, tjac = field._jet(t, X, order)
    return Jet(val, jac, hess, third, tder, tjac)


def eval_values(field: VectorField, t: float, X) -> np.ndarray:
    """Batched value-only evaluation (the SDE hot path)."""
    return field._jet(t, np.asarray(X, dtype=float), 0)[0]


def fd_jet_oracle(
    field: VectorField,
    t: float,
    x,
    order: int = 3,
    h_jac: float = 1e-4,
    h_hess: float = 1e-4,
    h_third: float = 1e-3,
    h_time: float = 1e-5,
) -> Jet:
    """Central-finite-difference jet, order-2 accurate. Tests only.

    jacobian and hessians come from value evaluations alone; the third
    derivative uses order-2 third-difference stencils of the value. The mixed
    time-jacobian differences the analytic jacobian in t (it checks the time
    coupling, not the spatial derivatives, which the lower slots already
    cover).
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    f = lambda y: field._jet(t, y, 0)[0]
    val = f(x)
    jac = hess = third = None
    if order >= 1:
        jac = np.empty((d, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = h_jac
            jac[:, i] = (f(x + e) - f(x - e)) / (2 * h_jac)
    if order >= 2:
        hess = np.empty((d, d, d))
        h = h_hess
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = h
            hess[:, i, i] = (f(x + ei) - 2 * val + f(x - ei)) / h**2
            for j in range(i + 1, d):
                ej = np.zeros(d)
                ej[j] = h
                mixed = (
                    f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
                ) / (4 * h**2)
                hess[:, i, j] = mixed
                hess[:, j, i] = mixed
    if order >= 3:
        third = np.empty((d, d, d, d))
        h = h_third
        basis = [np.eye(d)[i] * h for i in range(d)]
        for i in range(d):
            ei = basis[i]
            # d_iii
            tiii = (-f(x - 2 * ei) + 2 * f(x - ei) - 2 * f(x + ei) + f(x + 2 * ei)) / (
                2 * h**3
            )
            third[:, i, i, i] = tiii
            for j in range(d):
                if j == i:
                    continue
                ej = basis[j]
                # d_iij: second difference in i, first in j
                tiij = (
                    f(x + ei + ej)
                    - 2 * f(x + ej)
                    + f(x - ei + ej)
                    - f(x + ei - ej)
                    + 2 * f(x - ej)
                    - f(x - ei - ej)
                ) / (2 * h**3)
                for perm in ((i, i, j), (i, j, i), (j, i, i)):
                    third[:, perm[0], perm[1], perm[2]] = tiij
        if d == 3:
            e0, e1, e2 = basis
            t012 = (
                f(x + e0 + e1 + e2)
                - f(x + e0 + e1 - e2)
                - f(x + e0 - e1 + e2)
                + f(x + e0 - e1 - e2)
                - f(x - e0 + e1 + e2)
                + f(x - e0 + e1 - e2)
                + f(x - e0 - e1 + e2)
                - f(x - e0 - e1 - e2)
            ) / (8 * h**3)
            import itertools

            for perm in itertools.permutations((0, 1, 2)):
                third[:, perm[0], perm[1], perm[2]] = t012
    tder = (field._jet(t + h_time, x, 0)[0] - field._jet(t - h_time, x, 0)[0]) / (
        2 * h_time
    )
    ja = lambda s: field._jet(s, x, 1)[1]
    tjac = (ja(t + h_time) - ja(t - h_time)) / (2 * h_time)
    return Jet(val, jac, hess, third, tder, tjac)


class NoiseModel:
    """The J noise fields plus a uniform-ellipticity floor.

    ``jets`` stacks the per-field jets along a noise axis so that downstream
    tensor contractions are single einsum calls. Plain Gaussian-kernel fields
    are grouped into one vectorized bank; everything else falls back to
    per-field evaluation.
    """

    def __init__(self, sigmas, ellipticity_floor=1e-8):
        if not sigmas:
            raise ValueError("need at least one noise field")
        if ellipticity_floor <= 0:
            raise ValueError("ellipticity floor must be positive")
        self.sigmas = list(sigmas)
        self.ellipticity_floor = float(ellipticity_floor)
        self.dim = self.sigmas[0].dim
        if any(s.dim != self.dim for s in self.sigmas):
            raise ValueError("noise fields must share the dimension")
        self._build_fast_path()

    @property
    def n_fields(self):
        return len(self.sigmas)

    def _build_fast_path(self):
        gauss_idx, centers, amps, inv_tau2 = [], [], [], []
        other_idx = []
        autonomous = True
        for j, s in enumerate(self.sigmas):
            if isinstance(s, GaussianKernel):
                gauss_idx.append(j)
                centers.append(s.center)
                amps.append(s.amplitude)
                inv_tau2.append(s._inv_tau2)
            elif isinstance(s, ConformalAxis):
                gauss_idx.append(j)
                centers.append(s._center)
                amps.append(s._amp)
                inv_tau2.append(s._inv_tau2)
            else:
                other_idx.append(j)
                if isinstance(s, TimeScaled):
                    autonomous = False
        self._gauss_idx = np.array(gauss_idx, dtype=int)
        self._other_idx = other_idx
        self.autonomous = autonomous
        if gauss_idx:
            self._centers = np.array(centers)
            self._amps = np.array(amps)
            self._inv_tau2 = np.array(inv_tau2)

    def jets(self, t, X, order=3):
        """Stacked jets over the noise axis.

        Returns (V, D, H, T3, TD, TJ) with shapes
        ``(..., J, d)``, ``(..., J, d, d)``, ``(..., J, d, d, d)``,
        ``(..., J, d, d, d, d)``, ``(..., J, d)``, ``(..., J, d, d)``;
        entries above ``order`` are None.
        """
        X = np.asarray(X, dtype=float)
        bshape = X.shape[:-1]
        d = self.dim
        J = self.n_fields
        slots = [
            np.zeros(bshape + (J, d)),
            np.zeros(bshape + (J, d, d)) if order >= 1 else None,
            np.zeros(bshape + (J, d, d, d)) if order >= 2 else None,
            np.zeros(bshape + (J, d, d, d, d)) if order >= 3 else None,
            np.zeros(bshape + (J, d)),
            np.zeros(bshape + (J, d, d)),
        ]
        if len(self._gauss_idx):
            diff = X[..., None, :] - self._centers  # (..., K, d)
            w = self._inv_tau2[:, None] * diff
            phi = np.exp(
                -0.5 * self._inv_tau2 * np.sum(diff * diff, axis=-1)
            )  # (..., K)
            A = self._amps  # (K, d)
            pv = phi[..., None] * A
            slots[0][..., self._gauss_idx, :] = pv
            if order >= 1:
                slots[1][..., self._gauss_idx, :, :] = (
                    pv[..., :, :, None] * (-w)[..., :, None, :]
                )
            if order >= 2:
                eye = np.eye(d)
                ww = (
                    w[..., :, None] * w[..., None, :]
                    - self._inv_tau2[:, None, None] * eye
                )
                slots[2][..., self._gauss_idx, :, :, :] = (
                    pv[..., :, :, None, None] * ww[..., :, None, :, :]
                )
            if order >= 3:
                eye = np.eye(d)
                www = (
                    w[..., :, None, None]
                    * w[..., None, :, None]
                    * w[..., None, None, :]
                )
                sym = (
                    eye[:, :, None] * w[..., :, None, None, :]
                    + eye[:, None, :] * w[..., :, None, :, None]
                    + eye[None, :, :] * w[..., :, :, None, None]
                )
                slots[3][..., self._gauss_idx, :, :, :, :] = (
                    pv[..., :, :, None, None, None]
                    * (self._inv_tau2[:, None, None, None] * sym - www)[
                        ..., :, None, :, :, :
                    ]
                )
        for j in self._other_idx:
            val, jac, hess, third, tder, tjac = self.sigmas[j]._jet(t, X, order)
            slots[0][..., j, :] = val
            if order >= 1:
                slots[1][..., j, :, :] = jac
            if order >= 2:
                slots[2][..., j, :, :, :] = hess
            if order >= 3:
                slots[3][..., j, :, :, :, :] = third
            slots[4][..., j, :] = tder
            slots[5][..., j, :, :] = tjac
        return tuple(slots)

    def values(self, t, X):
        return self.jets(t, X, order=0)[0]
