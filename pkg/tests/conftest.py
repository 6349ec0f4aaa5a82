import warnings
from pathlib import Path

import numpy as np
import pytest

from mppflow.errors import NearSingularMetricWarning
from mppflow.fields import (
    Constant,
    ConformalAxis,
    GaussianKernel,
    NoiseModel,
    Sinusoid,
    VectorField,
)

REPO = Path(__file__).resolve().parents[1]
SCENARIOS = REPO / "scenarios"


@pytest.fixture(autouse=True)
def _quiet_near_singular():
    # the warning channel is exercised explicitly where it matters
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearSingularMetricWarning)
        yield


def flat_noise(d=2):
    return NoiseModel([Constant(np.eye(d)[j]) for j in range(d)], ellipticity_floor=0.5)


def conformal_noise(beta=0.3, d=2, floor=1e-6):
    return NoiseModel(
        [ConformalAxis(k, beta, d) for k in range(d)], ellipticity_floor=floor
    )


def kernel_noise(seed=0, n_kernels=3, d=2, background=0.6, floor=0.05):
    rng = np.random.default_rng(seed)
    fields = [
        GaussianKernel(rng.normal(size=d) * 0.5, rng.normal(size=d) * 0.3, 0.7)
        for _ in range(n_kernels)
    ]
    fields += [Constant(background * np.eye(d)[j]) for j in range(d)]
    return NoiseModel(fields, ellipticity_floor=floor)


def sin1d_noise(offset=1.0, amp=0.3):
    return NoiseModel([Sinusoid(0, offset, amp, [1.0])], ellipticity_floor=1e-3)


class LinearDrift(VectorField):
    """u(x) = A x; test-only field with exact jets."""

    def __init__(self, A):
        self.A = np.asarray(A, dtype=float)
        self.dim = self.A.shape[0]

    def _jet(self, t, X, order):
        B = X.shape[:-1]
        d = self.dim
        val = X @ self.A.T
        jac = np.broadcast_to(self.A, B + (d, d)).copy() if order >= 1 else None
        hess = np.zeros(B + (d, d, d)) if order >= 2 else None
        third = np.zeros(B + (d, d, d, d)) if order >= 3 else None
        return val, jac, hess, third, np.zeros(B + (d,)), np.zeros(B + (d, d))


def tensor_rel_err(a, b, floor=1e-9):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b).max() / max(np.abs(b).max(), floor)
