import numpy as np
import pytest

from mppflow.errors import EllipticityViolation, NearSingularMetricWarning
from mppflow.fields import (
    Constant,
    ConformalAxis,
    GaussianKernel,
    KernelMomentum,
    NoiseModel,
    SineSchedule,
    Sinusoid,
    Sum,
    TimeScaled,
    eval_jet,
    eval_values,
    fd_jet_oracle,
)

from conftest import tensor_rel_err

JET_SLOTS = ("value", "jacobian", "hessians", "third", "time_derivative", "time_jacobian")


def all_variants():
    g1 = GaussianKernel([0.1, -0.2], [0.4, 0.7], 0.6)
    g2 = GaussianKernel([-0.3, 0.4], [0.2, -0.5], 0.8)
    g3 = GaussianKernel([0.6, 0.1], [-0.1, 0.2], 0.5)
    return [
        Constant([0.5, -1.2]),
        g1,
        ConformalAxis(1, 0.3),
        KernelMomentum([[0.0, 0.0], [0.5, 0.2]], [[0.1, 0.3], [-0.2, 0.1]], 0.5),
        Sinusoid(0, 1.0, 0.3, [1.0, 0.5], phase=0.2),
        Sum([g1, g2, g3]),
        TimeScaled(g1, SineSchedule(1.0, 0.5, 2.0, 0.3)),
    ]


def test_constant_jet_trivial():
    a = np.array([1.5, -0.5])
    jet = eval_jet(Constant(a), 0.3, np.array([2.0, 3.0]), order=1)
    assert np.array_equal(jet.value, a)
    assert np.array_equal(jet.jacobian, np.zeros((2, 2)))


def test_gaussian_at_center():
    jet = eval_jet(GaussianKernel([0.0, 0.0], [1.0, 0.0], 1.0), 0.0, np.zeros(2), order=1)
    assert np.allclose(jet.value, [1.0, 0.0])
    assert np.allclose(jet.jacobian, 0.0)


def test_gaussian_off_center_vs_fd():
    f = GaussianKernel([0.0, 0.0], [1.0, 0.0], 1.0)
    x = np.array([1.0, 0.0])
    jet = eval_jet(f, 0.0, x, order=2)
    ora = fd_jet_oracle(f, 0.0, x, order=2, h_jac=1e-4, h_hess=1e-4)
    for slot in ("value", "jacobian", "hessians"):
        assert tensor_rel_err(getattr(jet, slot), getattr(ora, slot)) < 1e-6


@pytest.mark.parametrize("field", all_variants(), ids=lambda f: type(f).__name__)
def test_jet_matches_fd_oracle(field):
    rng = np.random.default_rng(12)
    for _ in range(5):
        x = rng.normal(size=2) * 0.7
        t = rng.uniform(0.0, 1.0)
        jet = eval_jet(field, t, x, order=3)
        ora = fd_jet_oracle(field, t, x, order=3)
        for slot in JET_SLOTS:
            err = tensor_rel_err(getattr(jet, slot), getattr(ora, slot))
            assert err < 1e-5, f"{slot}: {err:.2e}"


def test_fd_oracle_constant_machine_precision():
    jet = eval_jet(Constant([2.0, -1.0]), 0.0, np.array([0.3, 0.4]))
    ora = fd_jet_oracle(Constant([2.0, -1.0]), 0.0, np.array([0.3, 0.4]))
    for slot in JET_SLOTS:
        assert np.allclose(
            getattr(jet, slot), getattr(ora, slot), atol=1e-12
        ), slot


def test_sum_additivity():
    kernels = [
        GaussianKernel([0.1, -0.2], [0.4, 0.7], 0.6),
        GaussianKernel([-0.3, 0.4], [0.2, -0.5], 0.8),
        GaussianKernel([0.6, 0.1], [-0.1, 0.2], 0.5),
    ]
    s = Sum(kernels)
    x = np.array([0.25, -0.15])
    jet = eval_jet(s, 0.0, x, order=3)
    parts = [eval_jet(k, 0.0, x, order=3) for k in kernels]
    for slot in ("value", "jacobian", "hessians", "third"):
        total = sum(getattr(p, slot) for p in parts)
        assert np.allclose(getattr(jet, slot), total, atol=1e-14), slot
    ora = fd_jet_oracle(s, 0.0, x, order=3)
    assert tensor_rel_err(jet.third, ora.third) < 1e-5


def test_jet_symmetries_machine_exact():
    for field in all_variants():
        jet = eval_jet(field, 0.4, np.array([0.2, -0.3]), order=3)
        h = jet.hessians
        scale_h = max(np.abs(h).max(), 1.0)
        assert np.abs(h - h.transpose(0, 2, 1)).max() < 1e-14 * scale_h
        t = jet.third
        scale_t = max(np.abs(t).max(), 1.0)
        for perm in ((0, 1, 3, 2), (0, 2, 1, 3), (0, 3, 2, 1)):
            assert np.abs(t - t.transpose(*perm)).max() < 1e-14 * scale_t


def test_time_scaled_value_and_rate():
    base = GaussianKernel([0.0, 0.0], [0.3, -0.2], 0.7)
    sched = SineSchedule(1.0, 0.4, 3.0, 0.1)
    f = TimeScaled(base, sched)
    t, x = 0.37, np.array([0.2, 0.5])
    jet = eval_jet(f, t, x)
    base_jet = eval_jet(base, t, x)
    assert np.allclose(jet.value, sched(t) * base_jet.value, atol=1e-14)
    # fd in t for the schedule rate term
    h = 1e-6
    fd_t = (eval_values(f, t + h, x[None]) - eval_values(f, t - h, x[None])) / (2 * h)
    assert np.allclose(jet.time_derivative, fd_t[0], atol=1e-7)


def test_eval_jet_rejects_bad_input():
    f = Constant([1.0, 0.0])
    with pytest.raises(ValueError):
        eval_jet(f, 0.0, np.array([np.nan, 0.0]))
    with pytest.raises(ValueError):
        eval_jet(f, 0.0, np.zeros(2), order=4)


def test_batched_equals_single():
    f = KernelMomentum([[0.0, 0.0], [0.5, 0.2]], [[0.1, 0.3], [-0.2, 0.1]], 0.5)
    rng = np.random.default_rng(5)
    X = rng.normal(size=(6, 2))
    big = eval_jet(f, 0.0, X, order=3)
    one = eval_jet(f, 0.0, X[4], order=3)
    assert np.array_equal(big.third[4], one.third)
    assert np.array_equal(big.value[4], one.value)


def test_noise_model_stacks_fields_consistently():
    kernels = [
        GaussianKernel([0.1, -0.2], [0.4, 0.7], 0.6),
        Sinusoid(1, 0.8, 0.2, [1.0, 0.0]),
        Constant([0.5, 0.0]),
    ]
    nm = NoiseModel(kernels, ellipticity_floor=1e-6)
    X = np.random.default_rng(0).normal(size=(4, 2))
    V, D, H, T3, TD, TJ = nm.jets(0.0, X, order=3)
    for j, f in enumerate(kernels):
        jet = eval_jet(f, 0.0, X, order=3)
        assert np.allclose(V[:, j], jet.value, atol=1e-15)
        assert np.allclose(D[:, j], jet.jacobian, atol=1e-15)
        assert np.allclose(T3[:, j], jet.third, atol=1e-15)


def test_ellipticity_violation_detected():
    # a single kernel cannot span R^2; far from its center it is near zero
    nm = NoiseModel([GaussianKernel([0.0, 0.0], [0.2, 0.0], 0.3)], ellipticity_floor=1e-4)
    from mppflow.geometry import cometric

    with pytest.raises(EllipticityViolation) as exc:
        cometric(nm, 0.0, np.array([5.0, 5.0]))
    assert exc.value.min_eig < 1e-4


def test_near_singular_warning_channel():
    nm = NoiseModel(
        [Constant([0.1, 0.0]), Constant([0.0, 0.1])], ellipticity_floor=0.005
    )
    from mppflow.geometry import cometric

    with pytest.warns(NearSingularMetricWarning):
        cometric(nm, 0.0, np.zeros(2))
