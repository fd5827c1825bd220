import math

import numpy as np
import pytest

from consensus.dynamics import METHODS, DynamicsSpec, apply_diffusion, drift
from consensus.ensemble import WeightedSummary, sqrt_psd


def frozen(mean, cov):
    mean = np.asarray(mean, float)
    cov = np.asarray(cov, float)
    return WeightedSummary(np.zeros(1), mean, cov, sqrt_psd(cov), 1.0)


def test_spec_validation_and_lambda():
    assert DynamicsSpec.cbs(3.0, "sampling").lam == pytest.approx(0.25)
    assert DynamicsSpec.cbs(3.0, "optimization").lam == 1.0
    assert DynamicsSpec.cbo(1.0, 0.5).lam is None
    assert DynamicsSpec.cbo(1.0, 0.5, anisotropic=True).method == "cbo-aniso"
    with pytest.raises(ValueError, match="method"):
        DynamicsSpec("pso", 1.0, 0.1)
    with pytest.raises(ValueError, match="beta"):
        DynamicsSpec("cbo-iso", -1.0, 0.1)
    with pytest.raises(ValueError, match="theta"):
        DynamicsSpec("cbo-iso", 1.0)
    with pytest.raises(ValueError, match="mode"):
        DynamicsSpec.cbs(1.0, "annealing")
    assert set(METHODS) == {"cbo-iso", "cbo-aniso", "cbs-sample", "cbs-opt"}


def test_sigma_theta_relation():
    spec = DynamicsSpec.from_sigma("cbo-iso", 3.0, 0.2)
    assert spec.sigma == pytest.approx(0.2, rel=1e-15)
    assert spec.theta == pytest.approx(0.02, rel=1e-15)
    assert DynamicsSpec.from_sigma("cbs-opt", 3.0, 0.2).theta is None


def test_drift_examples():
    s = frozen([0.0, 0.0], np.eye(2))
    np.testing.assert_array_equal(drift([2.0, 0.0], s), [-2.0, 0.0])
    s = frozen([1.5, -2.0], np.eye(2))
    np.testing.assert_array_equal(drift([1.5, -2.0], s), [0.0, 0.0])
    rng = np.random.default_rng(0)
    x, m = rng.normal(size=(5, 3)), rng.normal(size=3)
    out = drift(x, frozen(m, np.eye(3)))
    for j in range(5):
        for i in range(3):
            assert out[j, i] == -(x[j, i] - m[i])


def test_drift_is_one_lipschitz():
    rng = np.random.default_rng(1)
    s = frozen(rng.normal(size=2), np.eye(2))
    x, y = rng.normal(size=(1000, 2)), rng.normal(size=(1000, 2))
    lhs = np.linalg.norm(drift(x, s) - drift(y, s), axis=1)
    assert np.all(lhs <= np.linalg.norm(x - y, axis=1) * (1 + 1e-12))


def test_diffusion_examples():
    s = frozen([0.0, 0.0], np.eye(2))
    x = np.array([3.0, 4.0])
    iso = DynamicsSpec.cbo(1.0, 0.5)
    aniso = DynamicsSpec.cbo(1.0, 0.5, anisotropic=True)
    np.testing.assert_allclose(apply_diffusion(x, s, [1.0, 0.0], iso), [5.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(apply_diffusion(x, s, [1.0, 1.0], aniso), [3.0, 4.0], atol=1e-15)
    cbs = DynamicsSpec.cbs(1.0, "optimization")
    np.testing.assert_allclose(apply_diffusion(x, s, [1.0, 0.0], cbs), [math.sqrt(2), 0.0], atol=1e-15)


def test_diffusion_vanishes_at_consensus():
    s = frozen([1.0, 1.0], np.zeros((2, 2)))
    dW = np.array([0.7, -1.3])
    for method in METHODS:
        spec = DynamicsSpec.from_sigma(method, 2.0, 0.5)
        np.testing.assert_array_equal(apply_diffusion([1.0, 1.0], s, dW, spec), [0.0, 0.0])


def test_diffusion_magnitudes():
    rng = np.random.default_rng(2)
    m = rng.normal(size=3)
    s = frozen(m, np.eye(3))
    x = rng.normal(size=(100, 3))
    x[:10, 1] = m[1]
    dW = rng.normal(size=(100, 3))
    theta = 0.3
    iso = apply_diffusion(x, s, dW, DynamicsSpec.cbo(1.0, theta))
    expected = math.sqrt(2 * theta) * np.linalg.norm(x - m, axis=1) * np.linalg.norm(dW, axis=1)
    np.testing.assert_allclose(np.linalg.norm(iso, axis=1), expected, rtol=1e-12)
    aniso = apply_diffusion(x, s, dW, DynamicsSpec.cbo(1.0, theta, anisotropic=True))
    assert np.all(aniso[:10, 1] == 0.0)


def test_cbs_diffusion_is_shared_linear_map():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 3))
    s = frozen(rng.normal(size=3), A @ A.T)
    spec = DynamicsSpec.cbs(2.0, "sampling")
    x = rng.normal(size=(20, 3))
    dW = rng.normal(size=(20, 3))
    out = apply_diffusion(x, s, dW, spec)
    np.testing.assert_allclose(out, dW @ (math.sqrt(2 / spec.lam) * s.sqrt_cov).T, atol=1e-12)
    # position independent
    np.testing.assert_array_equal(out, apply_diffusion(x + 5.0, s, dW, spec))
