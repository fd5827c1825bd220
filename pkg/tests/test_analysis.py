import itertools
import math

import numpy as np
import pytest

from consensus import analysis as A
from consensus.ensemble import ParticleEnsemble
from consensus.integrator import InitSpec, TimeGrid
from consensus.objectives import GrowthClass, ObjectiveSpec, ackley, quadratic


def brute_force_wp(x, y, p):
    x, y = np.asarray(x, float).reshape(len(x), -1), np.asarray(y, float).reshape(len(y), -1)
    best = math.inf
    for perm in itertools.permutations(range(len(x))):
        cost = sum(np.linalg.norm(x[j] - y[perm[j]]) ** p for j in range(len(x))) / len(x)
        best = min(best, cost)
    return best ** (1 / p)


# --------------------------------------------------------------------------- Wasserstein


def test_wasserstein_1d_examples():
    x = np.array([0.3, -1.0, 2.0])
    assert A.wasserstein_p_1d(x, x, 2) == 0.0
    for p in (1, 2, 3.5):
        assert A.wasserstein_p_1d([0.0], [1.0], p) == 1.0
    with pytest.raises(ValueError, match=">= 1"):
        A.wasserstein_p_1d(x, x, 0.5)
    with pytest.raises(ValueError, match="equal size"):
        A.wasserstein_p_1d(x, x[:2])


def test_wasserstein_1d_matches_assignment():
    rng = np.random.default_rng(0)
    for _ in range(30):
        J = rng.integers(1, 17)
        x, y = rng.normal(size=J), rng.normal(size=J) * 2
        for p in (1, 2, 3):
            assert A.wasserstein_p_1d(x, y, p) == pytest.approx(A.wasserstein_p_exact(x, y, p), rel=1e-12)
    x, y = rng.normal(size=6), rng.normal(size=6)
    assert A.wasserstein_p_1d(x, y, 2) == pytest.approx(brute_force_wp(x, y, 2), rel=1e-12)


def test_wasserstein_exact_examples_and_brute_force():
    mu = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert A.wasserstein_p_exact(mu, mu[::-1], 1) == 0.0
    rng = np.random.default_rng(1)
    x = rng.normal(size=(8, 3))
    assert A.wasserstein_p_exact(x, x[rng.permutation(8)], 2) == 0.0
    for _ in range(10):
        x, y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
        for p in (1, 2):
            assert A.wasserstein_p_exact(x, y, p) == pytest.approx(brute_force_wp(x, y, p), rel=1e-12)


def test_wasserstein_exact_limits():
    x = np.zeros((A.EXACT_WASSERSTEIN_MAX_J + 1, 2))
    with pytest.raises(ValueError, match="coupling_upper_bound"):
        A.wasserstein_p_exact(x, x)
    with pytest.raises(ValueError, match="shape"):
        A.wasserstein_p_exact(np.zeros((3, 2)), np.zeros((3, 1)))


def test_coupling_upper_bound():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, 2))
    assert A.coupling_upper_bound(x, x) == 0.0
    for _ in range(20):
        J = rng.integers(1, 9)
        x, y = rng.normal(size=(J, 2)), rng.normal(size=(J, 2))
        for p in (1, 2):
            assert A.coupling_upper_bound(x, y, p) >= brute_force_wp(x, y, p) - 1e-12
    a = np.array([0.0, 1.0, 2.0])
    assert A.coupling_upper_bound(a, a[::-1], 1) > 0 == A.wasserstein_p_exact(a, a[::-1], 1)


def test_empirical_pair():
    mu = ParticleEnsemble([[0.0], [1.0]])
    nu = ParticleEnsemble([[1.0], [0.0]])
    assert A.EmpiricalPair(mu, nu).distance(1) == 0.0
    assert A.EmpiricalPair(mu, nu, "same-index").distance(1) == 1.0
    with pytest.raises(ValueError):
        A.EmpiricalPair(mu, ParticleEnsemble([[1.0]]))


# --------------------------------------------------------------------------- stability


def test_stability_ratio_trivial_cases():
    q = quadratic(2)
    rng = np.random.default_rng(3)
    mu = rng.normal(size=(6, 2))
    assert A.stability_ratio(q, 1.0, mu, mu, 1) is None
    assert A.stability_ratio(q, 1.0, mu, mu[::-1], 2, "sqrtcov") is None
    # one particle each: both covariances vanish
    assert A.stability_ratio(q, 1.0, [[0.0, 1.0]], [[2.0, 0.0]], 2, "sqrtcov") == 0.0


def test_stability_ratio_flat_objective_is_translation():
    g = GrowthClass(s=0, ell=0, u=0, L_f=1)
    flat = ObjectiveSpec("flat", 2, lambda x: np.zeros(x.shape[:-1]), g)
    mu = np.random.default_rng(4).normal(size=(5, 2))
    delta = np.array([1e-7, -2e-7])
    r = A.stability_ratio(flat, 3.0, mu, mu + delta, 1)
    assert r == pytest.approx(1.0, rel=1e-6)


def test_local_lipschitz_matches_pair_ratio():
    q = quadratic(2)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 3, 2))
    for p, which in ((1, "mean"), (2, "mean"), (2, "sqrtcov")):
        lam, V = A._local_lipschitz(x, q, 1.0, p, which)
        for b in range(4):
            r = A.stability_ratio(q, 1.0, x[b], x[b] + 1e-6 * V[b], p, which)
            assert r == pytest.approx(lam[b], rel=1e-3)


def test_stability_sweeps_small():
    q = quadratic(2)
    r = A.stability_stress_mean(q, 1.0, 1.0, 5.0, 40, seed=0, climb_steps=10)
    assert r.trials == 40 and np.isfinite(r.ratios).all() and np.all(r.ratios >= 0)
    assert r.max_ratio == r.ratios.max()
    s = A.stability_stress_sqrtcov(q, 1.0, 2.0, 5.0, 20, seed=0, climb_steps=5)
    assert np.isfinite(s.max_ratio) and s.max_ratio > 0


def test_stability_sweeps_are_nested_in_trial_count():
    q = quadratic(2)
    small = A.stability_stress_mean(q, 1.0, 1.0, 5.0, 15, seed=2, climb_steps=5)
    big = A.stability_stress_mean(q, 1.0, 1.0, 5.0, 45, seed=2, climb_steps=5)
    np.testing.assert_array_equal(big.ratios[:15], small.ratios)
    assert big.max_over_first(15) == small.max_ratio


def test_stability_preconditions():
    q, ack = quadratic(2), ackley(2)
    with pytest.raises(ValueError, match="admissible"):
        A.stability_stress_mean(ack, 1.0, 1.0, 5.0, 5)  # Ackley needs p >= 2
    with pytest.raises(ValueError, match="admissible"):
        A.stability_stress_sqrtcov(ack, 1.0, 3.0, 5.0, 5)  # and p >= 4 for sqrt(C)
    with pytest.raises(ValueError, match="R"):
        A.stability_stress_mean(q, 1.0, 1.0, 0.0, 5)
    with pytest.raises(AssertionError, match="ceiling"):
        A.stability_stress_mean(q, 1.0, 1.0, 5.0, 5, climb_steps=2, ceiling=1e-3)


def test_random_measures_respect_moment_radius():
    rng = np.random.default_rng(6)
    for _ in range(20):
        x = A._random_measures(rng, 3, 5, 2, 1.0, 5.0)
        mom = np.mean(np.linalg.norm(x, axis=-1), axis=-1)
        np.testing.assert_allclose(mom, 5.0, rtol=1e-12)
    y = A._project(10 * rng.normal(size=(4, 6, 2)), 2.0, 1.0)
    assert np.all(np.sqrt(np.mean(np.sum(y * y, axis=-1), axis=-1)) <= 1.0 + 1e-12)


def test_samplers():
    rng = np.random.default_rng(7)
    g = A.gaussian_sampler([1.0, -1.0], [[4.0, 0.0], [0.0, 1.0]])(rng, 200_000)
    np.testing.assert_allclose(g.mean(axis=0), [1, -1], atol=0.02)
    np.testing.assert_allclose(np.cov(g.T), [[4, 0], [0, 1]], atol=0.05)
    u = A.uniform_box_sampler([0, 0], [1, 2])(rng, 1000)
    assert u.min() >= 0 and u[:, 1].max() <= 2
    t = A.student_sampler(3, clip=10.0)(rng, 1000)
    assert t.shape == (1000, 3) and np.abs(t).max() <= 10.0


# --------------------------------------------------------------------------- matrix inequalities


def test_matrix_inequality_examples():
    I = np.eye(3)
    # A = B: both sides vanish
    assert np.linalg.norm(A._batched_sqrt_psd(I[None])[0] - I) == 0
    # A = 4I, B = I, eta = 1: |2I - I|_F <= |3I|_F
    lhs = np.linalg.norm(A._batched_sqrt_psd(4 * I[None])[0] - I)
    assert lhs <= np.linalg.norm(3 * I)


def test_matrix_inequality_audit():
    rep = A.matrix_inequality_checks(2000, (2, 3), seed=1)
    assert rep.passed and rep.violations == 0
    assert {a.name for a in rep.audits} == {"araki-yamagami", "van-hemmen-ando"}
    vha = [a for a in rep.audits if a.name == "van-hemmen-ando"]
    assert all(a.max_sharp_ratio <= 1 + 1e-9 for a in vha)
    with pytest.raises(ValueError):
        A.matrix_inequality_checks(0)


def test_audit_counts_violations():
    a = A._audit("x", 2, np.array([1.0, 2.0, 0.0]), np.array([1.0, 1.0, 0.0]))
    assert a.violations == 1 and a.max_ratio == 2.0 and not a.passed


# --------------------------------------------------------------------------- i.i.d. rates


def test_gaussian_quadratic_reference_one_dimensional():
    # N(m, s2) reweighted by exp(-beta x^2): precision 1/s2 + 2 beta
    ref = A.gaussian_quadratic_reference([2.0], [[0.5]], 1.5)
    prec = 2.0 + 3.0
    assert ref.mean[0] == pytest.approx((2.0 / 0.5) / prec, rel=1e-14)
    assert ref.cov[0, 0] == pytest.approx(1 / prec, rel=1e-14)
    assert ref.kind == "closed-form"


def test_oracle_matches_closed_form():
    q = quadratic(2)
    s = A.gaussian_sampler([1.0, 0.5])
    oracle = A.gibbs_reference_oracle(q, 1.0, s, n=10**6, seed=0, chunk=131_072)
    exact = A.gaussian_quadratic_reference([1.0, 0.5], np.eye(2), 1.0)
    np.testing.assert_allclose(oracle.mean, exact.mean, atol=3e-3)
    np.testing.assert_allclose(oracle.cov, exact.cov, atol=3e-3)
    assert oracle.kind == "oracle-1000000"


def test_iid_rate_beta_zero_is_clt():
    q = quadratic(2)
    s = A.gaussian_sampler([0.0, 0.0])
    ref = A.GibbsReference(np.zeros(2), np.eye(2), "supplied")
    r = A.iid_weighted_moment_rate(q, 0.0, s, [50, 500, 5000], 300, 2.0, "mean", 0, ref)
    assert r.slope == pytest.approx(-1.0, abs=0.15)
    # E|mean|^2 = d / J exactly
    np.testing.assert_allclose(r.errors * np.array(r.J_list), 2.0, rtol=0.25)
    assert r.expected_slope == -1.0


def test_iid_rate_errors():
    q = quadratic(2)
    s = A.gaussian_sampler([0.0, 0.0])
    ref = A.GibbsReference(np.zeros(2), np.eye(2), "supplied")
    with pytest.raises(ValueError, match="two distinct"):
        A.iid_weighted_moment_rate(q, 1.0, s, [100], 10, reference=ref)
    with pytest.raises(ValueError, match="positive definite"):
        A.iid_weighted_moment_rate(q, 1.0, s, [10, 100], 10, which="sqrtcov",
                                   reference=A.GibbsReference(np.zeros(2), np.zeros((2, 2)), "supplied"))


# --------------------------------------------------------------------------- excursions


def test_excursion_examples():
    normal = lambda rng, n: rng.standard_normal(n)  # noqa: E731
    r = A.excursion_probability(normal, 2.0, 1e6, [10, 100], 1000, pilot=10_000)
    assert np.all(r.probabilities == 0) and r.decays and r.exponent is None
    with pytest.raises(ValueError, match="exceed the mean"):
        A.excursion_probability(normal, 2.0, 0.5, [10], 100, pilot=10_000)
    r = A.excursion_probability(normal, 2.0, 1.5, [5, 20, 80], 20_000, pilot=10_000)
    assert r.decays and r.probabilities[0] > r.probabilities[-1] > 0
    assert r.exponent is not None and r.exponent < 0


def test_excursion_chunking_is_invisible():
    normal = lambda rng, n: rng.standard_normal(n)  # noqa: E731
    a = A.excursion_probability(normal, 2.0, 1.5, [10], 5000, pilot=1000, chunk_samples=10**6)
    b = A.excursion_probability(normal, 2.0, 1.5, [10], 5000, pilot=1000, chunk_samples=10**6)
    assert a.probabilities[0] == b.probabilities[0]


# --------------------------------------------------------------------------- no collapse


def test_no_collapse_holds_on_cbs_run():
    r = A.run_no_collapse(quadratic(2), 1.0, 2048, TimeGrid(0.01, 50), InitSpec.standard_normal(2), seed=0)
    assert r.margin[0] == pytest.approx(1.0)
    assert r.bound_holds and r.residual_ok and r.passed
    assert r.residual[0] == 0.0


def test_no_collapse_negative_control():
    r = A.run_no_collapse(quadratic(2), 1.0, 1024, TimeGrid(0.01, 30), InitSpec.standard_normal(2), seed=1)
    covs = np.array([np.diag(np.diag(c)) for c in (r.min_eig[:, None, None] * np.eye(2))])
    collapsed = covs.copy()
    collapsed[15:] *= 1e-3  # ensemble artificially squeezed halfway through
    bad = A.no_collapse_check(r.times, collapsed, collapsed, 1.0)
    assert not bad.bound_holds and not bad.passed


def test_no_collapse_rejects_degenerate_start():
    t = np.array([0.0, 0.1])
    C = np.zeros((2, 2, 2))
    with pytest.raises(ValueError, match="degenerate"):
        A.no_collapse_check(t, C, C, 1.0)


def test_no_collapse_exact_ode_solution_has_zero_residual():
    # with C_beta = C the covariance obeys dC/dt = 0 for lam = 1
    t = np.linspace(0, 1, 11)
    C = np.repeat(np.eye(2)[None], 11, axis=0)
    r = A.no_collapse_check(t, C, C, 1.0)
    assert np.all(r.residual == 0) and np.all(r.step_residual == 0)


# --------------------------------------------------------------------------- moment bounds


def test_weighted_moment_audit():
    r = A.weighted_moment_audit(2.0, 2.0, 1.0, trials=2000, seed=0)
    assert r.passed and 0 < r.max_ratio <= 1
    r = A.weighted_moment_audit(1.0, 3.0, 0.5, trials=2000, seed=1)
    assert r.passed
