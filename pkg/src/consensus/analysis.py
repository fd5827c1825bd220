"""Numerical audits of the analytic estimates behind the mean-field theory.

The checks here do not prove anything: they exercise the inequalities on
random or adversarial inputs and report the observed extremes. Existence
statements ("there is a constant L such that ...") are tested as
boundedness under refinement, i.e. the observed maximum should stabilise as
the number of trials grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from consensus.dynamics import DynamicsSpec
from consensus.ensemble import (
    ParticleEnsemble,
    as_positions,
    sqrt_psd,
    weighted_covariance,
    weighted_mean,
    weighted_moment_bound_constant,
    weighted_moment_ratio,
    weights_from_values,
)
from consensus.integrator import InitSpec, NoiseStream, TimeGrid, simulate
from consensus.meanfield import fit_loglog_slope
from consensus.objectives import ObjectiveSpec

EXACT_WASSERSTEIN_MAX_J = 64


# ---------------------------------------------------------------------------
# Wasserstein distances between equal-size empirical measures
# ---------------------------------------------------------------------------


def _check_p(p: float) -> None:
    if not p >= 1:
        raise ValueError(f"Wasserstein exponent must be >= 1, got {p}")


def wasserstein_p_1d(mu, nu, p: float = 1.0) -> float:
    """Exact ``W_p`` between two 1-d samples of equal size (sorted matching)."""
    _check_p(p)
    a = np.sort(np.ravel(np.asarray(mu, dtype=float)))
    b = np.sort(np.ravel(np.asarray(nu, dtype=float)))
    if a.size != b.size:
        raise ValueError("samples must have equal size")
    return float(np.mean(np.abs(a - b) ** p) ** (1.0 / p))


def _cost_matrix(x: np.ndarray, y: np.ndarray, p: float) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2)) ** p


def wasserstein_p_exact(mu, nu, p: float = 1.0) -> float:
    """Exact ``W_p`` between equal-size empirical measures by optimal assignment."""
    _check_p(p)
    x, y = as_positions(mu), as_positions(nu)
    if x.shape != y.shape:
        raise ValueError(f"ensembles must have the same shape, got {x.shape} and {y.shape}")
    if x.shape[0] > EXACT_WASSERSTEIN_MAX_J:
        raise ValueError(
            f"exact matching is limited to J <= {EXACT_WASSERSTEIN_MAX_J}; "
            "use coupling_upper_bound for larger ensembles"
        )
    cost = _cost_matrix(x, y, p)
    rows, cols = linear_sum_assignment(cost)
    return float(np.mean(cost[rows, cols]) ** (1.0 / p))


def coupling_upper_bound(mu, nu, p: float = 1.0) -> float:
    """``W_p`` bound from the same-index coupling ``x_j <-> y_j``."""
    _check_p(p)
    x, y = as_positions(mu), as_positions(nu)
    if x.shape != y.shape:
        raise ValueError("ensembles must have the same shape")
    return float(np.mean(np.linalg.norm(x - y, axis=1) ** p) ** (1.0 / p))


@dataclass(frozen=True)
class EmpiricalPair:
    mu: ParticleEnsemble
    nu: ParticleEnsemble
    coupling: str = "optimal"

    def __post_init__(self) -> None:
        if self.mu.positions.shape != self.nu.positions.shape:
            raise ValueError("paired ensembles must have equal J and d")
        if self.coupling not in ("optimal", "same-index"):
            raise ValueError("coupling must be 'optimal' or 'same-index'")

    def distance(self, p: float = 1.0) -> float:
        if self.coupling == "same-index":
            return coupling_upper_bound(self.mu, self.nu, p)
        return wasserstein_p_exact(self.mu, self.nu, p)


# ---------------------------------------------------------------------------
# Stability of the weighted mean and of the square-root weighted covariance
# ---------------------------------------------------------------------------


@dataclass
class StabilityReport:
    """Largest observed ``|T(mu) - T(nu)| / W_p(mu, nu)`` over a stress sweep."""

    which: str
    p: float
    R: float
    trials: int
    max_ratio: float
    ratios: np.ndarray = field(repr=False)
    skipped: int = 0
    ceiling: float = math.inf

    @property
    def within_ceiling(self) -> bool:
        return self.max_ratio <= self.ceiling

    def max_over_first(self, n: int) -> float:
        return float(np.max(self.ratios[:n]))


def _batched_transform(x: np.ndarray, objective: ObjectiveSpec, beta: float, which: str) -> np.ndarray:
    """Weighted mean ``(..., d)`` or flattened ``sqrt(C_beta)`` ``(..., d*d)`` of stacked ensembles."""
    lw = -beta * objective(x)
    w = np.exp(lw - lw.max(axis=-1, keepdims=True))
    w /= w.sum(axis=-1, keepdims=True)
    mean = np.einsum("...j,...ji->...i", w, x)
    if which == "mean":
        return mean
    diff = x - mean[..., None, :]
    cov = np.einsum("...j,...ji,...jk->...ik", w, diff, diff)
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    evals, evecs = np.linalg.eigh(cov)
    root = np.einsum("...ik,...k,...jk->...ij", evecs, np.sqrt(np.clip(evals, 0.0, None)), evecs)
    return root.reshape(*root.shape[:-2], -1)


def _transform(x: np.ndarray, objective: ObjectiveSpec, beta: float, which: str) -> np.ndarray:
    lw = weights_from_values(objective(x), beta)
    if which == "mean":
        return weighted_mean(x, lw)
    return sqrt_psd(weighted_covariance(x, lw))


def stability_ratio(objective: ObjectiveSpec, beta: float, mu, nu, p: float, which: str = "mean") -> float | None:
    """``|T(mu) - T(nu)| / W_p(mu, nu)`` with exact ``W_p``; ``None`` when ``W_p = 0``.

    ``T`` is the weighted mean (Euclidean norm) or the square root of the
    weighted covariance (Frobenius norm).
    """
    x, y = as_positions(mu), as_positions(nu)
    w = wasserstein_p_exact(x, y, p)
    if w == 0:
        return None
    diff = _transform(x, objective, beta, which) - _transform(y, objective, beta, which)
    return float(np.linalg.norm(diff) / w)


def _project(x: np.ndarray, p: float, R: float) -> np.ndarray:
    """Shrink each ensemble radially into ``P_{p,R}`` (p-th moment root at most ``R``)."""
    mom = np.mean(np.linalg.norm(x, axis=-1) ** p, axis=-1) ** (1.0 / p)
    scale = np.where(mom > R, R / np.maximum(mom, 1e-300), 1.0)
    return x * scale[:, None, None]


def _local_lipschitz(x, objective, beta, p, which):
    """Infinitesimal ratio ``sup_V |DT(x) V| / W_p(x, x + V)`` and the maximizing ``V``.

    ``DT`` is a central finite-difference Jacobian. For small moves of
    distinct particles the same-index coupling is optimal, so ``W_p`` is a
    mixed norm of ``V`` and the supremum has a closed form for ``p = 1``
    (largest column block) and ``p = 2`` (operator norm). Other ``p`` use the
    ``p = 2`` direction, which gives a lower bound.
    """
    B, J, d = x.shape
    n = J * d
    scale = np.maximum(1.0, np.max(np.abs(x), axis=(1, 2)))
    h = 1e-6 * scale
    eye = np.eye(n).reshape(n, J, d)
    step = h[:, None, None, None] * eye[None]
    plus = _batched_transform(x[:, None] + step, objective, beta, which)
    minus = _batched_transform(x[:, None] - step, objective, beta, which)
    jac = np.swapaxes((plus - minus) / (2.0 * h[:, None, None]), 1, 2)  # (B, m, n)

    if p == 1:
        blocks = jac.reshape(B, -1, J, d).transpose(0, 2, 1, 3)  # (B, J, m, d)
        u, s, vt = np.linalg.svd(blocks)
        top = s[..., 0]
        jstar = np.argmax(top, axis=1)
        lam = J * top[np.arange(B), jstar]
        V = np.zeros((B, J, d))
        V[np.arange(B), jstar] = vt[np.arange(B), jstar, 0]
        return lam, V
    u, s, vt = np.linalg.svd(jac, full_matrices=False)
    V = vt[:, 0].reshape(B, J, d)
    if p == 2:
        return np.sqrt(J) * s[:, 0], V
    gain = np.linalg.norm(np.einsum("bmn,bn->bm", jac, V.reshape(B, n)), axis=1)
    denom = np.mean(np.linalg.norm(V, axis=2) ** p, axis=1) ** (1.0 / p)
    return gain / denom, V


def gaussian_sampler(mean, cov=None) -> Callable:
    """``sampler(rng, n) -> (n, d)`` drawing from ``N(mean, cov)`` (identity by default)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    root = np.eye(mean.size) if cov is None else sqrt_psd(np.asarray(cov, dtype=float))

    def sample(rng, n):
        return mean + np.einsum("nk,ik->ni", rng.standard_normal((n, mean.size)), root)

    return sample


def uniform_box_sampler(low, high) -> Callable:
    low = np.atleast_1d(np.asarray(low, dtype=float))
    high = np.atleast_1d(np.asarray(high, dtype=float))
    if low.shape != high.shape or np.any(high <= low):
        raise ValueError("need low < high componentwise")
    return lambda rng, n: rng.uniform(low, high, size=(n, low.size))


def student_sampler(dim: int, dof: float = 2.5, clip: float = 1e3) -> Callable:
    """Heavy-tailed componentwise Student-t samples, truncated at ``clip``."""
    if not dof > 0:
        raise ValueError("dof must be positive")
    return lambda rng, n: np.clip(rng.standard_t(dof, size=(n, dim)), -clip, clip)


def _random_measures(rng, B, J, d, p, R):
    """Initial ``mu`` ensembles rescaled onto the boundary of ``P_{p,R}``.

    The shape is a Gaussian cloud, a uniform box or a truncated Student-t
    cloud, chosen at random per call.
    """
    kind = rng.integers(3)
    centre = rng.standard_normal((B, 1, d)) * rng.uniform(0.0, 1.0, size=(B, 1, 1))
    scale = rng.uniform(0.05, 1.0, size=(B, 1, 1))
    if kind == 0:
        z = rng.standard_normal((B, J, d))
    elif kind == 1:
        z = rng.uniform(-1.0, 1.0, size=(B, J, d))
    else:
        z = np.clip(rng.standard_t(2.5, size=(B, J, d)), -50.0, 50.0)
    x = centre + scale * z
    mom = np.mean(np.linalg.norm(x, axis=-1) ** p, axis=-1) ** (1.0 / p)
    return x * (R / np.maximum(mom, 1e-300))[:, None, None]


def _far_partner(rng, mu, kind):
    """A second ensemble with unconstrained moments: heavy-tailed, translated or with one outlier."""
    J, d = mu.shape
    spread = max(1.0, float(np.max(np.abs(mu))))
    if kind == 0:
        t = rng.standard_t(2.5, size=(J, d))
        return np.clip(t, -1e3, 1e3) * spread
    if kind == 1:
        return mu + rng.standard_normal(d) * 10 ** rng.uniform(-3, 2)
    nu = mu.copy()
    nu[rng.integers(J)] += rng.standard_normal(d) * 10 ** rng.uniform(-3, 3)
    return nu


def _stability_stress(objective, beta, p, R, trials, seed, which, J_max, climb_steps, ceiling):
    if not R > 0:
        raise ValueError("R must be positive")
    if trials < 1:
        raise ValueError("trials must be positive")
    g = objective.growth
    p_min = g.p_M if which == "mean" else 2 * g.p_M
    if p < p_min:
        raise ValueError(f"p={p} is below the admissible exponent {p_min} for this objective")
    d = objective.dimension
    J_min = 1 if which == "mean" else d + 1
    if J_max < J_min:
        raise ValueError(f"J_max must be at least {J_min}")

    # trial t draws everything from its own stream so sweeps are nested in the trial count
    rngs = [np.random.default_rng([seed, t]) for t in range(trials)]
    sizes = np.array([r.integers(J_min, J_max + 1) for r in rngs])
    ratios = np.zeros(trials)
    skipped = 0
    for J in np.unique(sizes):
        idx = np.flatnonzero(sizes == J)
        x = np.stack([_random_measures(rngs[t], 1, J, d, p, R)[0] for t in idx])
        best, V = _local_lipschitz(x, objective, beta, p, which)
        # (1+1) evolution strategy, step size adapted by the one-fifth success rule
        sigma = np.full(idx.size, 0.3 * R)
        for _ in range(climb_steps):
            noise = np.stack([rngs[t].standard_normal((J, d)) for t in idx])
            cand = _project(x + sigma[:, None, None] * noise, p, R)
            val, Vc = _local_lipschitz(cand, objective, beta, p, which)
            up = val > best
            x[up], best[up], V[up] = cand[up], val[up], Vc[up]
            sigma = np.clip(np.where(up, sigma * 2.0, sigma * 2.0**-0.25), 1e-6 * R, R)
        for row, t in enumerate(idx):
            mu = x[row]
            eps = 1e-6 * max(1.0, float(np.max(np.abs(mu))))
            observed = []
            for nu in (mu + eps * V[row], _far_partner(rngs[t], mu, rngs[t].integers(3))):
                r = stability_ratio(objective, beta, mu, nu, p, which)
                if r is None:
                    skipped += 1
                else:
                    observed.append(r)
            ratios[t] = max(observed, default=0.0)
    report = StabilityReport(which, p, R, trials, float(ratios.max()), ratios, skipped, ceiling)
    if not report.within_ceiling:
        raise AssertionError(f"stability ratio {report.max_ratio:.4g} exceeds ceiling {ceiling}")
    return report


def stability_stress_mean(
    objective: ObjectiveSpec,
    beta: float,
    p: float,
    R: float,
    trials: int,
    seed: int = 0,
    *,
    J_max: int = 5,
    climb_steps: int = 250,
    ceiling: float = math.inf,
) -> StabilityReport:
    """Adversarial sweep of ``|M_beta(mu) - M_beta(nu)| / W_p(mu, nu)``.

    Each trial starts from a random ``mu`` on the boundary of ``P_{p,R}`` and
    climbs the infinitesimal ratio with a (1+1) evolution strategy, keeping
    ``mu`` inside ``P_{p,R}``. Trials draw ``J`` uniformly from
    ``[1, J_max]``; small ``J_max`` keeps the climb short enough to converge.
    The ratio is then evaluated, with exact ``W_p``, on two genuine pairs:
    ``mu`` against a tiny move along the worst direction, and ``mu`` against
    a partner with unconstrained moments. The trial's value is the larger one.
    """
    return _stability_stress(objective, beta, p, R, trials, seed, "mean", J_max, climb_steps, ceiling)


def stability_stress_sqrtcov(
    objective: ObjectiveSpec,
    beta: float,
    p: float,
    R: float,
    trials: int,
    seed: int = 0,
    *,
    J_max: int = 5,
    climb_steps: int = 120,
    ceiling: float = math.inf,
) -> StabilityReport:
    """Same sweep as :func:`stability_stress_mean` for ``sqrt(C_beta)`` in Frobenius norm.

    Ensembles have at least ``d + 1`` particles so that the covariance is
    generically nonsingular along the climb.
    """
    return _stability_stress(objective, beta, p, R, trials, seed, "sqrtcov", J_max, climb_steps, ceiling)


# ---------------------------------------------------------------------------
# Matrix square-root inequalities
# ---------------------------------------------------------------------------

MATRIX_SLACK = 1.0 + 1e-9


def _batched_sqrt_psd(C: np.ndarray) -> np.ndarray:
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    evals, evecs = np.linalg.eigh(C)
    return np.einsum("...ik,...k,...jk->...ij", evecs, np.sqrt(np.clip(evals, 0.0, None)), evecs)


def _frob(A: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(A * A, axis=(-2, -1)))


@dataclass
class InequalityAudit:
    name: str
    dim: int
    trials: int
    violations: int
    max_ratio: float  # lhs / rhs; at most 1 up to slack when the inequality holds
    max_sharp_ratio: float | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0


@dataclass
class MatrixAuditReport:
    audits: list[InequalityAudit]

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.audits)

    @property
    def violations(self) -> int:
        return sum(a.violations for a in self.audits)


def _pairs(rng, trials, d):
    """Random matrix pairs: half independent, half ``B = A + small E``."""
    A = rng.standard_normal((trials, d, d)) * rng.uniform(0.1, 3.0, size=(trials, 1, 1))
    E = rng.standard_normal((trials, d, d))
    near = rng.random(trials) < 0.5
    scale = np.where(near, 10 ** rng.uniform(-6, -1, size=trials), rng.uniform(0.1, 3.0, size=trials))
    B = np.where(near[:, None, None], A, 0.0) + scale[:, None, None] * E
    return A, B


def matrix_inequality_checks(trials: int = 10_000, dims=(2, 3, 5), seed: int = 0) -> MatrixAuditReport:
    """Randomized audit of two Frobenius-norm inequalities for matrix square roots.

    * ``|sqrt(A^T A) - sqrt(B^T B)|_F <= sqrt(2) |A - B|_F`` for square ``A, B``.
    * ``|sqrt(A) - sqrt(B)|_F <= eta^(-1/2) |A - B|_F`` for ``A, B >= eta I``.

    A trial violates an inequality when the left side exceeds the right side
    times ``1 + 1e-9``. For the second one the ratio against the sharper
    constant ``1 / (2 sqrt(eta))`` is reported as well.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    audits = []
    for d in dims:
        rng = np.random.default_rng([seed, d])
        A, B = _pairs(rng, trials, d)
        lhs = _frob(
            _batched_sqrt_psd(np.einsum("tki,tkj->tij", A, A))
            - _batched_sqrt_psd(np.einsum("tki,tkj->tij", B, B))
        )
        rhs = math.sqrt(2.0) * _frob(A - B)
        audits.append(_audit("araki-yamagami", d, lhs, rhs))

        G, H = _pairs(rng, trials, d)
        eta = 10 ** rng.uniform(-3, 1, size=trials)
        P = np.einsum("tik,tjk->tij", G, G) + eta[:, None, None] * np.eye(d)
        Q = np.einsum("tik,tjk->tij", H, H) + eta[:, None, None] * np.eye(d)
        # the largest admissible eta for the pair
        eta_pair = np.minimum(np.linalg.eigvalsh(P)[:, 0], np.linalg.eigvalsh(Q)[:, 0])
        lhs = _frob(_batched_sqrt_psd(P) - _batched_sqrt_psd(Q))
        diff = _frob(P - Q)
        audit = _audit("van-hemmen-ando", d, lhs, diff / np.sqrt(eta_pair))
        sharp = _ratios(lhs, diff / (2.0 * np.sqrt(eta_pair)))
        audit.max_sharp_ratio = float(sharp.max())
        audits.append(audit)
    return MatrixAuditReport(audits)


def _ratios(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))


def _audit(name, d, lhs, rhs) -> InequalityAudit:
    viol = int(np.sum(lhs > MATRIX_SLACK * rhs))
    return InequalityAudit(name, d, lhs.size, viol, float(_ratios(lhs, rhs).max()))


# ---------------------------------------------------------------------------
# Weighted moments of i.i.d. samples
# ---------------------------------------------------------------------------


@dataclass
class GibbsReference:
    """Weighted mean and covariance of a reference measure, with its provenance."""

    mean: np.ndarray
    cov: np.ndarray
    kind: str  # "closed-form", "oracle-<n>" or "supplied"

    def value(self, which: str) -> np.ndarray:
        if which == "mean":
            return self.mean
        evals = np.linalg.eigvalsh(self.cov)
        if not evals[0] > 1e-12 * max(1.0, evals[-1]):
            raise ValueError("sqrtcov mode requires a positive definite reference covariance")
        return sqrt_psd(self.cov, tol=1e-8).ravel()


def gaussian_quadratic_reference(mean, cov, beta: float, centre=None) -> GibbsReference:
    """Exact Gibbs reweighting of ``N(mean, cov)`` by ``exp(-beta |x - centre|^2)``.

    The reweighted law is Gaussian with precision ``cov^-1 + 2 beta I``.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    centre = np.zeros_like(mean) if centre is None else np.asarray(centre, dtype=float)
    prec = np.linalg.inv(cov) + 2.0 * beta * np.eye(mean.size)
    new_cov = np.linalg.inv(prec)
    new_mean = new_cov @ (np.linalg.solve(cov, mean) + 2.0 * beta * centre)
    return GibbsReference(new_mean, 0.5 * (new_cov + new_cov.T), "closed-form")


def gibbs_reference_oracle(
    objective: ObjectiveSpec, beta: float, sampler: Callable, n: int = 10**7, seed: int = 0, chunk: int = 10**6
) -> GibbsReference:
    """Weighted mean and covariance of the sampled law from ``n`` draws, streamed in chunks.

    Accumulators are rescaled whenever the running maximum log-weight grows,
    so nothing over- or underflows.
    """
    rng = np.random.default_rng([seed, 0x0AC1E])
    top = -np.inf
    s0 = 0.0
    s1 = s2 = None
    done = 0
    while done < n:
        x = np.asarray(sampler(rng, min(chunk, n - done)), dtype=float)
        lw = -beta * objective(x)
        m = float(lw.max())
        if m > top:
            if s1 is not None:
                r = math.exp(top - m)
                s0, s1, s2 = s0 * r, s1 * r, s2 * r
            top = m
        w = np.exp(lw - top)
        s0 += float(w.sum())
        a1 = np.einsum("n,ni->i", w, x)
        a2 = np.einsum("n,ni,nk->ik", w, x, x)
        s1 = a1 if s1 is None else s1 + a1
        s2 = a2 if s2 is None else s2 + a2
        done += x.shape[0]
    mean = s1 / s0
    cov = s2 / s0 - np.outer(mean, mean)
    return GibbsReference(mean, 0.5 * (cov + cov.T), f"oracle-{n}")


@dataclass
class MomentRateReport:
    which: str
    p: float
    J_list: list[int]
    errors: np.ndarray  # Monte Carlo estimate of E |T(mu^J) - T(mu)|^p
    stderr: np.ndarray
    slope: float
    reference: GibbsReference

    @property
    def expected_slope(self) -> float:
        return -self.p / 2.0


def iid_weighted_moment_rate(
    objective: ObjectiveSpec,
    beta: float,
    sampler: Callable,
    J_list,
    M: int,
    p: float = 2.0,
    which: str = "mean",
    seed: int = 0,
    reference: GibbsReference | None = None,
    oracle_samples: int = 10**7,
) -> MomentRateReport:
    """Rate at which the weighted mean (or ``sqrt(C_beta)``) of ``J`` i.i.d. samples converges.

    ``reference`` supplies the limit; without it a streamed oracle with
    ``oracle_samples`` draws is built. The report records which was used.
    """
    J_list = [int(J) for J in J_list]
    if len(set(J_list)) < 2:
        raise ValueError("need at least two distinct ensemble sizes to fit a rate")
    if which not in ("mean", "sqrtcov"):
        raise ValueError("which must be 'mean' or 'sqrtcov'")
    if M < 2:
        raise ValueError("M must be at least 2")
    if reference is None:
        reference = gibbs_reference_oracle(objective, beta, sampler, oracle_samples, seed)
    target = reference.value(which)
    errors, stderr = [], []
    for J in J_list:
        rng = np.random.default_rng([seed, J])
        x = np.asarray(sampler(rng, M * J), dtype=float).reshape(M, J, -1)
        vals = _batched_transform(x, objective, beta, which)
        e = np.linalg.norm(vals - target, axis=-1) ** p
        errors.append(float(e.mean()))
        stderr.append(float(e.std(ddof=1) / math.sqrt(M)))
    slope = fit_loglog_slope(J_list, errors)
    return MomentRateReport(which, p, J_list, np.array(errors), np.array(stderr), slope, reference)


# ---------------------------------------------------------------------------
# Large excursions of empirical averages
# ---------------------------------------------------------------------------


@dataclass
class ExcursionReport:
    p: float
    R: float
    mean_estimate: float
    J_list: list[int]
    probabilities: np.ndarray
    exponent: float | None

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.probabilities) <= 0))

    @property
    def decays(self) -> bool:
        """Non-increasing, and strictly smaller at the largest ``J`` unless all are zero."""
        P = self.probabilities
        return self.monotone and (P[0] > P[-1] or not P.any())


def excursion_probability(
    sampler: Callable,
    p: float,
    R: float,
    J_list,
    M: int,
    seed: int = 0,
    pilot: int = 10**6,
    chunk_samples: int = 2 * 10**7,
) -> ExcursionReport:
    """Empirical ``P[(1/J) sum_j |Y_j|^p >= R]`` for i.i.d. ``Y_j`` drawn by ``sampler``.

    The mean ``E|Y|^p`` is estimated from ``pilot`` draws first. Decay in
    ``J`` is only expected when ``R`` exceeds it, so smaller ``R`` are
    rejected.
    """
    if not p > 0:
        raise ValueError("p must be positive")
    J_list = [int(J) for J in J_list]
    if not J_list or any(J < 1 for J in J_list):
        raise ValueError("J_list must hold positive integers")

    def moments(rng, n):
        y = np.asarray(sampler(rng, n), dtype=float).reshape(n, -1)
        return np.linalg.norm(y, axis=1) ** p

    mean_est = float(np.mean(moments(np.random.default_rng([seed, 0]), pilot)))
    if not R > mean_est:
        raise ValueError(
            f"R={R} must exceed the mean E|Y|^p ~ {mean_est:.4g}; "
            "large-excursion decay requires R above the mean"
        )
    probs = []
    for J in J_list:
        rng = np.random.default_rng([seed, J])
        rows = max(1, chunk_samples // J)
        hits = 0
        done = 0
        while done < M:
            b = min(rows, M - done)
            avg = moments(rng, b * J).reshape(b, J).mean(axis=1)
            hits += int(np.count_nonzero(avg >= R))
            done += b
        probs.append(hits / M)
    probs = np.array(probs)
    pos = probs > 0
    exponent = None
    if pos.sum() >= 2:
        exponent = float(np.polyfit(np.log(np.array(J_list)[pos]), np.log(probs[pos]), 1)[0])
    return ExcursionReport(p, R, mean_est, J_list, probs, exponent)


# ---------------------------------------------------------------------------
# No collapse of the CBS covariance
# ---------------------------------------------------------------------------


@dataclass
class NoCollapseReport:
    times: np.ndarray
    min_eig: np.ndarray
    bound: np.ndarray  # lambda_min(C(0)) exp(-2 t)
    tol: float
    residual: np.ndarray  # integrated covariance-evolution residual, relative
    residual_tol: float
    step_residual: np.ndarray  # difference-quotient residual, relative (diagnostic)

    @property
    def margin(self) -> np.ndarray:
        return self.min_eig / self.bound

    @property
    def bound_holds(self) -> bool:
        return bool(np.all(self.min_eig >= (1.0 - self.tol) * self.bound))

    @property
    def residual_ok(self) -> bool:
        return bool(np.all(self.residual <= self.residual_tol))

    @property
    def passed(self) -> bool:
        return self.bound_holds and self.residual_ok


def no_collapse_check(
    times, covariances, weighted_covariances, lam: float, tol: float = 0.15, residual_tol: float = 0.1
) -> NoCollapseReport:
    """Check ``lambda_min(C(t)) >= (1 - tol) lambda_min(C(0)) exp(-2t)`` along a CBS run.

    The covariance of CBS evolves as ``dC/dt = -2 C + (2 / lam) C_beta``.
    Per-step difference quotients of a finite ensemble are dominated by
    noise, so the check uses the time-integrated form

        |C_k - C_0 - sum_{i<k} dt_i (-2 C_i + (2/lam) C_beta,i)|_F / |C_k|_F

    and reports the per-step quotient only as a diagnostic.
    """
    t = np.asarray(times, dtype=float)
    C = np.asarray(covariances, dtype=float)
    Cb = np.asarray(weighted_covariances, dtype=float)
    if not (C.shape == Cb.shape and C.ndim == 3 and C.shape[0] == t.size):
        raise ValueError("times and covariance traces must align")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    eig = np.linalg.eigvalsh(C)
    min_eig = eig[:, 0]
    if not min_eig[0] > 1e-12 * max(1.0, eig[0, -1]):
        raise ValueError("initial covariance is degenerate; the bound needs C(0) positive definite")
    bound = min_eig[0] * np.exp(-2.0 * (t - t[0]))

    rhs = -2.0 * C + (2.0 / lam) * Cb
    dt = np.diff(t)
    integral = np.concatenate([np.zeros((1,) + C.shape[1:]), np.cumsum(dt[:, None, None] * rhs[:-1], axis=0)])
    norms = _frob(C)
    residual = _frob(C - C[0] - integral) / norms
    step = _frob(np.diff(C, axis=0) / dt[:, None, None] - rhs[:-1]) / norms[:-1]
    return NoCollapseReport(t, min_eig, bound, tol, residual, residual_tol, step)


def run_no_collapse(
    objective: ObjectiveSpec,
    beta: float,
    J: int,
    grid: TimeGrid,
    init: InitSpec,
    seed: int = 0,
    mode: str = "optimization",
    tol: float = 0.15,
    residual_tol: float = 0.1,
) -> NoCollapseReport:
    """Simulate CBS with ``J`` particles and audit its covariance trace."""
    spec = DynamicsSpec.cbs(beta, mode)
    rec = simulate(
        J, spec, objective, grid, init, NoiseStream(seed, objective.dimension),
        stride=grid.steps, keep_covariances=True,
    )
    return no_collapse_check(rec.times, rec.covariances, rec.weighted_covariances, spec.lam, tol, residual_tol)


# ---------------------------------------------------------------------------
# Moment bounds
# ---------------------------------------------------------------------------


@dataclass
class WeightedMomentAudit:
    p: float
    q: float
    beta: float
    constant: float
    trials: int
    max_ratio: float  # observed ratio divided by the constant

    @property
    def passed(self) -> bool:
        return self.max_ratio <= 1.0


def weighted_moment_audit(
    p: float, q: float, beta: float, trials: int = 10_000, seed: int = 0, J_max: int = 64
) -> WeightedMomentAudit:
    """Random nonnegative samples against the explicit weighted-moment constant.

    Samples mix exponential, uniform, heavy-tailed and two-cluster shapes at
    random scales, since the constant must hold uniformly over ensembles.
    """
    rng = np.random.default_rng([seed, 0x3017])
    C = weighted_moment_bound_constant(q, p, beta)
    worst = 0.0
    for _ in range(trials):
        J = int(rng.integers(1, J_max + 1))
        scale = 10 ** rng.uniform(-2, 2)
        kind = rng.integers(4)
        if kind == 0:
            y = rng.exponential(scale, J)
        elif kind == 1:
            y = rng.uniform(0, scale, J)
        elif kind == 2:
            y = np.abs(np.clip(rng.standard_t(1.5, J), -1e4, 1e4)) * scale
        else:
            y = np.where(rng.random(J) < 0.5, p / beta, scale) * rng.uniform(0.9, 1.1, J)
        worst = max(worst, weighted_moment_ratio(y, p, q, beta) / C)
    return WeightedMomentAudit(p, q, beta, float(C), trials, float(worst))


@dataclass
class MomentSweep:
    J_list: list[int]
    sup_moment: np.ndarray  # Monte Carlo E[max_k (1/J) sum_j |X_k^j|^2]
    stderr: np.ndarray

    @property
    def spread(self) -> float:
        return float(self.sup_moment.max() / self.sup_moment.min())


def moment_sweep(
    spec: DynamicsSpec,
    objective: ObjectiveSpec,
    grid: TimeGrid,
    init: InitSpec,
    J_list=(16, 64, 256, 1024),
    M: int = 20,
    seed: int = 0,
) -> MomentSweep:
    """Second moments along the run, maximised over time, for several ``J``.

    Uniform-in-``J`` moment bounds predict a spread (max over min) of order one.
    """
    noise = NoiseStream(seed, objective.dimension)
    means, errs = [], []
    for J in J_list:
        vals = []
        for m in range(M):
            rec = simulate(J, spec, objective, grid, init, noise, m, stride=1, keep_summaries=False)
            vals.append(max(float(np.mean(np.sum(x * x, axis=1))) for x in rec.ensembles))
        vals = np.array(vals)
        means.append(vals.mean())
        errs.append(vals.std(ddof=1) / math.sqrt(M) if M > 1 else math.nan)
    return MomentSweep(list(J_list), np.array(means), np.array(errs))
