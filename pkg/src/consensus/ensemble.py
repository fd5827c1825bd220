"""Particle ensembles and their Gibbs-reweighted moments.

Weights are kept in log space and normalised with a log-sum-exp shift,
because ``exp(-beta * f)`` underflows for the inverse temperatures used in
practice. Moments are accumulated from the *shifted* unnormalised weights
``exp(log_w - max(log_w))``: for uniform weights these are exactly one, so
the ``beta = 0`` case reproduces the plain mean and covariance bit for bit.

Reductions avoid BLAS so that results do not depend on the BLAS thread pool.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from consensus.objectives import ObjectiveSpec


@dataclass(frozen=True)
class ParticleEnsemble:
    """``J`` particles in ``R^d``; stands for the empirical measure of the positions."""

    positions: np.ndarray

    def __post_init__(self) -> None:
        x = np.array(self.positions, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"positions must be a non-empty J x d array, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("ensemble positions must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "positions", x)

    @property
    def J(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def __len__(self) -> int:
        return self.J


@dataclass(frozen=True)
class WeightedSummary:
    """Everything the dynamics need from the ensemble at one time."""

    log_weights: np.ndarray
    weighted_mean: np.ndarray
    weighted_cov: np.ndarray
    sqrt_cov: np.ndarray
    ess: float

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


def as_positions(ensemble) -> np.ndarray:
    """Return a ``J x d`` float array for an ensemble or array-like."""
    if isinstance(ensemble, ParticleEnsemble):
        return ensemble.positions
    x = np.asarray(ensemble, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def normalize_log_weights(log_w) -> np.ndarray:
    # shifting by the max first keeps the subtraction exact for large |log_w|
    log_w = np.asarray(log_w, dtype=float)
    shifted = log_w - np.max(log_w)
    return shifted - logsumexp(shifted)


def weights_from_values(values, beta: float) -> np.ndarray:
    """Normalised log-weights ``-beta f_j - logsumexp(-beta f)`` from objective values."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("objective values must be finite to form weights")
    if not (np.isfinite(beta) and beta >= 0):
        raise ValueError(f"beta must be finite and non-negative, got {beta}")
    if beta == 0:
        return np.full(values.shape, -np.log(values.size))
    return normalize_log_weights(-beta * values)


def compute_weights(ensemble, objective: ObjectiveSpec, beta: float) -> np.ndarray:
    """Normalised log-weights of the ensemble under ``exp(-beta f)``.

    The result is unchanged when a constant is added to ``f``. ``beta = 0``
    is accepted and yields uniform weights.
    """
    x = as_positions(ensemble)
    return weights_from_values(objective(x), beta)


def _shifted(log_weights) -> tuple[np.ndarray, float]:
    lw = np.asarray(log_weights, dtype=float)
    w = np.exp(lw - lw.max())
    return w, float(np.sum(w))


def weighted_mean(ensemble, log_weights) -> np.ndarray:
    x = as_positions(ensemble)
    w, total = _shifted(log_weights)
    return np.sum(w[:, None] * x, axis=0) / total


def weighted_covariance(ensemble, log_weights, mean=None) -> np.ndarray:
    """Centered weighted covariance; the mean is subtracted before accumulating."""
    x = as_positions(ensemble)
    w, total = _shifted(log_weights)
    if mean is None:
        mean = np.sum(w[:, None] * x, axis=0) / total
    diff = x - mean
    cov = np.einsum("ji,jk->ik", w[:, None] * diff, diff) / total
    return 0.5 * (cov + cov.T)


def empirical_covariance(ensemble) -> np.ndarray:
    """Unweighted covariance of the empirical measure (normalised by ``J``)."""
    x = as_positions(ensemble)
    diff = x - np.sum(x, axis=0) / x.shape[0]
    cov = np.einsum("ji,jk->ik", diff, diff) / x.shape[0]
    return 0.5 * (cov + cov.T)


def sqrt_psd(C, tol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square root via ``eigh``, clamping negative eigenvalues to 0.

    Clamping at zero (not at a small epsilon) keeps the root of a collapsed
    covariance exactly zero.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {C.shape}")
    scale = max(1.0, float(np.max(np.abs(C))) if C.size else 1.0)
    if np.max(np.abs(C - C.T), initial=0.0) > tol * scale:
        raise ValueError("sqrt_psd requires a symmetric matrix")
    evals, evecs = np.linalg.eigh(0.5 * (C + C.T))
    root = np.sqrt(np.clip(evals, 0.0, None))
    S = np.einsum("ik,k,jk->ij", evecs, root, evecs)
    return 0.5 * (S + S.T)


def effective_sample_size(log_weights) -> float:
    """``1 / sum_j w_j^2`` for normalised weights; lies in ``[1, J]``."""
    lw = np.asarray(log_weights, dtype=float)
    return float(np.exp(-logsumexp(2.0 * lw)))


def raw_moment(ensemble, p: float) -> float:
    """Empirical ``p``-th moment ``(1/J) sum_j |X_j|^p``."""
    if not p > 0:
        raise ValueError("moment order must be positive")
    x = as_positions(ensemble)
    return float(np.mean(np.linalg.norm(x, axis=1) ** p))


def summarize_values(positions, values, beta: float) -> WeightedSummary:
    x = as_positions(positions)
    lw = weights_from_values(values, beta)
    mean = weighted_mean(x, lw)
    cov = weighted_covariance(x, lw, mean)
    return WeightedSummary(lw, mean, cov, sqrt_psd(cov), effective_sample_size(lw))


def summarize(ensemble, objective: ObjectiveSpec, beta: float) -> WeightedSummary:
    """Weights, weighted mean and covariance, covariance root and ESS in one pass."""
    x = as_positions(ensemble)
    return summarize_values(x, objective(x), beta)


def weighted_moment_bound_constant(q: float, p: float, beta: float) -> float:
    """Constant ``C(q, p, beta)`` bounding weighted ``p``-moments of nonnegative samples.

    For ``y_j >= 0`` and weights ``exp(-beta y_j)``,

        sum_j w_j y_j^p / sum_j w_j <= C (1 + mean(y^q))^(p/q),

    with ``C = (1 - 2^-q)^-1 (p/beta)^p exp(2 beta - p)``.
    """
    if not (q > 0 and p > 0 and beta > 0):
        raise ValueError("q, p and beta must be positive")
    return (1.0 - 2.0**-q) ** -1 * (p / beta) ** p * np.exp(2.0 * beta - p)


def weighted_moment_ratio(y, p: float, q: float, beta: float) -> float:
    """Left side divided by ``(1 + mean(y^q))^(p/q)`` for the bound above."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("samples must be nonnegative")
    lw = weights_from_values(y, beta)
    lhs = float(np.sum(np.exp(lw) * y**p))
    return lhs / (1.0 + float(np.mean(y**q))) ** (p / q)


def write_ensemble_csv(ensemble, path, comment: str | None = None) -> None:
    """One particle per row, columns ``x_1 .. x_d``."""
    x = as_positions(ensemble)
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x_{i + 1}" for i in range(x.shape[1])])
        for row in x:
            writer.writerow([repr(float(v)) for v in row])


def read_ensemble_csv(path) -> ParticleEnsemble:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.reader(lines[1:]))
    return ParticleEnsemble(np.array(rows, dtype=float))
