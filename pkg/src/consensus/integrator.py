"""Euler-Maruyama time stepping with addressable, coupling-friendly noise.

Synchronous coupling needs every subsystem of size ``J`` to see exactly the
Brownian increments of the first ``J`` particles of the large system. The
noise therefore comes from a counter-based generator (Philox): the standard
normal at address ``(realization m, particle j, step k, coordinate i)`` is
entry ``j * d + i`` of a stream keyed by ``(seed, m)`` whose counter starts
at ``(k + 1) * 2**128``. Distinct steps never share counter space, and since
normals are drawn sequentially a subsystem reads a prefix of the same block.
Step ``k = -1`` is reserved for initial conditions.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from consensus.dynamics import DynamicsSpec, apply_diffusion, drift
from consensus.ensemble import (
    ParticleEnsemble,
    WeightedSummary,
    as_positions,
    empirical_covariance,
    sqrt_psd,
    summarize,
)
from consensus.objectives import ObjectiveSpec

logger = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e12
_U64 = (1 << 64) - 1


class BlowUpError(RuntimeError):
    """Particle positions left the finite range during time stepping."""

    def __init__(self, message: str, step: int | None = None, system_size: int | None = None):
        super().__init__(message)
        self.step = step
        self.system_size = system_size


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    steps: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be positive")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ValueError("steps must be a non-negative integer")

    @classmethod
    def from_final_time(cls, T: float, dt: float) -> "TimeGrid":
        steps = int(round(T / dt))
        if abs(steps * dt - T) > 1e-12:
            raise ValueError(f"final time {T} is not a multiple of dt={dt}")
        return cls(dt, steps)

    @property
    def T(self) -> float:
        return self.steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


class NoiseStream:
    """Deterministic standard normals addressed by ``(m, j, k, i)``."""

    def __init__(self, seed: int, dim: int):
        if not 0 <= int(seed) <= _U64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if dim < 1:
            raise ValueError("dim must be positive")
        self.seed = int(seed)
        self.dim = int(dim)

    def __repr__(self) -> str:
        return f"NoiseStream(seed={self.seed}, dim={self.dim})"

    def _generator(self, m: int, k: int) -> np.random.Generator:
        if m < 0 or k < -1:
            raise ValueError("realization must be >= 0 and step >= -1")
        key = np.array([self.seed, m & _U64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=(k + 1) << 128))

    def normals(self, m: int, k: int, n_particles: int) -> np.ndarray:
        """Deviates for particles ``0 .. n_particles - 1`` at step ``k``, shape ``(n, d)``."""
        return self._generator(m, k).standard_normal((n_particles, self.dim))

    def deviate(self, m: int, j: int, k: int, i: int) -> float:
        if not 0 <= i < self.dim:
            raise IndexError("coordinate out of range")
        return float(self.normals(m, k, j + 1)[j, i])


@dataclass(frozen=True)
class InitSpec:
    """Initial law: ``gaussian`` with ``mean``/``cov`` or ``uniform`` on ``[low, high]``."""

    kind: str
    mean: tuple[float, ...] | None = None
    cov: tuple[tuple[float, ...], ...] | None = None
    low: tuple[float, ...] | None = None
    high: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind == "gaussian":
            if self.mean is None or self.cov is None:
                raise ValueError("gaussian init needs mean and cov")
            mean = np.asarray(self.mean, dtype=float)
            cov = np.asarray(self.cov, dtype=float)
            if cov.shape != (mean.size, mean.size):
                raise ValueError("cov must be a d x d matrix matching mean")
            if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12 * max(1.0, np.abs(cov).max()):
                raise ValueError("cov must be symmetric")
            if mean.size and np.linalg.eigvalsh(cov).min() < -1e-12 * max(1.0, np.abs(cov).max()):
                raise ValueError("cov must be positive semidefinite")
        elif self.kind == "uniform":
            if self.low is None or self.high is None or len(self.low) != len(self.high):
                raise ValueError("uniform init needs low and high of equal length")
            if any(h < lo for lo, h in zip(self.low, self.high)):
                raise ValueError("uniform init needs low <= high")
        else:
            raise ValueError(f"unknown init kind {self.kind!r}")

    @classmethod
    def gaussian(cls, mean, cov) -> "InitSpec":
        mean = tuple(float(v) for v in np.ravel(mean))
        cov = tuple(tuple(float(v) for v in row) for row in np.atleast_2d(cov))
        return cls("gaussian", mean=mean, cov=cov)

    @classmethod
    def standard_normal(cls, d: int) -> "InitSpec":
        return cls.gaussian(np.zeros(d), np.eye(d))

    @classmethod
    def uniform(cls, low, high) -> "InitSpec":
        return cls("uniform", low=tuple(map(float, low)), high=tuple(map(float, high)))

    @property
    def dim(self) -> int:
        return len(self.mean) if self.kind == "gaussian" else len(self.low)


def sample_initial(J: int, init: InitSpec, noise: NoiseStream, m: int = 0) -> ParticleEnsemble:
    """Initial particles for realization ``m``, read from step address ``-1``.

    Particle ``j`` depends only on its own addresses, so the first ``J``
    particles coincide for every ensemble size.
    """
    if J < 1:
        raise ValueError("J must be positive")
    if init.dim != noise.dim:
        raise ValueError("init dimension and noise dimension differ")
    z = noise.normals(m, -1, J)
    if init.kind == "gaussian":
        root = sqrt_psd(np.asarray(init.cov, dtype=float), tol=1e-12)
        x = np.asarray(init.mean) + np.einsum("jk,ik->ji", z, root)
    else:
        low, high = np.asarray(init.low), np.asarray(init.high)
        x = low + (high - low) * ndtr(z)
    return ParticleEnsemble(x)


def _check_finite(x: np.ndarray, step: int | None, system_size: int | None = None) -> None:
    bad = ~np.isfinite(x) | (np.abs(x) > BLOWUP_THRESHOLD)
    if bad.any():
        j = int(np.argwhere(bad)[0, 0])
        raise BlowUpError(
            f"blow-up at step {step}: particle {j} at {x[j]} "
            f"(system size {system_size if system_size is not None else x.shape[0]})",
            step=step,
            system_size=system_size,
        )


def _advance(x, spec, objective, dt, dW, summary=None):
    if summary is None:
        summary = summarize(x, objective, spec.beta)
    return x + drift(x, summary) * dt + apply_diffusion(x, summary, dW, spec), summary


def em_step(
    ensemble,
    spec: DynamicsSpec,
    objective: ObjectiveSpec,
    dt: float,
    noise,
    summary: WeightedSummary | None = None,
) -> ParticleEnsemble:
    """One explicit Euler-Maruyama step.

    ``noise`` holds the Brownian increments (already scaled by ``sqrt(dt)``).
    The summary is computed from the pre-step ensemble unless one is given.
    """
    x = as_positions(ensemble)
    dW = np.asarray(noise, dtype=float)
    if dW.shape != x.shape:
        raise ValueError(f"noise shape {dW.shape} does not match ensemble shape {x.shape}")
    new, _ = _advance(x, spec, objective, dt, dW, summary)
    _check_finite(new, step=None)
    return ParticleEnsemble(new)


@dataclass
class TrajectoryRecord:
    """Output of :func:`simulate`.

    ``ensembles`` holds snapshots at ``snapshot_steps`` (every ``stride``-th
    step plus the final one). ``summaries`` holds the weighted summary of the
    ensemble at every grid time when requested. ``covariances`` holds the
    unweighted empirical covariance at every grid time when requested.
    """

    grid: TimeGrid
    snapshot_steps: list[int] = field(default_factory=list)
    ensembles: list[np.ndarray] = field(default_factory=list)
    summaries: list[WeightedSummary] = field(default_factory=list)
    covariances: np.ndarray | None = None

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def final(self) -> ParticleEnsemble:
        return ParticleEnsemble(self.ensembles[-1])

    @property
    def weighted_covariances(self) -> np.ndarray:
        return np.stack([s.weighted_cov for s in self.summaries])


def simulate(
    J: int,
    spec: DynamicsSpec,
    objective: ObjectiveSpec,
    grid: TimeGrid,
    init: InitSpec,
    noise: NoiseStream,
    m: int = 0,
    *,
    stride: int = 1,
    keep_summaries: bool = True,
    keep_covariances: bool = False,
) -> TrajectoryRecord:
    """Run ``grid.steps`` Euler-Maruyama steps of a ``J``-particle system.

    Step ``k`` consumes noise addresses ``(m, j, k, .)`` scaled by ``sqrt(dt)``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    x = sample_initial(J, init, noise, m).positions
    sqdt = math.sqrt(grid.dt)
    rec = TrajectoryRecord(grid)
    covs = []
    K = grid.steps
    for k in range(K + 1):
        summary = summarize(x, objective, spec.beta)
        if keep_summaries:
            rec.summaries.append(summary)
        if keep_covariances:
            covs.append(empirical_covariance(x))
        if k % stride == 0 or k == K:
            rec.snapshot_steps.append(k)
            rec.ensembles.append(x)
        if k == K:
            break
        dW = sqdt * noise.normals(m, k, J)
        x, _ = _advance(x, spec, objective, grid.dt, dW, summary)
        _check_finite(x, step=k, system_size=J)
    if keep_covariances:
        rec.covariances = np.stack(covs)
    return rec


@dataclass
class CoupledResult:
    """Per-particle running maxima of ``|X^(j/J) - X^(j/J_inf)|^2`` over the grid.

    For CBS runs the minimum eigenvalues of the unweighted and weighted
    covariance of the large system are traced at every grid time.
    """

    J_inf: int
    sup_sq: dict[int, np.ndarray]
    min_eig_cov: np.ndarray | None = None
    min_eig_wcov: np.ndarray | None = None


def simulate_coupled(
    J_list,
    J_inf: int,
    spec: DynamicsSpec,
    objective: ObjectiveSpec,
    grid: TimeGrid,
    init: InitSpec,
    noise: NoiseStream,
    m: int = 0,
) -> CoupledResult:
    """Advance the ``J_inf`` system and all subsystems in lockstep.

    Every system reads its noise from the same per-step block, so particle
    ``j`` receives identical increments in every system containing it. The
    pathwise supremum is taken over the grid points.
    """
    J_list = [int(J) for J in J_list]
    if not J_list:
        raise ValueError("J_list must not be empty")
    if any(J < 1 for J in J_list) or max(J_list) > J_inf:
        raise ValueError("every J must satisfy 1 <= J <= J_inf")
    x_inf = sample_initial(J_inf, init, noise, m).positions
    systems = {J: x_inf[:J].copy() for J in J_list}
    sup_sq = {J: np.zeros(J) for J in J_list}
    sqdt = math.sqrt(grid.dt)
    eig_cov, eig_wcov = [], []

    for k in range(grid.steps + 1):
        s_inf = summarize(x_inf, objective, spec.beta)
        if spec.is_cbs:
            eig_cov.append(np.linalg.eigvalsh(empirical_covariance(x_inf))[0])
            eig_wcov.append(np.linalg.eigvalsh(s_inf.weighted_cov)[0])
        if k == grid.steps:
            break
        dW = sqdt * noise.normals(m, k, J_inf)
        x_inf, _ = _advance(x_inf, spec, objective, grid.dt, dW, s_inf)
        _check_finite(x_inf, step=k, system_size=J_inf)
        for J in J_list:
            x, _ = _advance(systems[J], spec, objective, grid.dt, dW[:J])
            _check_finite(x, step=k, system_size=J)
            systems[J] = x
            diff = x - x_inf[:J]
            np.maximum(sup_sq[J], np.sum(diff * diff, axis=1), out=sup_sq[J])

    result = CoupledResult(J_inf, sup_sq)
    if spec.is_cbs:
        result.min_eig_cov = np.array(eig_cov)
        result.min_eig_wcov = np.array(eig_wcov)
    return result


def write_trajectory_csv(record: TrajectoryRecord, path, stride: int = 1, comment: str | None = None) -> None:
    """Long-format dump with columns ``t, j, x_1 .. x_d``."""
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        d = record.ensembles[0].shape[1]
        writer.writerow(["t", "j"] + [f"x_{i + 1}" for i in range(d)])
        for n, (k, x) in enumerate(zip(record.snapshot_steps, record.ensembles)):
            if n % stride and k != record.grid.steps:
                continue
            t = repr(k * record.grid.dt)
            for j, row in enumerate(x):
                writer.writerow([t, j] + [repr(float(v)) for v in row])
