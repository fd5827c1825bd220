"""Monte Carlo study of the finite-ensemble error against a large reference system.

For every realization ``m`` one coupled run advances a reference system of
``J_inf`` particles (the mean-field proxy) together with subsystems of size
``J`` that share its initial conditions and Brownian increments. The error
estimator is

    E_hat(J) = 1/(M J) sum_m sum_j max_k |X^(j/J,m)_k - X^(j/J_inf,m)_k|^p,

and the expected behaviour for ``p = 2`` is ``E_hat(J) ~ 1/J`` once ``J`` is
large enough for the weighted mean to average over many particles.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from consensus.dynamics import DynamicsSpec
from consensus.integrator import BlowUpError, InitSpec, NoiseStream, TimeGrid, simulate_coupled
from consensus.objectives import get_objective

logger = logging.getLogger(__name__)

DEFAULT_J_LIST = tuple(10 * 2**k for k in range(10))


@dataclass(frozen=True)
class ConvergenceConfig:
    """Parameters of a coupled convergence study.

    The defaults are a desk-scale version of the reference experiment:
    CBO with isotropic noise on Ackley in two dimensions, ``beta = 3``,
    ``sigma = 0.2``, ``dt = 0.01``, ``T = 1``, standard normal initial law,
    with ``J_inf = 32768`` and ``M = 20`` instead of ``10**6`` and ``100``.
    """

    J_list: tuple[int, ...] = DEFAULT_J_LIST
    J_inf: int = 32768
    M: int = 20
    p: float = 2.0
    grid: TimeGrid = TimeGrid(0.01, 100)
    spec: DynamicsSpec = DynamicsSpec.from_sigma("cbo-iso", 3.0, 0.2)
    objective: str = "ackley"
    d: int = 2
    init: InitSpec = InitSpec.standard_normal(2)
    seed: int = 0
    fit_min_J: int = 160

    def __post_init__(self) -> None:
        J_list = tuple(int(J) for J in self.J_list)
        object.__setattr__(self, "J_list", J_list)
        if not J_list or any(J < 1 for J in J_list):
            raise ValueError("J_list must contain positive integers")
        if list(J_list) != sorted(set(J_list)):
            raise ValueError("J_list must be strictly ascending")
        if max(J_list) > self.J_inf:
            raise ValueError("max(J_list) must not exceed J_inf")
        if self.M < 1:
            raise ValueError("M must be positive")
        if not self.p > 0:
            raise ValueError("p must be positive")
        if self.init.dim != self.d:
            raise ValueError("init dimension does not match d")
        if 4 * max(J_list) > self.J_inf:
            warnings.warn(
                f"max(J_list)={max(J_list)} is not small against J_inf={self.J_inf}; "
                "the reference system is a poor mean-field proxy",
                stacklevel=2,
            )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["J_list"] = list(self.J_list)
        return out

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class ConvergenceReport:
    config: ConvergenceConfig
    J_list: list[int]
    E_hat: np.ndarray
    stderr: np.ndarray
    slope: float | None
    raw: dict[int, np.ndarray] = field(repr=False)
    min_eig_cov: np.ndarray | None = field(default=None, repr=False)
    min_eig_wcov: np.ndarray | None = field(default=None, repr=False)
    failures: list[tuple[int, int | None, str]] = field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def band(self) -> tuple[np.ndarray, np.ndarray]:
        """Two-standard-deviation band around ``E_hat``."""
        return self.E_hat - 2.0 * self.stderr, self.E_hat + 2.0 * self.stderr


class StudyError(RuntimeError):
    """A realization failed; ``partial`` holds the report over the completed ones."""

    def __init__(self, message: str, partial: ConvergenceReport | None):
        super().__init__(message)
        self.partial = partial


def estimate_error(sup_sq, p: float = 2.0) -> tuple[float, float]:
    """Estimator and its standard error from an ``(M, J)`` table of squared sups.

    The standard error uses the ``M`` per-realization averages, since the
    particles of one realization are correlated.
    """
    table = np.asarray(sup_sq, dtype=float)
    if table.ndim != 2 or 0 in table.shape:
        raise ValueError(f"expected a non-empty (M, J) table, got shape {table.shape}")
    if np.any(table < 0):
        raise ValueError("squared displacements must be nonnegative")
    vals = table if p == 2 else table ** (p / 2.0)
    per_m = np.mean(vals, axis=1)
    M = per_m.size
    E = float(np.mean(per_m))
    se = float(np.std(per_m, ddof=1) / np.sqrt(M)) if M > 1 else float("nan")
    return E, se


def fit_loglog_slope(J, E, J_min: float | None = None) -> float:
    """Least-squares slope of ``log E`` against ``log J`` over ``J >= J_min``."""
    J = np.asarray(J, dtype=float)
    E = np.asarray(E, dtype=float)
    sel = J >= J_min if J_min is not None else np.ones(J.shape, dtype=bool)
    zero = sel & (E <= 0)
    if zero.any():
        warnings.warn(f"dropping {int(zero.sum())} non-positive points from the slope fit", stacklevel=2)
    sel &= E > 0
    if sel.sum() < 2:
        raise ValueError("need at least two positive points in range to fit a slope")
    slope, _ = np.polyfit(np.log(J[sel]), np.log(E[sel]), 1)
    return float(slope)


def report_from_raw(
    config: ConvergenceConfig, raw: dict[int, np.ndarray], **extra
) -> ConvergenceReport:
    """Aggregate a raw ``{J: (M, J) array}`` table into a report (deterministic)."""
    J_list = [J for J in config.J_list if J in raw]
    stats = [estimate_error(raw[J], config.p) for J in J_list]
    E = np.array([s[0] for s in stats])
    se = np.array([s[1] for s in stats])
    slope = None
    in_range = [J for J, e in zip(J_list, E) if J >= config.fit_min_J and e > 0]
    if len(in_range) >= 2:
        slope = fit_loglog_slope(J_list, E, config.fit_min_J)
    return ConvergenceReport(config, J_list, E, se, slope, raw, **extra)


def _one_realization(config: ConvergenceConfig, m: int):
    objective = get_objective(config.objective, config.d)
    noise = NoiseStream(config.seed, config.d)
    return simulate_coupled(
        config.J_list, config.J_inf, config.spec, objective, config.grid, config.init, noise, m
    )


def run_convergence_study(config: ConvergenceConfig, threads: int = 1) -> ConvergenceReport:
    """Run all ``M`` coupled realizations and aggregate them.

    Realizations run on a thread pool of size ``threads`` (0 picks one per
    CPU); aggregation happens afterwards in realization order, so the result
    does not depend on the number of threads.
    """
    workers = threads if threads > 0 else (os.cpu_count() or 1)
    t0 = time.perf_counter()
    results: dict[int, object] = {}
    failures: list[tuple[int, int | None, str]] = []

    def task(m):
        try:
            return m, _one_realization(config, m)
        except BlowUpError as exc:
            return m, exc

    if workers == 1:
        outcomes = map(task, range(config.M))
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        outcomes = pool.map(task, range(config.M))
    try:
        for m, res in outcomes:
            if isinstance(res, BlowUpError):
                logger.warning("realization %d failed: %s", m, res)
                failures.append((m, res.system_size, str(res)))
            else:
                results[m] = res
                logger.debug("realization %d done", m)
    finally:
        if workers != 1:
            pool.shutdown()

    done = sorted(results)
    raw = {J: np.stack([results[m].sup_sq[J] for m in done]) for J in config.J_list} if done else {}
    extra = {"failures": failures, "runtime_s": time.perf_counter() - t0}
    if config.spec.is_cbs and done:
        extra["min_eig_cov"] = np.stack([results[m].min_eig_cov for m in done])
        extra["min_eig_wcov"] = np.stack([results[m].min_eig_wcov for m in done])
    if failures:
        partial = report_from_raw(config, raw, **extra) if done else None
        raise StudyError(f"{len(failures)} of {config.M} realizations blew up", partial)
    return report_from_raw(config, raw, **extra)


RESULT_COLUMNS = ("J", "E_hat", "stderr", "M", "p", "method", "seed")


def _header(config: ConvergenceConfig) -> str:
    return f"# config_sha256={config.digest()} seed={config.seed}\n"


def write_results_csv(report: ConvergenceReport, path) -> None:
    cfg = report.config
    M = next(iter(report.raw.values())).shape[0] if report.raw else 0
    with open(path, "w", newline="") as fh:
        fh.write(_header(cfg))
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for J, E, se in zip(report.J_list, report.E_hat, report.stderr):
            writer.writerow([J, repr(float(E)), repr(float(se)), M, repr(float(cfg.p)), cfg.spec.method, cfg.seed])


def read_results_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_raw_csv(report: ConvergenceReport, path) -> None:
    """Raw squared sup-displacements keyed by ``(m, J, j)``."""
    with open(path, "w", newline="") as fh:
        fh.write(_header(report.config))
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["m", "J", "j", "sup_sq"])
        for J in report.J_list:
            for m, row in enumerate(report.raw[J]):
                for j, v in enumerate(row):
                    writer.writerow([m, J, j, repr(float(v))])


def read_raw_csv(path) -> dict[int, np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    cells: dict[int, dict[tuple[int, int], float]] = {}
    for r in rows:
        cells.setdefault(int(r["J"]), {})[(int(r["m"]), int(r["j"]))] = float(r["sup_sq"])
    raw = {}
    for J, entries in cells.items():
        M = 1 + max(m for m, _ in entries)
        table = np.empty((M, J))
        for (m, j), v in entries.items():
            table[m, j] = v
        raw[J] = table
    return raw
