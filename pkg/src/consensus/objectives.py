"""Objective functions and their growth-class metadata.

An objective ``f`` belongs to the class ``A(s, ell, u)`` when it is locally
Lipschitz with polynomial growth ``s`` of the Lipschitz constant,

    |f(x) - f(y)| <= L_f (1 + |x| + |y|)^s |x - y|,

and is sandwiched between two growth envelopes,

    c_ell |x|^ell - C_ell <= f(x) - f_min <= c_u |x|^u + C_u.

These are hypotheses of the convergence theory and cannot be verified by
evaluation, so :func:`validate_growth_class` only performs a sampled audit.
"""

from __future__ import annotations

import math
from dataclasses import InitVar, dataclass, field
from typing import Callable

import numpy as np

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GrowthClass:
    """Declared membership of an objective in ``A(s, ell, u)``.

    ``strict=False`` skips the structural check ``ell <= s + 1`` so that an
    inconsistent declaration can still be handed to the validator.
    """

    s: float
    ell: float
    u: float
    L_f: float
    c_ell: float = 1.0
    C_ell: float = 1.0
    c_u: float = 1.0
    C_u: float = 1.0
    strict: InitVar[bool] = True

    def __post_init__(self, strict: bool) -> None:
        if self.s < 0 or self.ell < 0:
            raise ValueError("growth class requires s >= 0 and ell >= 0")
        if self.u < self.ell:
            raise ValueError(f"growth class requires u >= ell, got u={self.u}, ell={self.ell}")
        for name in ("L_f", "c_ell", "C_ell", "c_u", "C_u"):
            if not getattr(self, name) > 0:
                raise ValueError(f"growth constant {name} must be positive")
        if strict and self.ell > self.s + 1:
            raise ValueError(
                f"ell={self.ell} exceeds s + 1 = {self.s + 1}; the class A(s, ell, u) is empty"
            )

    @property
    def p_M(self) -> float:
        """Smallest Wasserstein exponent for which the weighted mean is stable."""
        return self.s + 2 if self.ell == 0 else 1.0

    @property
    def p_C(self) -> float:
        """Smallest Wasserstein exponent for which the weighted covariance is stable."""
        return self.s + 3 if self.ell == 0 else 1.0

    @property
    def structurally_valid(self) -> bool:
        return self.ell <= self.s + 1


@dataclass(frozen=True)
class ObjectiveSpec:
    """An objective ``f: R^d -> R`` together with its declared growth class.

    ``evaluator`` must accept an array of shape ``(..., d)`` and return the
    values with shape ``(...)``. It must be pure and deterministic.
    """

    name: str
    dimension: int
    evaluator: Evaluator = field(repr=False)
    growth: GrowthClass
    known_minimum: tuple[np.ndarray, float] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")
        if self.known_minimum is not None:
            loc, value = self.known_minimum
            loc = np.asarray(loc, dtype=float)
            if loc.shape != (self.dimension,):
                raise ValueError("known minimum location has the wrong dimension")
            if abs(float(self.evaluator(loc)) - value) > 1e-12:
                raise ValueError(f"{self.name}: evaluator does not attain the declared minimum")
            object.__setattr__(self, "known_minimum", (loc, float(value)))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dimension:
            raise ValueError(f"{self.name} expects points in R^{self.dimension}, got shape {x.shape}")
        return self.evaluator(x)

    @property
    def f_min(self) -> float | None:
        return None if self.known_minimum is None else self.known_minimum[1]


def eval_ackley(x) -> np.ndarray:
    """Ackley function, vectorized over leading axes.

    The two exponential terms are paired with their constants so that the
    value at the origin is exactly zero and the output is never negative.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ValueError("eval_ackley expects a vector with at least one coordinate")
    d = x.shape[-1]
    rms = np.sqrt(np.sum(x * x, axis=-1) / d)
    mean_cos = np.sum(np.cos(2.0 * np.pi * x), axis=-1) / d
    return (20.0 - 20.0 * np.exp(-0.2 * rms)) + (np.e - np.exp(mean_cos))


def _quadratic(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1)


def ackley(d: int = 2) -> ObjectiveSpec:
    # gradient norm bounded by 4/sqrt(d) + 2*pi*e/sqrt(d); f ranges over [0, 20 + e)
    growth = GrowthClass(
        s=0.0, ell=0.0, u=0.0,
        L_f=(4.0 + 2.0 * math.pi * math.e) / math.sqrt(d),
        c_ell=1.0, C_ell=1.0, c_u=1.0, C_u=19.0 + math.e,
    )
    return ObjectiveSpec("ackley", d, eval_ackley, growth, (np.zeros(d), 0.0))


def quadratic(d: int = 2) -> ObjectiveSpec:
    growth = GrowthClass(s=1.0, ell=2.0, u=2.0, L_f=1.0, c_ell=1.0, C_ell=1.0, c_u=1.0, C_u=1.0)
    return ObjectiveSpec("quadratic", d, _quadratic, growth, (np.zeros(d), 0.0))


def shifted_quadratic(d: int = 2, shift=None) -> ObjectiveSpec:
    """``|x - a|^2`` with ``a`` defaulting to the all-ones vector."""
    a = np.ones(d) if shift is None else np.asarray(shift, dtype=float)
    if a.shape != (d,):
        raise ValueError("shift must be a vector of length d")
    a = a.copy()
    a.setflags(write=False)
    na = float(np.linalg.norm(a))

    def evaluator(x: np.ndarray) -> np.ndarray:
        diff = x - a
        return np.sum(diff * diff, axis=-1)

    # |x-a|^2 <= 2|x|^2 + 2|a|^2 and |x-a|^2 >= |x|^2/2 - |a|^2
    growth = GrowthClass(
        s=1.0, ell=2.0, u=2.0, L_f=max(1.0, 2.0 * na),
        c_ell=0.5, C_ell=max(na * na, 1e-12), c_u=2.0, C_u=max(2.0 * na * na, 1e-12),
    )
    return ObjectiveSpec("shifted_quadratic", d, evaluator, growth, (a, 0.0))


REGISTRY: dict[str, Callable[..., ObjectiveSpec]] = {
    "ackley": ackley,
    "quadratic": quadratic,
    "shifted_quadratic": shifted_quadratic,
}


def get_objective(name: str, d: int = 2) -> ObjectiveSpec:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown objective {name!r}; choose from {sorted(REGISTRY)}") from None
    return factory(d)


@dataclass
class ValidationReport:
    """Outcome of a sampled audit of a declared growth class.

    Ratios are normalised so that a value above 1 is a violation.
    """

    objective: str
    sample_count: int
    radius: float
    f_min: float
    f_min_source: str
    lipschitz_ratio: float
    upper_ratio: float
    lower_ratio: float
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _ball(rng: np.random.Generator, n: int, d: int, radius: float) -> np.ndarray:
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * (radius * rng.random(n) ** (1.0 / d))[:, None]


def validate_growth_class(
    spec: ObjectiveSpec, sample_count: int, radius: float, rng_seed: int = 0
) -> ValidationReport:
    """Audit the declared Lipschitz and growth constants of ``spec`` on random samples.

    Half of the pairs are independent points of the ball, the other half are
    nearby pairs, which probe the local Lipschitz constant. When no minimum
    is declared the sampled minimum stands in for ``f_min``.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be at least 2")
    if not radius > 0:
        raise ValueError("radius must be positive")
    g = spec.growth
    d = spec.dimension
    rng = np.random.default_rng(rng_seed)

    x = _ball(rng, sample_count, d, radius)
    y = _ball(rng, sample_count, d, radius)
    half = sample_count // 2
    y[:half] = x[:half] + 1e-3 * radius * rng.standard_normal((half, d))
    fx, fy = spec(x), spec(y)
    if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(fy))):
        raise ValueError(f"{spec.name}: evaluator returned non-finite values")

    if spec.f_min is not None:
        f_min, source = spec.f_min, "declared"
    else:
        f_min, source = float(min(fx.min(), fy.min())), "sampled"

    nx, ny = np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1)
    dist = np.linalg.norm(x - y, axis=1)
    keep = dist > 0
    lip = np.abs(fx - fy)[keep] / (g.L_f * (1.0 + nx + ny)[keep] ** g.s * dist[keep])

    gap = np.concatenate([fx, fy]) - f_min
    r = np.concatenate([nx, ny])
    upper = gap / (g.c_u * r**g.u + g.C_u)
    lower = g.c_ell * r**g.ell / (gap + g.C_ell)

    report = ValidationReport(
        objective=spec.name,
        sample_count=sample_count,
        radius=radius,
        f_min=f_min,
        f_min_source=source,
        lipschitz_ratio=float(lip.max()) if lip.size else 0.0,
        upper_ratio=float(upper.max()),
        lower_ratio=float(lower.max()),
    )
    if not g.structurally_valid:
        report.violations.append(f"ell={g.ell} > s + 1 = {g.s + 1}: class is empty")
    if report.lipschitz_ratio > 1.0:
        report.violations.append(f"local Lipschitz bound exceeded by factor {report.lipschitz_ratio:.4g}")
    if report.upper_ratio > 1.0:
        report.violations.append(f"upper growth envelope exceeded by factor {report.upper_ratio:.4g}")
    if report.lower_ratio > 1.0:
        report.violations.append(f"lower growth envelope exceeded by factor {report.lower_ratio:.4g}")
    return report
