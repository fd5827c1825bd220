"""Drift and diffusion coefficients of CBO and CBS.

Both methods share the drift ``-(x - M_beta)``. They differ in the noise:

* CBO, isotropic:   ``sqrt(2 theta) |x - M_beta| dW``
* CBO, anisotropic: ``sqrt(2 theta) diag(x - M_beta) dW``
* CBS:              ``sqrt(2 / lambda) sqrt(C_beta) dW``

The drift prefactor is fixed to one; a different prefactor amounts to a
rescaling of time and of ``theta``. All functions accept either a single
position of shape ``(d,)`` or a stack of positions of shape ``(J, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from consensus.ensemble import WeightedSummary

METHODS = ("cbo-iso", "cbo-aniso", "cbs-sample", "cbs-opt")


@dataclass(frozen=True)
class DynamicsSpec:
    """Which consensus dynamics to run, and at what inverse temperature.

    ``theta`` is the CBO noise parameter and is ignored for CBS. For CBS the
    method name fixes ``lambda``: ``1 / (1 + beta)`` when sampling and ``1``
    when optimizing.
    """

    method: str
    beta: float
    theta: float | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be finite and positive, got {self.beta}")
        if self.is_cbo:
            if self.theta is None or not self.theta > 0:
                raise ValueError("CBO requires a positive theta")

    @classmethod
    def cbo(cls, beta: float, theta: float, anisotropic: bool = False) -> "DynamicsSpec":
        return cls("cbo-aniso" if anisotropic else "cbo-iso", beta, theta)

    @classmethod
    def cbs(cls, beta: float, mode: str = "sampling") -> "DynamicsSpec":
        modes = {"sampling": "cbs-sample", "optimization": "cbs-opt"}
        if mode not in modes:
            raise ValueError(f"CBS mode must be one of {sorted(modes)}")
        return cls(modes[mode], beta)

    @classmethod
    def from_sigma(cls, method: str, beta: float, sigma: float) -> "DynamicsSpec":
        """Build from the noise amplitude ``sigma = sqrt(2 theta)``."""
        theta = 0.5 * sigma * sigma if method.startswith("cbo") else None
        return cls(method, beta, theta)

    @property
    def is_cbo(self) -> bool:
        return self.method.startswith("cbo")

    @property
    def is_cbs(self) -> bool:
        return self.method.startswith("cbs")

    @property
    def lam(self) -> float | None:
        if self.method == "cbs-sample":
            return 1.0 / (1.0 + self.beta)
        if self.method == "cbs-opt":
            return 1.0
        return None

    @property
    def sigma(self) -> float | None:
        return None if self.theta is None else math.sqrt(2.0 * self.theta)


def drift(x, summary: WeightedSummary) -> np.ndarray:
    return -(np.asarray(x, dtype=float) - summary.weighted_mean)


def apply_diffusion(x, summary: WeightedSummary, dW, spec: DynamicsSpec) -> np.ndarray:
    """Diffusion coefficient applied to the noise increments ``dW``."""
    dW = np.asarray(dW, dtype=float)
    if spec.is_cbs:
        # shared linear map; einsum keeps the product off BLAS
        scale = math.sqrt(2.0 / spec.lam)
        return scale * np.einsum("...k,ik->...i", dW, summary.sqrt_cov)
    u = np.asarray(x, dtype=float) - summary.weighted_mean
    scale = math.sqrt(2.0 * spec.theta)
    if spec.method == "cbo-iso":
        norm = np.sqrt(np.sum(u * u, axis=-1, keepdims=True))
        return scale * norm * dW
    return scale * u * dW
