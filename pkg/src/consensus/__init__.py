"""Consensus-based optimization and sampling as interacting particle SDEs.

The package is organised bottom-up:

* :mod:`consensus.objectives` -- objective functions and their growth classes
* :mod:`consensus.ensemble` -- weighted moments of particle ensembles
* :mod:`consensus.dynamics` -- CBO / CBS drift and diffusion coefficients
* :mod:`consensus.integrator` -- Euler-Maruyama stepping with coupled noise
* :mod:`consensus.meanfield` -- Monte Carlo study of the mean-field error
* :mod:`consensus.analysis` -- numerical audits of stability and moment bounds
* :mod:`consensus.cli` -- the ``consensus`` command line tool
"""

from consensus.dynamics import DynamicsSpec, apply_diffusion, drift
from consensus.ensemble import (
    ParticleEnsemble,
    WeightedSummary,
    compute_weights,
    effective_sample_size,
    raw_moment,
    sqrt_psd,
    summarize,
    weighted_covariance,
    weighted_mean,
)
from consensus.integrator import (
    BlowUpError,
    InitSpec,
    NoiseStream,
    TimeGrid,
    em_step,
    sample_initial,
    simulate,
    simulate_coupled,
)
from consensus.meanfield import (
    ConvergenceConfig,
    ConvergenceReport,
    estimate_error,
    fit_loglog_slope,
    run_convergence_study,
)
from consensus.objectives import GrowthClass, ObjectiveSpec, eval_ackley, get_objective

__version__ = "0.1.0"

__all__ = [
    "BlowUpError",
    "ConvergenceConfig",
    "ConvergenceReport",
    "DynamicsSpec",
    "GrowthClass",
    "InitSpec",
    "NoiseStream",
    "ObjectiveSpec",
    "ParticleEnsemble",
    "TimeGrid",
    "WeightedSummary",
    "apply_diffusion",
    "compute_weights",
    "drift",
    "effective_sample_size",
    "em_step",
    "estimate_error",
    "eval_ackley",
    "fit_loglog_slope",
    "get_objective",
    "raw_moment",
    "run_convergence_study",
    "sample_initial",
    "simulate",
    "simulate_coupled",
    "sqrt_psd",
    "summarize",
    "weighted_covariance",
    "weighted_mean",
]
