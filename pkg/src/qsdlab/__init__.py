"""Numerical laboratory for quantum state diffusion."""

__version__ = "0.1.0"

from .hilbert import expectation, normalize, shifted_operator, variance
from .noise import NoiseStream, moment_report
from .propagator import QsdModel, StepScheme, diffusion, drift, evolve_trajectory, step
from .lindblad import evolve_rho, lindblad_rhs, trace_distance
from .ensemble import (
    EnsembleSpec,
    compare_to_lindblad,
    localization_curve,
    martingale_check,
    run_ensemble,
)

__all__ = [
    "expectation", "normalize", "shifted_operator", "variance",
    "NoiseStream", "moment_report",
    "QsdModel", "StepScheme", "diffusion", "drift", "evolve_trajectory", "step",
    "evolve_rho", "lindblad_rhs", "trace_distance",
    "EnsembleSpec", "compare_to_lindblad", "localization_curve", "martingale_check", "run_ensemble",
]
