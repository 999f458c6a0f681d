"""Multiplicative ergodic theory and large deviations for finite Markov chains."""

from .markov_core import (
    ChainStructureError,
    TransitionKernel,
    asymptotic_variance,
    fundamental_kernel,
    solve_poisson,
    spectral_radius,
    stationary,
    structure_check,
)
from .spectral import (
    mult_poisson_solve,
    nonlinear_generator,
    principal_eigen,
    scale_kernel,
    tilted_chain,
    twisted_kernel,
)

__version__ = "0.1.0"

__all__ = [
    "ChainStructureError",
    "TransitionKernel",
    "asymptotic_variance",
    "fundamental_kernel",
    "mult_poisson_solve",
    "nonlinear_generator",
    "principal_eigen",
    "scale_kernel",
    "solve_poisson",
    "spectral_radius",
    "stationary",
    "structure_check",
    "tilted_chain",
    "twisted_kernel",
]
