"""Numerical KAM iteration for lattice Hamiltonians with weakly growing spectra."""

from . import iterate, kamstep, measure, pde, series, spectra
from .iterate import build_schedule, convergence_report, run
from .kamstep import apply_step, audit_hypotheses, solve_homological, truncate
from .pde import PdeSetup, action_angle_embed, kg_hamiltonian, nls_hamiltonian
from .series import (
    DomainWeights,
    ModeKey,
    TaylorFourierSeries,
    lie_transform,
    majorant_xnorm,
    poisson_bracket,
)

__version__ = "0.1.0"

__all__ = [
    "iterate", "kamstep", "measure", "pde", "series", "spectra",
    "build_schedule", "convergence_report", "run",
    "apply_step", "audit_hypotheses", "solve_homological", "truncate",
    "PdeSetup", "action_angle_embed", "kg_hamiltonian", "nls_hamiltonian",
    "DomainWeights", "ModeKey", "TaylorFourierSeries", "lie_transform", "majorant_xnorm", "poisson_bracket",
]
