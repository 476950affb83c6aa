"""Relational entropic dynamics on periodic configuration-space grids."""
from .core import (
    EpistemicState,
    GridSpec,
    ParticleSystem,
    ShiftVelocity,
    WaveFunction,
    epistemic_to_wf,
    gaussian_packet,
    harmonic_ground_state,
    vortex_state,
    wf_to_epistemic,
)
from .observables import PotentialSpec, ObservableReport, observe
from .evolution import LapseProfile, SolverParams, evolve, parametrized_evolve, step_schrodinger

__version__ = "0.1.0"

__all__ = [
    "EpistemicState",
    "GridSpec",
    "LapseProfile",
    "ObservableReport",
    "ParticleSystem",
    "PotentialSpec",
    "ShiftVelocity",
    "SolverParams",
    "WaveFunction",
    "epistemic_to_wf",
    "evolve",
    "gaussian_packet",
    "harmonic_ground_state",
    "observe",
    "parametrized_evolve",
    "step_schrodinger",
    "vortex_state",
    "wf_to_epistemic",
]
