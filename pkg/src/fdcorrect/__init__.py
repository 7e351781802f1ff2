"""Frequency-domain differential correction of quasi-periodic orbits.

Dynamical models of the Earth-Moon system, long-span propagation with
variational equations, windowed frequency refinement (L-NAFF and GMS-C),
analytic sensitivities of refined frequency components, and single- and
multiple-shooting correctors that target frequencies, amplitudes and phases.
"""

from .constants import SystemConstants, default_constants, load_constants
from .corrector import (ConfigurationError, ConstellationProblem, FrequencyTarget, ModeSelector, PeakIdentityError,
                        ShootingProblem, SignalRecipe, SolverOptions, relative_phase_drift, solve_constellation,
                        solve_multi, solve_single, verify_solution)
from .dynamics import DynamicsModel, cr3bp_model, hfem_model
from .ephemeris import BicircularEphemeris, CircularEphemeris, make_provider
from .frames import FrameTag, KeplerElements, StateVector6
from .propagation import (PatchpointSchedule, PropagationOptions, SampledSignal, SignalExtractor, propagate,
                          propagate_segments, propagate_with_stm, sample_signal)
from .refine import FrequencyComponent, QuasiPeriodicModel, refine_sequential
from .sensitivity import frequency_sensitivities

__version__ = "0.1.0"

__all__ = [
    "SystemConstants",
    "default_constants",
    "load_constants",
    "ConfigurationError",
    "ConstellationProblem",
    "FrequencyTarget",
    "ModeSelector",
    "PeakIdentityError",
    "ShootingProblem",
    "SignalRecipe",
    "SolverOptions",
    "relative_phase_drift",
    "solve_constellation",
    "solve_multi",
    "solve_single",
    "verify_solution",
    "DynamicsModel",
    "cr3bp_model",
    "hfem_model",
    "BicircularEphemeris",
    "CircularEphemeris",
    "make_provider",
    "FrameTag",
    "KeplerElements",
    "StateVector6",
    "PatchpointSchedule",
    "PropagationOptions",
    "SampledSignal",
    "SignalExtractor",
    "propagate",
    "propagate_segments",
    "propagate_with_stm",
    "sample_signal",
    "FrequencyComponent",
    "QuasiPeriodicModel",
    "refine_sequential",
    "frequency_sensitivities",
]
