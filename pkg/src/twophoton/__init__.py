"""Two-photon interference between coherent and incoherent light transmitted
past a chain of waveguide-coupled two-level emitters."""

__version__ = "0.1.0"

from .errors import ConfigError, FitError, GridError, MatchingError, NumericalError, TwoPhotonError
from .model import (
    DEFAULT_FREQUENCY_GRID,
    FAST_FREQUENCY_GRID,
    DelayGrid,
    DriveConfig,
    EmitterChainParams,
    FrequencyGrid,
    TwoPhotonState,
    coherent_pair_amplitude,
    g2_of_tau,
    phi_atom_freq,
    phi_atom_time,
    phi_ensemble_freq,
    phi_ensemble_time,
    relative_amplitude_eta,
    relative_phase,
    single_atom_reflection,
    single_atom_transmission,
)
from .matching import find_matching_n, fringe_scan, phase_slope_fit, visibility
from .saturation import fit_saturation, lambert_w0, od_from, transmission_saturated
from .estimation import CoincidenceHistogram, mle_fit_contrast, synth_histogram
from .montecarlo import ImperfectionConfig, averaged_fringe, visibility_vs_sigma

__all__ = [
    "CoincidenceHistogram",
    "ConfigError",
    "DEFAULT_FREQUENCY_GRID",
    "DelayGrid",
    "DriveConfig",
    "EmitterChainParams",
    "FAST_FREQUENCY_GRID",
    "FitError",
    "FrequencyGrid",
    "GridError",
    "ImperfectionConfig",
    "MatchingError",
    "NumericalError",
    "TwoPhotonError",
    "TwoPhotonState",
    "averaged_fringe",
    "coherent_pair_amplitude",
    "find_matching_n",
    "fit_saturation",
    "fringe_scan",
    "g2_of_tau",
    "lambert_w0",
    "mle_fit_contrast",
    "od_from",
    "phase_slope_fit",
    "phi_atom_freq",
    "phi_atom_time",
    "phi_ensemble_freq",
    "phi_ensemble_time",
    "relative_amplitude_eta",
    "relative_phase",
    "single_atom_reflection",
    "single_atom_transmission",
    "synth_histogram",
    "transmission_saturated",
    "visibility",
    "visibility_vs_sigma",
]
