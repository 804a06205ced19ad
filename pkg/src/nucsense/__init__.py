"""Pulsed spin-lock magnetometry with hyperpolarized nuclear spins: engines and analysis."""

__version__ = "0.1.0"

from .core import (GAMMA_13C, DriveField, PulseTrain, SpinSystem, random_network,  # noqa: E402
                   resonance_frequency, sensor_bandwidth, magnus_parameter)
from .errors import (ConfigError, DimensionError, DomainError, FitError,  # noqa: E402
                     IntegrityError, NucsenseError, RecordFormatError)
from .quantum import SimConfig, simulate, resonance_sweep, linewidth_vs_pulses  # noqa: E402
from .bloch import (analytic_trajectory, integrate_bloch, strobe_exact,  # noqa: E402
                    analytic_resonant, analytic_offresonant)
from .aht import aht_signal, average_dipolar, drive_phasor_average, toggling_frame  # noqa: E402
from .dsp import (MagnetometerTrace, RawRecord, decompose, extract_trace,  # noqa: E402
                  harmonic_spectrum, stft_track, synthesize_raw)
from .experiments import ExperimentConfig, SensitivityResult, estimate_sensitivity  # noqa: E402

__all__ = [
    "GAMMA_13C", "DriveField", "PulseTrain", "SpinSystem", "random_network", "resonance_frequency",
    "sensor_bandwidth", "magnus_parameter", "ConfigError", "DimensionError", "DomainError",
    "FitError", "IntegrityError", "NucsenseError", "RecordFormatError", "SimConfig", "simulate",
    "resonance_sweep", "linewidth_vs_pulses", "analytic_trajectory", "integrate_bloch",
    "strobe_exact", "analytic_resonant", "analytic_offresonant", "aht_signal", "average_dipolar",
    "drive_phasor_average", "toggling_frame", "MagnetometerTrace", "RawRecord", "decompose",
    "extract_trace", "harmonic_spectrum", "stft_track", "synthesize_raw", "ExperimentConfig",
    "SensitivityResult", "estimate_sensitivity",
]
