"""HRIR database processing, localization cues and loudspeaker modelling."""
from .dsp import ImpulseResponse, Spectrum
from .electroacoustics import REFERENCE_DRIVER, ThieleSmallParams, fit_tsp_delta_mass, simulate_sealed_module
from .pipeline import Direction, HrirDatabase, RawMeasurementSet, build_database
from .synth import SphericalHeadModel, SpeakerColoration, synth_set

__all__ = [
    "ImpulseResponse", "Spectrum", "REFERENCE_DRIVER", "ThieleSmallParams", "fit_tsp_delta_mass",
    "simulate_sealed_module", "Direction", "HrirDatabase", "RawMeasurementSet",
    "build_database", "SphericalHeadModel", "SpeakerColoration", "synth_set",
]
__version__ = "0.1.0"
