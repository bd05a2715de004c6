"""Self-verification for CNN inference.

Inputs are checked against per-class reference profiles built from a
calibration set. Images are compared by their salient region's binary
frequency pattern, audio by the distribution of last-conv activations.
"""

from .bundle import SampleSet, load_bundle, load_sampleset, save_bundle, save_sampleset
from .cam import CropConfig
from .detector import DetectorConfig, Thresholds, classify_with_verification, detect
from .errors import SelfVerifyError
from .kernels import BACKEND, use_backend
from .metrics import activation_inconsistency
from .network import LayerSpec, Network, NetworkSpec, Objective, forward, input_gradient
from .profiler import ProfileConfig, ProfileStore, build_profiles, load_profiles, save_profiles
from .spectral import frequency_pattern, semantic_inconsistency

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CropConfig", "DetectorConfig", "LayerSpec", "Network", "NetworkSpec", "Objective",
    "ProfileConfig", "ProfileStore", "SampleSet", "SelfVerifyError", "Thresholds",
    "activation_inconsistency", "build_profiles", "classify_with_verification", "detect",
    "forward", "frequency_pattern", "input_gradient", "load_bundle", "load_profiles",
    "load_sampleset", "save_bundle", "save_profiles", "save_sampleset", "semantic_inconsistency",
    "use_backend",
]
