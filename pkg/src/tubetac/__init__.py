"""Acoustic resonance tactile sensing: forward models, calibration and audio-to-force."""
from ._accel import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
