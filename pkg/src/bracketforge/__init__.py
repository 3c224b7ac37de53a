"""Simulate, bracket, merge and evaluate HDR video from SDR input."""

__version__ = "0.1.0"

from .bracket import ExposureBracket, ExposureBracketer, exposure_range, make_bracket
from .core import ColorSpace, DataError, Video
from .merge import ClassicalMerger, merge_classical
from .mevmtoy import ToyMEVM
from .sdrsim import CrfEncoder, CrfParams, NoiseParams, SdrSimulator, simulate_sdr_input
from .vmm import VideoMergingModel, vmm_merge

__all__ = [
    "ClassicalMerger", "ColorSpace", "CrfEncoder", "CrfParams", "DataError", "ExposureBracket",
    "ExposureBracketer", "NoiseParams", "SdrSimulator", "ToyMEVM", "Video", "VideoMergingModel",
    "exposure_range", "make_bracket", "merge_classical", "simulate_sdr_input", "vmm_merge",
]
