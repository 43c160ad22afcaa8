"""Stereo egocentric 3D human pose estimation with scene depth and temporal context."""

from .errors import (
    ConfigurationError,
    DivergenceError,
    EgoStereoError,
    IntegrityError,
    NotADatasetError,
)
from .geometry import FisheyeCamera, RigidTransform, StereoRig, procrustes_align
from .skeleton import CANONICAL_SKELETON, FrameTag, Pose3D

__version__ = "0.1.0"

__all__ = [
    "CANONICAL_SKELETON",
    "ConfigurationError",
    "DivergenceError",
    "EgoStereoError",
    "FisheyeCamera",
    "FrameTag",
    "IntegrityError",
    "NotADatasetError",
    "Pose3D",
    "RigidTransform",
    "StereoRig",
    "procrustes_align",
]
