"""Egocentric voxel mapping: unprojection, egomotion, memory, projection and detection."""

from .errors import (
    BehindCamera,
    BoxError,
    DegenerateMatch,
    EgomapError,
    FormatError,
    PlacementError,
    ShapeError,
)
from .geometry import CameraIntrinsics, GridSpec, Pose
from .memory import Frame, MapConfig, integrate_views
from .volume import FeatureVolume

__version__ = "0.1.0"

__all__ = [
    "BehindCamera",
    "BoxError",
    "CameraIntrinsics",
    "DegenerateMatch",
    "EgomapError",
    "FeatureVolume",
    "FormatError",
    "Frame",
    "GridSpec",
    "MapConfig",
    "PlacementError",
    "Pose",
    "ShapeError",
    "integrate_views",
]
