"""Lifting images and depth maps into camera-aligned voxel grids."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .geometry import bilinear_sample, project_points, voxel_centers
from .volume import FeatureVolume, OccupancyGrid


def camera_voxel_centers(grid):
    """Voxel centers in the camera frame: grid k-axis on the optical axis, center at depth D."""
    return voxel_centers(grid) + np.array([0.0, 0.0, grid.center_distance])


def _check_image(image, intr):
    if image.shape[:2] != (intr.height, intr.width):
        raise ShapeError(f"image is {image.shape[:2]}, intrinsics say {(intr.height, intr.width)}")


def unproject_image(image, intr, grid):
    """Fill every voxel with the bilinear image sample at its projected center.

    Voxels projecting outside the image or lying behind the camera are zero.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        image = image[..., None]
    _check_image(image, intr)
    x, y = project_points(camera_voxel_centers(grid), intr)
    behind = np.isnan(x)
    x = np.where(behind, -1.0, x)
    y = np.where(behind, -1.0, y)
    return FeatureVolume(grid, bilinear_sample(image, x, y))


def sample_depth(depth, x, y):
    """Bilinear depth lookup that tolerates +inf (no-hit) pixels.

    Only finite neighbours contribute; if they carry less than half of the
    interpolation weight the sample is +inf.
    """
    depth = np.asarray(depth, dtype=float)
    finite = np.isfinite(depth)
    num = bilinear_sample(np.where(finite, depth, 0.0), x, y)
    den = bilinear_sample(finite.astype(float), x, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den >= 0.5, num / den, np.inf)


def unproject_depth(depth, intr, grid):
    """Binary shell of voxels whose center depth matches the observed depth.

    A voxel is occupied when it projects inside the image and its camera
    depth is within half a voxel pitch (along the optical axis) of the
    sampled depth.
    """
    depth = np.asarray(depth, dtype=float)
    _check_image(depth, intr)
    centers = camera_voxel_centers(grid)
    x, y = project_points(centers, intr)
    valid = ~np.isnan(x)
    x = np.where(valid, x, -1.0)
    y = np.where(valid, y, -1.0)
    inside = valid & (x >= 0) & (x <= intr.width - 1) & (y >= 0) & (y <= intr.height - 1)
    observed = sample_depth(depth, x, y)
    half = grid.voxel_size[2] / 2.0
    with np.errstate(invalid="ignore"):
        occ = inside & (np.abs(centers[..., 2] - observed) <= half)
    return OccupancyGrid(grid, occ.astype(np.uint8))


def mask_volume(features, shell):
    """Multiply every channel by a binary shell."""
    if features.grid.shape != shell.grid.shape:
        raise ShapeError(f"grid mismatch: {features.grid.shape} vs {shell.grid.shape}")
    return FeatureVolume(features.grid, features.data * shell.data[..., None])


def unproject_frame(image, depth, intr, grid):
    """RGB + occupancy feature volume for one frame.

    The occupancy channel is constant one before masking, so after masking it
    is exactly the depth shell. Without depth, an all-ones shell is used.
    """
    image = np.asarray(image, dtype=float)
    feats = np.concatenate([image, np.ones(image.shape[:2] + (1,))], axis=-1)
    vol = unproject_image(feats, intr, grid)
    shell = OccupancyGrid.ones(grid) if depth is None else unproject_depth(depth, intr, grid)
    return mask_volume(vol, shell)
