"""Depth-sliced projection of the memory to a query camera, and a first-hit decoder."""

from __future__ import annotations

import numpy as np

from .geometry import Pose, metric_to_index, pixel_rays, relative_rotation, trilinear_sample, view_rotation
from .volume import OCC_CHANNEL, RGB_CHANNELS

DEFAULT_THETA = 0.5


def slice_depths(grid):
    """Camera depths of the d projection slices: the voxel-center depths along k."""
    pitch = grid.voxel_size[2]
    return grid.center_distance - grid.side / 2.0 + (np.arange(grid.d) + 0.5) * pitch


def project_volume(m, query, intr):
    """Project memory ``m`` into the camera with relative rotation ``query``.

    Returns an array of shape (d, H, W, c): slice ``k`` holds, for every
    pixel, the memory sampled where the pixel ray reaches depth
    ``slice_depths(grid)[k]``.
    """
    grid = m.grid
    rot = view_rotation(*query)
    rays = pixel_rays(intr)
    depths = slice_depths(grid)
    # query-frame points relative to the grid center, then back to the memory frame
    pts = rays[None] * depths[:, None, None, None]
    pts[..., 2] -= grid.center_distance
    idx = metric_to_index(grid, pts @ rot)
    return trilinear_sample(m.data, idx[..., 0], idx[..., 1], idx[..., 2], skip_empty=True)


def composite_first_hit(stack, depths, theta=DEFAULT_THETA, background=(0.0, 0.0, 0.0)):
    """Front-to-back scan: the first slice with occupancy >= ``theta`` wins.

    The RGB channels are stored premultiplied by occupancy, so the emitted
    color is RGB / occupancy of the winning sample, clipped to [0, 1].
    Pixels without a hit get ``background`` and depth +inf.
    """
    stack = np.asarray(stack, dtype=float)
    occ = stack[..., OCC_CHANNEL]
    hit = occ >= theta
    any_hit = hit.any(axis=0)
    first = np.argmax(hit, axis=0)
    rows, cols = np.indices(first.shape)
    sample = stack[first, rows, cols]
    with np.errstate(divide="ignore", invalid="ignore"):
        color = np.clip(sample[..., RGB_CHANNELS] / sample[..., OCC_CHANNEL : OCC_CHANNEL + 1], 0.0, 1.0)
    rgb = np.where(any_hit[..., None], color, np.asarray(background, dtype=float))
    depth = np.where(any_hit, np.asarray(depths)[first], np.inf)
    return rgb, depth


def predict_view(m, query_pose, intr, theta=DEFAULT_THETA, reference_azimuth=0.0, background=(0.0, 0.0, 0.0)):
    """Render (rgb, depth) of memory ``m`` from ``query_pose``.

    ``reference_azimuth`` is the azimuth of the memory frame (the first view
    of the sequence that built it).
    """
    ref = Pose(reference_azimuth, 0.0, query_pose.radius)
    stack = project_volume(m, relative_rotation(query_pose, ref), intr)
    return composite_first_hit(stack, slice_depths(m.grid), theta, background)
