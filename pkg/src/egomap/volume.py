"""Feature volumes and their algebra.

A :class:`FeatureVolume` stores a ``(w, h, d, c)`` float array over a
:class:`~egomap.geometry.GridSpec`. Volumes are treated as values: every
operation returns a new volume and the backing array is read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ShapeError
from .geometry import GridSpec, metric_to_index, trilinear_sample, view_rotation, voxel_centers

RGB_CHANNELS = slice(0, 3)
OCC_CHANNEL = 3
N_CHANNELS = 4


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class FeatureVolume:
    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3:
            data = data[..., None]
        if data.ndim != 4 or data.shape[:3] != self.grid.shape:
            raise ShapeError(f"data shape {data.shape} does not match grid {self.grid.shape}")
        if data.shape[3] < 1:
            raise ShapeError("a feature volume needs at least one channel")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature volume values must be finite")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def zeros(cls, grid, channels):
        return cls(grid, np.zeros(grid.shape + (channels,)))

    @property
    def channels(self):
        return self.data.shape[3]

    @property
    def shape(self):
        return self.data.shape

    def channel(self, ch):
        return FeatureVolume(self.grid, self.data[..., ch : ch + 1])

    @property
    def occupancy(self):
        """The occupancy channel as a (w, h, d) array."""
        return self.data[..., OCC_CHANNEL]

    def scaled(self, alpha):
        return FeatureVolume(self.grid, self.data * alpha)


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != self.grid.shape:
            raise ShapeError(f"occupancy shape {data.shape} does not match grid {self.grid.shape}")
        if not np.all((data == 0) | (data == 1)):
            raise ValueError("occupancy values must be 0 or 1")
        data = np.ascontiguousarray(data, dtype=np.uint8)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def ones(cls, grid):
        return cls(grid, np.ones(grid.shape, dtype=np.uint8))

    def count(self):
        return int(self.data.sum())


def _check_same(a, b):
    if a.grid.shape != b.grid.shape or a.data.shape != b.data.shape:
        raise ShapeError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


@lru_cache(maxsize=8)
def _centers_flat(grid):
    return voxel_centers(grid).reshape(-1, 3)


def resample(vol, matrix):
    """Resample ``vol`` so that ``out(p) = vol(matrix @ p)`` about the grid center."""
    grid = vol.grid
    src = _centers_flat(grid) @ np.asarray(matrix, dtype=float).T
    idx = metric_to_index(grid, src)
    out = trilinear_sample(vol.data, idx[:, 0], idx[:, 1], idx[:, 2], skip_empty=True)
    return FeatureVolume(grid, out.reshape(vol.data.shape))


def rotate_volume(vol, d_az, d_el):
    """Rotate a volume about its center by yaw ``d_az`` then pitch ``d_el`` (degrees).

    Each output voxel pulls the trilinear sample at its inversely rotated
    center; sources outside the grid give zero.
    """
    if d_az == 0 and d_el == 0:
        return vol
    return resample(vol, view_rotation(d_az, d_el).T)


def add_volumes(a, b):
    _check_same(a, b)
    return FeatureVolume(a.grid, a.data + b.data)


def sub_volumes(a, b):
    _check_same(a, b)
    return FeatureVolume(a.grid, a.data - b.data)


def inner_product(a, b):
    """Sum of elementwise products.

    Accumulation uses numpy's fixed pairwise order over the flattened linear
    index, so a given pair of inputs always yields the same bits.
    """
    _check_same(a, b)
    return float(np.sum(a.data.ravel() * b.data.ravel()))


def conv3d(vol, kernel, bias):
    """Same-size 3D cross-correlation with zero padding and stride 1.

    ``kernel`` has shape (k, k, k, c_in, c_out) with odd ``k``; ``bias`` has
    shape (c_out,).
    """
    kernel = np.asarray(kernel, dtype=float)
    bias = np.asarray(bias, dtype=float)
    if kernel.ndim != 5 or len(set(kernel.shape[:3])) != 1 or kernel.shape[0] % 2 == 0:
        raise ShapeError(f"kernel must be (k, k, k, c_in, c_out) with odd k, got {kernel.shape}")
    k, c_in, c_out = kernel.shape[0], kernel.shape[3], kernel.shape[4]
    if c_in != vol.channels:
        raise ShapeError(f"kernel expects {c_in} input channels, volume has {vol.channels}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},), got {bias.shape}")
    r = k // 2
    padded = np.pad(vol.data, ((r, r), (r, r), (r, r), (0, 0)))
    w, h, d = vol.grid.shape
    out = np.broadcast_to(bias, (w, h, d, c_out)).copy()
    for a in range(k):
        for b in range(k):
            for c in range(k):
                tap = kernel[a, b, c]
                if not tap.any():
                    continue
                out += padded[a : a + w, b : b + h, c : c + d] @ tap
    return FeatureVolume(vol.grid, out)
