"""Camera model, viewing-sphere poses, grid layout and interpolation kernels.

Frames used throughout the package:

* world: right-handed, +Y up, scene centered on the origin.
* camera: x right, y down, z along the optical axis (pixel rows grow downward).
* grid: a cubic voxel grid whose axes (i, j, k) follow the x, y, z axes of some
  camera frame, centered at distance ``center_distance`` along that camera's z.
  Metric grid coordinates are measured from the grid center.

Angles are degrees at every public boundary and radians only internally.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import BehindCamera

# camera axes expressed in world coordinates for the pose az=0, el=0
_BASE_CAMERA_AXES = np.diag([-1.0, -1.0, 1.0])


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError(f"focal length must be positive, got {self.f}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, fov_deg=60.0, width=64, height=64):
        """Centered intrinsics with the given horizontal field of view."""
        f = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
        return cls(f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["f"]), float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class Pose:
    """Camera on the viewing sphere, looking at the world origin with zero roll."""

    azimuth_deg: float
    elevation_deg: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not -90.0 <= self.elevation_deg <= 90.0:
            raise ValueError(f"elevation out of range: {self.elevation_deg}")
        object.__setattr__(self, "azimuth_deg", float(self.azimuth_deg) % 360.0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["azimuth_deg"]), float(d["elevation_deg"]), float(d["radius"]))


@dataclass(frozen=True)
class GridSpec:
    w: int = 32
    h: int = 32
    d: int = 32
    side: float = 4.0
    center_distance: float = 4.0

    def __post_init__(self):
        if min(self.w, self.h, self.d) < 2:
            raise ValueError("grid needs at least 2 voxels per axis")
        if not self.side > 0:
            raise ValueError("grid side must be positive")

    @property
    def shape(self):
        return (self.w, self.h, self.d)

    @property
    def voxel_size(self):
        """Metric pitch along (i, j, k)."""
        return np.array([self.side / self.w, self.side / self.h, self.side / self.d])

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["w"]), int(d["h"]), int(d["d"]), float(d["side"]), float(d["center_distance"]))


def voxel_centers(grid):
    """Metric centers of all voxels relative to the grid center, shape (w, h, d, 3)."""
    axes = [
        (np.arange(n) + 0.5) * pitch - grid.side / 2.0
        for n, pitch in zip(grid.shape, grid.voxel_size)
    ]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def metric_to_index(grid, points):
    """Map metric grid coordinates to continuous voxel indices (centers are integers)."""
    points = np.asarray(points, dtype=float)
    return (points + grid.side / 2.0) / grid.voxel_size - 0.5


def index_to_metric(grid, indices):
    indices = np.asarray(indices, dtype=float)
    return (indices + 0.5) * grid.voxel_size - grid.side / 2.0


def project_point(p, intr):
    """Pinhole projection of a camera-frame point to continuous pixel coordinates."""
    x, y, z = (float(v) for v in p)
    if z <= 0:
        raise BehindCamera(f"point has non-positive depth {z}")
    return (intr.f * x / z + intr.cx, intr.f * y / z + intr.cy)


def project_points(points, intr):
    """Vectorized :func:`project_point`; rows with z <= 0 come back as NaN."""
    points = np.asarray(points, dtype=float)
    z = points[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(z > 0, z, np.nan)
        x = intr.f * points[..., 0] / safe + intr.cx
        y = intr.f * points[..., 1] / safe + intr.cy
    return x, y


def pixel_rays(intr):
    """Camera-frame ray directions with unit z for every pixel, shape (H, W, 3)."""
    xs = (np.arange(intr.width) - intr.cx) / intr.f
    ys = (np.arange(intr.height) - intr.cy) / intr.f
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.stack([gx, gy, np.ones_like(gx)], axis=-1)


def rot_x(deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def view_rotation(az_deg, el_deg):
    """Grid-frame rotation for a relative (azimuth, elevation): yaw first, then pitch.

    If a camera has relative rotation ``(az, el)`` with respect to a reference
    camera, a point with reference-frame coordinates ``p`` has coordinates
    ``view_rotation(az, el) @ p`` in that camera's frame.
    """
    return rot_x(el_deg) @ rot_y(az_deg)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation, self.rotation @ other.translation + self.translation
        )


def camera_to_world_rotation(az_deg, el_deg):
    # world yaw about +Y, then lift by elevation about the world x axis
    yaw = rot_y(az_deg)
    pitch = rot_x(el_deg)
    return yaw @ pitch @ _BASE_CAMERA_AXES


def camera_center(pose):
    return rot_y(pose.azimuth_deg) @ rot_x(pose.elevation_deg) @ np.array([0.0, 0.0, -pose.radius])


def pose_to_camera_transform(pose):
    """World-to-camera rigid transform for a viewing-sphere pose."""
    r_cw = camera_to_world_rotation(pose.azimuth_deg, pose.elevation_deg)
    r_wc = r_cw.T
    return RigidTransform(r_wc, -r_wc @ camera_center(pose))


def wrap_degrees(a):
    """Wrap an angle (or array of angles) to (-180, 180]."""
    w = np.mod(np.asarray(a, dtype=float) + 180.0, 360.0) - 180.0
    w = np.where(w == -180.0, 180.0, w)
    return float(w) if np.ndim(w) == 0 else w


def relative_rotation(pose_a, pose_b):
    """(Δazimuth, Δelevation) of ``pose_a`` relative to ``pose_b``."""
    return (
        wrap_degrees(pose_a.azimuth_deg - pose_b.azimuth_deg),
        pose_a.elevation_deg - pose_b.elevation_deg,
    )


def _corner_indices(coord, n):
    i0 = np.floor(coord)
    i0 = np.clip(i0, 0, max(n - 2, 0)).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    t = coord - i0
    return i0, i1, t


def bilinear_sample(image, x, y):
    """Bilinear interpolation of an (H, W[, C]) image at sub-pixel (x, y).

    ``x`` indexes columns and ``y`` rows; pixel centers sit on integers.
    Points outside ``[0, W-1] x [0, H-1]`` yield zero.
    """
    image = np.asarray(image, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    height, width = image.shape[:2]
    inside = (x >= 0) & (x <= width - 1) & (y >= 0) & (y <= height - 1)
    xs = np.where(inside, x, 0.0)
    ys = np.where(inside, y, 0.0)
    x0, x1, tx = _corner_indices(xs, width)
    y0, y1, ty = _corner_indices(ys, height)
    if image.ndim == 3:
        tx = tx[..., None]
        ty = ty[..., None]
        inside = inside[..., None]
    top = image[y0, x0] * (1 - tx) + image[y0, x1] * tx
    bottom = image[y1, x0] * (1 - tx) + image[y1, x1] * tx
    return np.where(inside, top * (1 - ty) + bottom * ty, 0.0)


def _active_cells(volume):
    # cell (i, j, k) spans voxels i..i+1, j..j+1, k..k+1; True if any corner is nonzero
    nz = volume != 0
    if nz.ndim == 4:
        nz = nz.any(axis=3)
    w, h, d = nz.shape
    pad = np.zeros((w + 1, h + 1, d + 1), dtype=bool)
    pad[:w, :h, :d] = nz
    act = np.zeros_like(pad)
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                act[: w + 1 - a, : h + 1 - b, : d + 1 - c] |= pad[a:, b:, c:]
    return act[:w, :h, :d]


def trilinear_sample(volume, X, Y, Z, skip_empty=False):
    """Trilinear interpolation of a (w, h, d[, c]) volume at sub-voxel (X, Y, Z).

    Coordinates index axes 0, 1, 2 with voxel centers on integers; anything
    outside the voxel-center hull yields zero. ``skip_empty`` avoids work on
    samples whose eight neighbours are all zero (same result, faster on
    sparse volumes).
    """
    volume = np.asarray(volume, dtype=float)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    X, Y, Z = np.broadcast_arrays(X, Y, Z)
    w, h, d = volume.shape[:3]
    inside = (X >= 0) & (X <= w - 1) & (Y >= 0) & (Y <= h - 1) & (Z >= 0) & (Z <= d - 1)
    out_shape = X.shape + volume.shape[3:]
    if skip_empty:
        act = _active_cells(volume)
        cells = (
            np.clip(np.floor(np.where(inside, X, 0)), 0, w - 2).astype(np.intp),
            np.clip(np.floor(np.where(inside, Y, 0)), 0, h - 2).astype(np.intp),
            np.clip(np.floor(np.where(inside, Z, 0)), 0, d - 2).astype(np.intp),
        )
        inside = inside & act[cells]
    sel = np.flatnonzero(inside)
    out = np.zeros((X.size,) + volume.shape[3:])
    if sel.size:
        flat = volume.reshape((w * h * d,) + volume.shape[3:])
        out[sel] = _trilinear_flat(flat, (w, h, d), X.ravel()[sel], Y.ravel()[sel], Z.ravel()[sel])
    return out.reshape(out_shape)


def _trilinear_flat(flat, shape, X, Y, Z):
    # X, Y, Z already known to be in range
    w, h, d = shape
    i0, i1, tx = _corner_indices(X, w)
    j0, j1, ty = _corner_indices(Y, h)
    k0, k1, tz = _corner_indices(Z, d)
    if flat.ndim == 2:
        tx, ty, tz = tx[:, None], ty[:, None], tz[:, None]
    a0 = i0 * (h * d)
    a1 = i1 * (h * d)
    b0 = j0 * d
    b1 = j1 * d
    c00 = flat[a0 + b0 + k0] * (1 - tz) + flat[a0 + b0 + k1] * tz
    c01 = flat[a0 + b1 + k0] * (1 - tz) + flat[a0 + b1 + k1] * tz
    c10 = flat[a1 + b0 + k0] * (1 - tz) + flat[a1 + b0 + k1] * tz
    c11 = flat[a1 + b1 + k0] * (1 - tz) + flat[a1 + b1 + k1] * tz
    c0 = c00 * (1 - ty) + c01 * ty
    c1 = c10 * (1 - ty) + c11 * ty
    return c0 * (1 - tx) + c1 * tx
