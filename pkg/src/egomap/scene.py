"""Synthetic scenes: generation, analytic ray casting and voxelization.

Scenes are made of axis-aligned boxes, spheres and Shepard-Metzler style
chains of face-adjacent cubes. Everything here is exact geometry, so the
rest of the package can be checked against it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import PlacementError
from .geometry import (
    camera_center,
    camera_to_world_rotation,
    pixel_rays,
    voxel_centers,
)
from .volume import OccupancyGrid

SHAPES = ("box", "sphere", "cube_chain")
_CHAIN_STEPS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=int
)


@dataclass(frozen=True)
class Primitive:
    shape: str
    center: tuple
    color: tuple
    instance_id: int
    size: tuple = None  # box dims (w, h, d)
    radius: float = None  # sphere radius
    cube_size: float = None  # chain cube side
    cells: tuple = None  # chain lattice offsets, relative to center
    cell_colors: tuple = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")

    def parts(self):
        """Decompose into ('box', lo, hi, color) / ('sphere', center, radius, color) parts."""
        c = np.asarray(self.center, dtype=float)
        if self.shape == "box":
            half = np.asarray(self.size, dtype=float) / 2
            return [("box", c - half, c + half, np.asarray(self.color, dtype=float))]
        if self.shape == "sphere":
            return [("sphere", c, float(self.radius), np.asarray(self.color, dtype=float))]
        s = float(self.cube_size)
        out = []
        for cell, color in zip(self.cells, self.cell_colors):
            cc = c + np.asarray(cell, dtype=float) * s
            out.append(("box", cc - s / 2, cc + s / 2, np.asarray(color, dtype=float)))
        return out

    def bounds(self, rotation=None):
        """Tight axis-aligned (lo, hi), optionally of the primitive rotated by ``rotation``."""
        rot = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for kind, a, b, _ in self.parts():
            if kind == "box":
                corners = np.array([[x, y, z] for x in (a[0], b[0]) for y in (a[1], b[1]) for z in (a[2], b[2])])
                pts = corners @ rot.T
                lo, hi = np.minimum(lo, pts.min(axis=0)), np.maximum(hi, pts.max(axis=0))
            else:
                c = rot @ a
                lo, hi = np.minimum(lo, c - b), np.maximum(hi, c + b)
        return lo, hi

    def to_dict(self):
        d = {
            "shape": self.shape,
            "center": [float(v) for v in self.center],
            "color": [float(v) for v in self.color],
            "id": int(self.instance_id),
        }
        if self.shape == "box":
            d["size"] = [float(v) for v in self.size]
        elif self.shape == "sphere":
            d["radius"] = float(self.radius)
        else:
            d["size"] = float(self.cube_size)
            d["cells"] = [[int(v) for v in cell] for cell in self.cells]
            d["colors"] = [[float(v) for v in col] for col in self.cell_colors]
        return d

    @classmethod
    def from_dict(cls, d):
        shape = d["shape"]
        common = dict(
            shape=shape,
            center=tuple(float(v) for v in d["center"]),
            color=tuple(float(v) for v in d["color"]),
            instance_id=int(d["id"]),
        )
        if shape == "box":
            return cls(size=tuple(float(v) for v in d["size"]), **common)
        if shape == "sphere":
            return cls(radius=float(d["radius"]), **common)
        return cls(
            cube_size=float(d["size"]),
            cells=tuple(tuple(int(v) for v in c) for c in d["cells"]),
            cell_colors=tuple(tuple(float(v) for v in c) for c in d["colors"]),
            **common,
        )


@dataclass(frozen=True)
class Scene:
    objects: tuple = field(default_factory=tuple)
    seed: int = 0
    table_height: float = None

    def __post_init__(self):
        ids = [o.instance_id for o in self.objects]
        if len(ids) != len(set(ids)):
            raise ValueError(f"instance ids must be unique, got {ids}")

    def subset(self, ids):
        keep = set(ids)
        return Scene(tuple(o for o in self.objects if o.instance_id in keep), self.seed, self.table_height)

    def union(self, other):
        return Scene(tuple(self.objects) + tuple(other.objects), self.seed, self.table_height)

    def to_dict(self):
        return {
            "seed": int(self.seed),
            "table_height": self.table_height,
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d):
        th = d.get("table_height")
        return cls(
            tuple(Primitive.from_dict(o) for o in d["objects"]),
            int(d.get("seed", 0)),
            None if th is None else float(th),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# arrangement primitive sizes, world units
BOX_SIDE_RANGE = (0.6, 1.0)
SPHERE_RADIUS_RANGE = (0.45, 0.6)


def _footprint_radius(prim):
    """Largest horizontal distance of the primitive from the vertical axis."""
    out = 0.0
    for kind, a, b, _ in prim.parts():
        if kind == "box":
            xs, zs = np.meshgrid([a[0], b[0]], [a[2], b[2]])
            out = max(out, float(np.hypot(xs, zs).max()))
        else:
            out = max(out, float(np.hypot(a[0], a[2]) + b))
    return out


def _boxes_apart(lo_a, hi_a, lo_b, hi_b, gap):
    return bool(np.any(lo_a > hi_b + gap) or np.any(lo_b > hi_a + gap))


def _random_primitive(rng, instance_id, table_height, placement_radius):
    color = tuple(float(v) for v in rng.uniform(0.3, 1.0, size=3))
    r = placement_radius * np.sqrt(rng.uniform())
    phi = rng.uniform(0.0, 2 * np.pi)
    x, z = r * np.cos(phi), r * np.sin(phi)
    if rng.uniform() < 0.5:
        size = rng.uniform(*BOX_SIDE_RANGE, size=3)
        center = (float(x), float(table_height + size[1] / 2), float(z))
        return Primitive("box", center, color, instance_id, size=tuple(float(v) for v in size))
    radius = float(rng.uniform(*SPHERE_RADIUS_RANGE))
    return Primitive("sphere", (float(x), float(table_height + radius), float(z)), color, instance_id, radius=radius)


def _chain_cells(rng, n_cubes=7):
    while True:
        cells = [(0, 0, 0)]
        while len(cells) < n_cubes:
            last = np.array(cells[-1])
            options = [tuple(last + s) for s in _CHAIN_STEPS if tuple(last + s) not in cells]
            if not options:
                break
            cells.append(options[rng.integers(len(options))])
        if len(cells) == n_cubes:
            arr = np.array(cells, dtype=float)
            mid = (arr.min(axis=0) + arr.max(axis=0)) / 2
            # keep integer lattice offsets: shift by the rounded midpoint, the rest goes to the center
            shift = np.floor(mid).astype(int)
            return [tuple(int(v) for v in np.array(c) - shift) for c in cells], mid - shift


def generate_scene(
    seed,
    n_objects=2,
    style="arrangement",
    table_height=-1.0,
    placement_radius=1.4,
    min_gap=0.5,
    cube_size=0.35,
    max_radius=2.0,
):
    """Build a deterministic random scene.

    ``arrangement`` places ``n_objects`` boxes/spheres resting on the table
    plane with at least ``min_gap`` between their bounding boxes, each
    within ``max_radius`` of the vertical axis so that it stays inside a
    side-4 grid at every yaw.
    ``shepard_metzler`` builds one self-avoiding chain of seven cubes
    centered on the origin (``n_objects`` is ignored).
    """
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    root = np.random.SeedSequence(seed)
    if style == "shepard_metzler":
        rng = np.random.default_rng(root)
        cells, frac = _chain_cells(rng)
        colors = [tuple(float(v) for v in rng.uniform(0.3, 1.0, size=3)) for _ in cells]
        center = tuple(float(v) for v in -frac * cube_size)
        chain = Primitive(
            "cube_chain", center, colors[0], 0, cube_size=cube_size, cells=tuple(cells), cell_colors=tuple(colors)
        )
        return Scene((chain,), seed, None)
    if style != "arrangement":
        raise ValueError(f"unknown scene style {style!r}")
    placed = []
    for i, child in enumerate(root.spawn(n_objects)):
        rng = np.random.default_rng(child)
        for _ in range(1000):
            cand = _random_primitive(rng, i, table_height, placement_radius)
            lo, hi = cand.bounds()
            if _footprint_radius(cand) > max_radius:
                continue
            if all(_boxes_apart(lo, hi, *p.bounds(), min_gap) for p in placed):
                placed.append(cand)
                break
        else:
            raise PlacementError(f"could not place object {i} after 1000 tries (seed {seed})")
    return Scene(tuple(placed), seed, table_height)


def cast_rays(scene, origins, directions):
    """Nearest analytic hit along each ray ``origin + t * direction``, t > 0.

    Returns ``(t, normal, color, instance_id)``; misses have ``t = inf``,
    zero normal/color and id -1.
    """
    origins = np.broadcast_to(np.asarray(origins, dtype=float), np.shape(directions))
    dirs = np.asarray(directions, dtype=float)
    shape = dirs.shape[:-1]
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)
    n = d.shape[0]
    best_t = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    color = np.zeros((n, 3))
    ids = np.full(n, -1, dtype=int)
    for obj in scene.objects:
        for kind, a, b, col in obj.parts():
            if kind == "box":
                t, nrm = _ray_box(o, d, a, b)
            else:
                t, nrm = _ray_sphere(o, d, a, b)
            closer = t < best_t
            best_t[closer] = t[closer]
            normal[closer] = nrm[closer]
            color[closer] = col
            ids[closer] = obj.instance_id
    return (
        best_t.reshape(shape),
        normal.reshape(shape + (3,)),
        color.reshape(shape + (3,)),
        ids.reshape(shape),
    )


def _ray_box(o, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
    near = tmin.max(axis=1)
    far = tmax.min(axis=1)
    hit = (near <= far) & (near > 0)
    t = np.where(hit, near, np.inf)
    axis = tmin.argmax(axis=1)
    nrm = np.zeros_like(d)
    rows = np.arange(d.shape[0])
    nrm[rows, axis] = -np.sign(d[rows, axis])
    return t, nrm


def _ray_sphere(o, d, c, r):
    oc = o - c
    a = np.einsum("ij,ij->i", d, d)
    b = 2.0 * np.einsum("ij,ij->i", oc, d)
    cc = np.einsum("ij,ij->i", oc, oc) - r * r
    disc = b * b - 4 * a * cc
    root = np.sqrt(np.maximum(disc, 0.0))
    t = (-b - root) / (2 * a)
    t = np.where((disc >= 0) & (t > 0), t, np.inf)
    with np.errstate(invalid="ignore"):
        nrm = (o + t[:, None] * d - c) / r
    nrm = np.where(np.isfinite(t)[:, None], nrm, 0.0)
    return t, nrm


def _camera_rays(pose, intr):
    dirs_cam = pixel_rays(intr)
    dirs = dirs_cam @ camera_to_world_rotation(pose.azimuth_deg, pose.elevation_deg).T
    return camera_center(pose), dirs


def render(scene, pose, intr):
    """Ray-cast RGB (H, W, 3), camera-z depth (H, W) and instance ids (H, W)."""
    origin, dirs = _camera_rays(pose, intr)
    # direction has unit camera z, so the ray parameter is the camera-frame depth
    t, nrm, col, ids = cast_rays(scene, origin, dirs)
    unit = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    shade = np.abs(np.einsum("hwc,hwc->hw", nrm, unit))
    rgb = col * shade[..., None]
    return rgb, t, ids


def render_depth(scene, pose, intr):
    return render(scene, pose, intr)[1]


def render_rgb(scene, pose, intr):
    return render(scene, pose, intr)[0]


def _inside(prim, pts):
    mask = np.zeros(pts.shape[0], dtype=bool)
    for kind, a, b, _ in prim.parts():
        if kind == "box":
            mask |= np.all((pts >= a) & (pts <= b), axis=1)
        else:
            mask |= np.sum((pts - a) ** 2, axis=1) <= b * b
    return mask


def grid_world_points(grid, azimuth_deg=0.0):
    """World coordinates of the voxel centers of a level memory grid.

    The memory grid is the camera-aligned grid of a camera at
    ``(azimuth_deg, elevation 0)``, centered on the world origin.
    """
    centers = voxel_centers(grid).reshape(-1, 3)
    return centers @ camera_to_world_rotation(azimuth_deg, 0.0).T


def voxelize(scene, grid, azimuth_deg=0.0):
    """Occupancy and instance labels of voxel centers inside any primitive.

    Returns ``(OccupancyGrid, labels)`` with labels -1 for empty voxels;
    overlapping primitives resolve to the lowest instance id.
    """
    pts = grid_world_points(grid, azimuth_deg)
    labels = np.full(pts.shape[0], -1, dtype=int)
    for obj in sorted(scene.objects, key=lambda o: o.instance_id, reverse=True):
        labels[_inside(obj, pts)] = obj.instance_id
    labels = labels.reshape(grid.shape)
    return OccupancyGrid(grid, (labels >= 0).astype(np.uint8)), labels


def ground_truth_boxes(scene, per_cube=False, rotation=None):
    """Tight boxes per object (score 1, instance id attached).

    Boxes are world-frame unless ``rotation`` maps world coordinates into
    another frame. With ``per_cube`` a cube chain contributes one box per
    cube instead of its union bound.
    """
    from .detection import Box3D

    out = []
    for obj in scene.objects:
        if per_cube and obj.shape == "cube_chain":
            for part in obj.parts():
                single = Primitive("box", tuple((part[1] + part[2]) / 2), obj.color, obj.instance_id, size=tuple(part[2] - part[1]))
                out.append(Box3D.from_bounds(*single.bounds(rotation), 1.0, obj.instance_id))
        else:
            out.append(Box3D.from_bounds(*obj.bounds(rotation), 1.0, obj.instance_id))
    return out
