"""Axis-aligned 3D boxes: anchor encoding, NMS, proposals from occupancy, masks, mAP.

Box coordinates are metric coordinates of the memory grid (origin at the grid
center, axes along the grid's i, j, k).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull

from .errors import BoxError
from .geometry import camera_to_world_rotation, index_to_metric, metric_to_index

ANCHOR_CHANNELS = 7
DEFAULT_NMS_IOU = 0.35
DEFAULT_MATCH_IOU = 0.5
_CONNECTIVITY_26 = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class Box3D:
    center: tuple
    dims: tuple
    score: float = 1.0
    instance_id: int = None

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        d = tuple(float(v) for v in self.dims)
        if len(c) != 3 or len(d) != 3:
            raise BoxError("boxes need 3 center and 3 dimension values")
        if not all(v > 0 for v in d):
            raise BoxError(f"box dimensions must be positive, got {d}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "dims", d)
        object.__setattr__(self, "score", float(self.score))

    @property
    def lo(self):
        return np.asarray(self.center) - np.asarray(self.dims) / 2

    @property
    def hi(self):
        return np.asarray(self.center) + np.asarray(self.dims) / 2

    @property
    def volume(self):
        return float(np.prod(self.dims))

    @classmethod
    def from_bounds(cls, lo, hi, score=1.0, instance_id=None):
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        return cls(tuple((lo + hi) / 2), tuple(hi - lo), score, instance_id)


@dataclass(frozen=True, eq=False)
class Detection:
    box: Box3D
    mask: np.ndarray = None  # full-grid boolean mask, or None

    @property
    def score(self):
        return self.box.score


@dataclass(frozen=True, eq=False)
class AnchorMap:
    """(w, h, d, 7) tensor: objectness, then (dx, dy, dz, dlog w, dlog h, dlog d)."""

    data: np.ndarray
    anchor_size: float = 1.0

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[3] != ANCHOR_CHANNELS:
            raise ValueError(f"anchor map must be (w, h, d, 7), got {self.data.shape}")
        obj = self.data[..., 0]
        if np.any(obj < 0) or np.any(obj > 1):
            raise ValueError("objectness must lie in [0, 1]")


def anchor_box(grid, cell, anchor_size=1.0):
    """Cube anchor of side ``anchor_size`` centered on a voxel cell."""
    return Box3D(tuple(index_to_metric(grid, cell)), (anchor_size,) * 3)


def encode_box(gt, anchor):
    """Center offsets over the anchor diagonal, then log dimension ratios."""
    if min(gt.dims) <= 0 or min(anchor.dims) <= 0:
        raise BoxError("box dimensions must be positive")
    diag = math.sqrt(sum(v * v for v in anchor.dims))
    dc = (np.asarray(gt.center) - np.asarray(anchor.center)) / diag
    dd = np.log(np.asarray(gt.dims) / np.asarray(anchor.dims))
    return np.concatenate([dc, dd])


def decode_box(anchor, deltas, score=1.0, instance_id=None):
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape != (6,):
        raise BoxError(f"expected 6 deltas, got shape {deltas.shape}")
    diag = math.sqrt(sum(v * v for v in anchor.dims))
    center = np.asarray(anchor.center) + deltas[:3] * diag
    dims = np.asarray(anchor.dims) * np.exp(deltas[3:])
    return Box3D(tuple(center), tuple(dims), score, instance_id)


def iou3d(a, b):
    overlap = np.clip(np.minimum(a.hi, b.hi) - np.maximum(a.lo, b.lo), 0.0, None)
    inter = float(np.prod(overlap))
    if inter == 0.0:
        return 0.0
    return inter / (a.volume + b.volume - inter)


def nms(boxes, iou_threshold=DEFAULT_NMS_IOU):
    """Greedy suppression; ties in score keep the earlier input first."""
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept = []
    for i in order:
        if all(iou3d(boxes[i], boxes[j]) < iou_threshold for j in kept):
            kept.append(i)
    return [boxes[i] for i in kept]


def box_voxel_range(box, grid):
    """Index ranges (start, stop) per axis of voxels whose centers lie in ``box``."""
    lo = np.ceil(metric_to_index(grid, box.lo) - 1e-9).astype(int)
    hi = np.floor(metric_to_index(grid, box.hi) + 1e-9).astype(int)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.array(grid.shape) - 1)
    return [(int(a), int(max(b + 1, a))) for a, b in zip(lo, hi)]


def _fit_box(grid, idx_lo, idx_hi, score=1.0):
    """Box spanned by the extreme voxel centers; a flat axis gets one voxel pitch."""
    lo = index_to_metric(grid, idx_lo)
    hi = index_to_metric(grid, idx_hi)
    flat = hi - lo < 1e-9
    pad = np.where(flat, grid.voxel_size / 2, 0.0)
    return Box3D.from_bounds(lo - pad, hi + pad, score)


def shift_faces(box, grid, face_shift):
    """Move each face of ``box`` by ``face_shift`` voxel pitches along +axis.

    ``face_shift`` is (lo_x, lo_y, lo_z, hi_x, hi_y, hi_z). Faces never cross:
    every side keeps at least one voxel pitch.
    """
    shift = np.asarray(face_shift, dtype=float) * np.tile(grid.voxel_size, 2)
    lo = box.lo + shift[:3]
    hi = np.maximum(box.hi + shift[3:], lo + grid.voxel_size)
    return Box3D.from_bounds(lo, hi, box.score, box.instance_id)


def propose_from_occupancy(m, theta=0.1, min_voxels=8, anchor_size=1.0, face_shift=None):
    """Boxes around 26-connected components of the thresholded occupancy.

    Each component with at least ``min_voxels`` voxels yields the tight box of
    its voxel centers (the depth shells straddle the true surface, so center
    extents are the unbiased estimate), scored by its occupancy mass relative to the heaviest
    component. The anchor map carries objectness 1 at each component's
    mass-centroid cell and the deltas from that cell's anchor to the box; the
    returned boxes are exactly those deltas decoded. A ``face_shift`` (see
    :func:`shift_faces`) adjusts each fitted box before encoding.
    """
    grid = m.grid
    occ = m.occupancy
    labels, n = ndimage.label(occ >= theta, structure=_CONNECTIVITY_26)
    amap = np.zeros(grid.shape + (ANCHOR_CHANNELS,))
    comps = []
    for lab in range(1, n + 1):
        idx = np.argwhere(labels == lab)
        if len(idx) < min_voxels:
            continue
        weights = occ[tuple(idx.T)]
        mass = float(weights.sum())
        centroid = (idx * weights[:, None]).sum(axis=0) / mass
        cell = tuple(int(v) for v in np.clip(np.rint(centroid), 0, np.array(grid.shape) - 1))
        fitted = _fit_box(grid, idx.min(axis=0), idx.max(axis=0))
        if face_shift is not None:
            fitted = shift_faces(fitted, grid, face_shift)
        comps.append((mass, lab, cell, fitted))
    if not comps:
        return AnchorMap(amap, anchor_size), []
    top = max(c[0] for c in comps)
    boxes = []
    taken = set()
    for mass, _, cell, fitted in sorted(comps, key=lambda c: (-c[0], c[1])):
        if cell in taken:
            continue
        taken.add(cell)
        anchor = anchor_box(grid, cell, anchor_size)
        deltas = encode_box(fitted, anchor)
        amap[cell] = np.concatenate([[1.0], deltas])
        boxes.append(decode_box(anchor, deltas, score=mass / top))
    return AnchorMap(amap, anchor_size), boxes


def decode_anchor_map(amap, grid, threshold=0.5):
    """Boxes for every cell whose objectness reaches ``threshold`` (score = objectness)."""
    out = []
    for cell in np.argwhere(amap.data[..., 0] >= threshold):
        cell = tuple(int(v) for v in cell)
        vals = amap.data[cell]
        out.append(decode_box(anchor_box(grid, cell, amap.anchor_size), vals[1:], score=vals[0]))
    return out


_CORNERS = np.array([[a, b, c] for a in (-0.5, 0.5) for b in (-0.5, 0.5) for c in (-0.5, 0.5)])


def _hull_fill(seed):
    """Voxels whose centers lie in the convex hull of the ``seed`` cells (index space)."""
    idx = np.argwhere(seed)
    if len(idx) == 0:
        return seed.copy()
    corners = np.unique((idx[:, None, :] + _CORNERS[None]).reshape(-1, 3), axis=0)
    lo, hi = idx.min(axis=0), idx.max(axis=0) + 1
    cand = np.argwhere(np.ones(tuple(hi - lo), dtype=bool)) + lo
    eq = ConvexHull(corners).equations
    inside = np.all(cand @ eq[:, :3].T + eq[:, 3] <= 1e-9, axis=1)
    out = np.zeros_like(seed)
    out[tuple(cand[inside].T)] = True
    return out


def roi_mask(m, box, theta=0.1, fill=True, margin=0):
    """Full-grid boolean mask of the object inside ``box``.

    The seed is every voxel in the box, grown by ``margin`` voxels per side,
    with occupancy >= ``theta``. Depth shells only ever record surfaces, so
    with ``fill`` the seed is closed to the voxels inside the convex hull of
    its cells. Both forms grow monotonically with the box.
    """
    if margin:
        pad = 2 * margin * m.grid.voxel_size
        box = Box3D(box.center, tuple(np.asarray(box.dims) + pad), box.score, box.instance_id)
    mask = np.zeros(m.grid.shape, dtype=bool)
    (i0, i1), (j0, j1), (k0, k1) = box_voxel_range(box, m.grid)
    mask[i0:i1, j0:j1, k0:k1] = m.occupancy[i0:i1, j0:j1, k0:k1] >= theta
    return _hull_fill(mask) if fill else mask


def detect(
    m, theta=0.1, min_voxels=8, nms_iou=DEFAULT_NMS_IOU, anchor_size=1.0, fill=True, face_shift=None, mask_margin=1
):
    """Proposals, NMS and ROI masks in one call."""
    _, boxes = propose_from_occupancy(m, theta, min_voxels, anchor_size, face_shift)
    return [Detection(b, roi_mask(m, b, theta, fill, mask_margin)) for b in nms(boxes, nms_iou)]


def mask_iou(a, b):
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


def average_precision(scores_tp, n_gt):
    """All-point interpolated AP from (score, is_tp) pairs already in rank order."""
    if n_gt == 0:
        return 1.0 if not scores_tp else 0.0
    if not scores_tp:
        return 0.0
    tp = np.array([t for _, t in scores_tp], dtype=float)
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def match_detections(predictions, ground_truth, iou_threshold=DEFAULT_MATCH_IOU, mode="box"):
    """Rank predictions across scenes and flag true positives.

    ``predictions`` and ``ground_truth`` map scene ids to lists of
    :class:`Detection`. Predictions are ranked by descending score (ties by
    scene order, then list order); each is a true positive when its best IoU
    among the still unmatched ground truth of its scene reaches
    ``iou_threshold``. Returns ``([(score, is_tp), ...], n_gt)``.
    """
    if mode not in ("box", "mask"):
        raise ValueError(f"unknown mode {mode!r}")
    ranked = []
    for order, (sid, dets) in enumerate(predictions.items()):
        for i, det in enumerate(dets):
            ranked.append((-det.score, order, i, sid, det))
    ranked.sort(key=lambda r: r[:3])
    matched = {sid: np.zeros(len(g), dtype=bool) for sid, g in ground_truth.items()}
    n_gt = sum(len(g) for g in ground_truth.values())
    results = []
    for neg_score, _, _, sid, det in ranked:
        gts = ground_truth.get(sid, [])
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if matched[sid][j]:
                continue
            iou = iou3d(det.box, g.box) if mode == "box" else mask_iou(det.mask, g.mask)
            if iou > best:
                best, best_j = iou, j
        tp = best_j >= 0 and best >= iou_threshold
        if tp:
            matched[sid][best_j] = True
        results.append((-neg_score, tp))
    return results, n_gt


def evaluate_map(predictions, ground_truth, iou_threshold=DEFAULT_MATCH_IOU, mode="box"):
    """Class-agnostic mAP over scenes (see :func:`match_detections`)."""
    return average_precision(*match_detections(predictions, ground_truth, iou_threshold, mode))


def precision_recall_curve(predictions, ground_truth, iou_threshold=DEFAULT_MATCH_IOU, mode="box"):
    """(recall, precision) after each ranked prediction."""
    results, n_gt = match_detections(predictions, ground_truth, iou_threshold, mode)
    tp = np.cumsum([t for _, t in results], dtype=float)
    precision = tp / np.arange(1, len(results) + 1)
    recall = tp / n_gt if n_gt else np.zeros_like(tp)
    return recall, precision


def boxes_in_memory_frame(boxes, memory_azimuth_deg=0.0):
    """Express world-frame boxes in the memory frame (tight bound of the rotated box)."""
    rot = camera_to_world_rotation(memory_azimuth_deg, 0.0).T
    out = []
    for b in boxes:
        center = rot @ np.asarray(b.center)
        dims = np.abs(rot) @ np.asarray(b.dims)
        out.append(Box3D(tuple(center), tuple(dims), b.score, b.instance_id))
    return out


def ground_truth_detections(scene, grid, memory_azimuth_deg=0.0, per_cube=False):
    """Ground-truth boxes and voxel masks of a scene, in the memory frame."""
    from .scene import ground_truth_boxes, voxelize

    _, labels = voxelize(scene, grid, memory_azimuth_deg)
    rot = camera_to_world_rotation(memory_azimuth_deg, 0.0).T
    boxes = ground_truth_boxes(scene, per_cube=per_cube, rotation=rot)
    out = []
    for b in boxes:
        mask = labels == b.instance_id
        if per_cube:
            inside = np.zeros_like(mask)
            inside[tuple(slice(a, z) for a, z in box_voxel_range(b, grid))] = True
            mask &= inside
        out.append(Detection(b, mask))
    return out


# -- JSON (de)serialization ----------------------------------------------------


def encode_rle(flat):
    """Run lengths of a flat boolean array, starting with a run of zeros."""
    flat = np.asarray(flat, dtype=bool)
    if flat.size == 0:
        return []
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def decode_rle(runs, size):
    out = np.zeros(size, dtype=bool)
    pos = 0
    val = False
    for r in runs:
        if val:
            out[pos : pos + r] = True
        pos += r
        val = not val
    if pos != size:
        raise ValueError(f"RLE covers {pos} values, expected {size}")
    return out


def detection_to_dict(det, grid):
    b = det.box
    d = {"center": list(b.center), "dims": list(b.dims), "score": b.score}
    if b.instance_id is not None:
        d["instance_id"] = int(b.instance_id)
    if det.mask is not None:
        # crop to the mask's own extent; ROI masks may reach past their box
        idx = np.argwhere(det.mask)
        lo = idx.min(axis=0) if len(idx) else np.zeros(3, dtype=int)
        hi = idx.max(axis=0) + 1 if len(idx) else np.zeros(3, dtype=int)
        sub = det.mask[tuple(slice(a, z) for a, z in zip(lo, hi))]
        d["mask_origin"] = [int(a) for a in lo]
        d["mask_shape"] = list(sub.shape)
        d["mask_rle"] = encode_rle(sub.ravel())
    return d


def detection_from_dict(d, grid):
    iid = d.get("instance_id")
    box = Box3D(d["center"], d["dims"], d.get("score", 1.0), None if iid is None else int(iid))
    mask = None
    if "mask_rle" in d:
        origin = d.get("mask_origin")
        shape = d.get("mask_shape")
        if origin is None or shape is None:
            ranges = box_voxel_range(box, grid)
            origin = [a for a, _ in ranges]
            shape = [z - a for a, z in ranges]
        sub = decode_rle(d["mask_rle"], int(np.prod(shape))).reshape(shape)
        mask = np.zeros(grid.shape, dtype=bool)
        sl = tuple(slice(o, o + s) for o, s in zip(origin, shape))
        mask[sl] = sub
    return Detection(box, mask)


def detections_to_json(per_scene, grid):
    """``{scene_id: [detection, ...]}`` as a JSON-ready dict."""
    return {str(sid): [detection_to_dict(d, grid) for d in dets] for sid, dets in per_scene.items()}


def detections_from_json(obj, grid):
    return {str(sid): [detection_from_dict(d, grid) for d in dets] for sid, dets in obj.items()}
