"""Seeded evaluation protocols on the synthetic simulator.

Every protocol is a pure function of its seeds and settings. The results are
plain dicts, so the CLI can print them as JSON and the acceptance tests can
assert on them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import PlacementError
from .detection import detect, evaluate_map, ground_truth_detections, iou3d
from .egomotion import angular_errors, estimate_egomotion, score_rotations
from .geometry import CameraIntrinsics, GridSpec, Pose, relative_rotation
from .memory import Frame, MapConfig, integrate_views, reference_pose
from .projection import predict_view
from .scene import Primitive, Scene, generate_scene, render
from .unprojection import unproject_frame
from .volume import OCC_CHANNEL, add_volumes, sub_volumes

ELEVATIONS = (20.0, 40.0, 60.0)
AZIMUTH_STEP = 20.0
N_AZIMUTHS = 18
DETECTION_THETA = 0.1
VIEW_THETA = 0.1
ARITH_THETA = 0.1
# Mean face placement error of raw proposals on 18-view rings, in voxel
# pitches, negated: what calibrate_face_shift(CALIBRATION_SEEDS) returns.
CALIBRATION_SEEDS = range(5000, 5064)
CALIBRATED_FACE_SHIFT = (0.1, 0.4, 0.04, -0.02, 1.55, -0.09)


@dataclass(frozen=True)
class Setup:
    """Camera, grid and viewing radius shared by a protocol."""

    intr: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics.from_fov(60.0, 64, 64))
    grid: GridSpec = field(default_factory=GridSpec)

    @property
    def radius(self):
        return self.grid.center_distance

    def pose(self, az, el):
        return Pose(float(az), float(el), self.radius)


def render_frames(scene, poses, intr):
    frames = []
    for p in poses:
        rgb, depth, _ = render(scene, p, intr)
        frames.append(Frame(rgb, depth, p))
    return frames


def _protocol_rng(seed, tag):
    return np.random.default_rng([int(seed), tag])


# -- egomotion ----------------------------------------------------------------------


def trajectory_poses(rng, setup, n_views=4, steps=(-40.0, -20.0, 20.0, 40.0)):
    """A camera walk on the protocol sphere: each view yaws by a small step from the last."""
    az = AZIMUTH_STEP * rng.integers(N_AZIMUTHS)
    poses = [setup.pose(az, rng.choice(ELEVATIONS))]
    for _ in range(n_views - 1):
        az = (az + rng.choice(steps)) % 360.0
        poses.append(setup.pose(az, rng.choice(ELEVATIONS)))
    return poses


def egomotion_trial(seed, setup=None, n_views=4, config=None):
    """Map one scene with estimated egomotion and score every estimate.

    Also estimates the last view twice more, against the memory of the first
    view alone and against the memory of all earlier views, to measure what
    the extra integrated views buy.
    """
    setup = setup or Setup()
    config = config or MapConfig()
    rng = _protocol_rng(seed, 1)
    scene = generate_scene(seed)
    poses = trajectory_poses(rng, setup, n_views)
    frames = render_frames(scene, poses, setup.intr)
    log = []
    integrate_views(frames[:-1], setup.intr, setup.grid, egomotion="estimated", config=config, log=log)
    ref = reference_pose(poses[0])
    truth_last = relative_rotation(poses[-1], ref)
    v_last = unproject_frame(frames[-1].image, frames[-1].depth, setup.intr, setup.grid)

    def estimate_last(n_prior):
        mem = integrate_views(frames[:n_prior], setup.intr, setup.grid, egomotion="estimated", config=config)
        dist = score_rotations(v_last, mem, config.rotation_stack, config.temperature)
        return estimate_egomotion(dist, argmax=config.argmax)

    est_one = estimate_last(1)
    est_all = estimate_last(n_views - 1)
    errors = [angular_errors(rec["estimated"], rec["given"]) for rec in log[1:]]
    errors.append(angular_errors(est_all, truth_last))
    return {
        "seed": int(seed),
        "poses": [[p.azimuth_deg, p.elevation_deg] for p in poses],
        "errors": [[float(a), float(e)] for a, e in errors],
        "last_error_one_view": float(angular_errors(est_one, truth_last)[0]),
        "last_error_all_views": float(angular_errors(est_all, truth_last)[0]),
    }


def egomotion_recovery(seeds, setup=None, n_views=4, tolerance_deg=10.0, config=None):
    t0 = time.perf_counter()
    trials = [egomotion_trial(s, setup, n_views, config) for s in seeds]
    errs = np.array([e for t in trials for e in t["errors"]])
    ok = (errs[:, 0] <= tolerance_deg) & (errs[:, 1] <= tolerance_deg)
    return {
        "scenes": len(trials),
        "frames": int(len(errs)),
        "fraction_within": float(ok.mean()),
        "mean_azimuth_error": float(errs[:, 0].mean()),
        "mean_elevation_error": float(errs[:, 1].mean()),
        "mean_error_one_view": float(np.mean([t["last_error_one_view"] for t in trials])),
        "mean_error_integrated": float(np.mean([t["last_error_all_views"] for t in trials])),
        "seconds": time.perf_counter() - t0,
        "trials": trials,
    }


# -- detection ---------------------------------------------------------------------


def ring_poses(rng, setup, elevations=ELEVATIONS):
    """All protocol azimuths once, starting on a grid-aligned heading, elevations drawn per view."""
    az0 = 90.0 * rng.integers(4)
    return [setup.pose((az0 + AZIMUTH_STEP * i) % 360.0, rng.choice(elevations)) for i in range(N_AZIMUTHS)]


def detection_scene(seed, setup=None, theta=DETECTION_THETA, face_shift=CALIBRATED_FACE_SHIFT):
    """(predictions, ground truth) of one scene mapped with known egomotion and depth."""
    setup = setup or Setup()
    rng = _protocol_rng(seed, 2)
    scene = generate_scene(seed)
    poses = ring_poses(rng, setup)
    mem = integrate_views(render_frames(scene, poses, setup.intr), setup.intr, setup.grid)
    gt = ground_truth_detections(scene, setup.grid, poses[0].azimuth_deg)
    return detect(mem, theta, face_shift=face_shift), gt


def calibrate_face_shift(seeds=CALIBRATION_SEEDS, setup=None, theta=DETECTION_THETA, min_iou=0.33):
    """Mean signed face error of unshifted proposals, negated, in voxel pitches.

    Each ground-truth box is paired with its best-overlapping proposal; pairs
    under ``min_iou`` are left out. Depth shells see the tops and sides of
    objects but only graze their undersides, and this is the correction.
    """
    setup = setup or Setup()
    pitch = np.tile(setup.grid.voxel_size, 2)
    errors = []
    for s in seeds:
        preds, gts = detection_scene(s, setup, theta, face_shift=None)
        for g in gts:
            overlaps = [iou3d(d.box, g.box) for d in preds]
            if overlaps and max(overlaps) >= min_iou:
                d = preds[int(np.argmax(overlaps))]
                errors.append(np.concatenate([d.box.lo - g.box.lo, d.box.hi - g.box.hi]) / pitch)
    return tuple(float(v) for v in -np.mean(errors, axis=0))


def detection_map(
    seeds, setup=None, thresholds=(0.33, 0.5, 0.75), theta=DETECTION_THETA, face_shift=CALIBRATED_FACE_SHIFT
):
    t0 = time.perf_counter()
    preds, gts = {}, {}
    for s in seeds:
        preds[s], gts[s] = detection_scene(s, setup, theta, face_shift)
    out = {"scenes": len(preds), "box": {}, "mask": {}}
    for t in thresholds:
        out["box"][str(t)] = evaluate_map(preds, gts, t, "box")
        out["mask"][str(t)] = evaluate_map(preds, gts, t, "mask")
    out["seconds"] = time.perf_counter() - t0
    return out, preds, gts


# -- object permanence -----------------------------------------------------------------


def _instance_pixels(scene, pose, intr, iid):
    return int(np.count_nonzero(render(scene, pose, intr)[2] == iid))


def occlusion_sequence(index, setup=None, flank_offsets=(60.0, 120.0, 240.0, 300.0), max_tries=200):
    """Build a scene and a view sequence where object 1 is seen, then hidden.

    A small object sits behind a tall box as seen from the third camera; the
    earlier cameras sit at ``flank_offsets`` degrees of azimuth from it, where
    the object is in plain view. The hiding camera comes last.
    Returns (scene, poses) or raises RuntimeError when no valid draw is found.
    """
    setup = setup or Setup()
    rng = _protocol_rng(index, 3)
    table = -1.0
    for _ in range(max_tries):
        az3 = 90.0 * rng.integers(4)
        # horizontal unit vectors: towards camera 3, and across its view
        a = np.radians(az3)
        toward = np.array([-np.sin(a), 0.0, -np.cos(a)])
        side = np.array([toward[2], 0.0, -toward[0]])
        up = np.array([0.0, 1.0, 0.0])
        offset = float(rng.uniform(-0.2, 0.2))
        if rng.uniform() < 0.5:
            radius = float(rng.uniform(0.35, 0.45))
            center = -0.9 * toward + offset * side + (table + radius) * up
            target = Primitive("sphere", tuple(center), tuple(rng.uniform(0.3, 1.0, 3)), 1, radius=radius)
        else:
            size = rng.uniform(0.6, 0.8, size=3)
            center = -0.9 * toward + offset * side + (table + size[1] / 2) * up
            target = Primitive("box", tuple(center), tuple(rng.uniform(0.3, 1.0, 3)), 1, size=tuple(size))
        width, height = float(rng.uniform(1.3, 1.5)), float(rng.uniform(1.4, 1.6))
        dims = np.abs(side) * width + np.abs(toward) * 0.4 + height * up
        center = 0.5 * toward + offset * side + (table + height / 2) * up
        occluder = Primitive("box", tuple(center), tuple(rng.uniform(0.3, 1.0, 3)), 0, size=tuple(dims))
        scene = Scene((occluder, target), int(index), table)
        poses = [setup.pose((az3 + d) % 360.0, rng.choice(ELEVATIONS[:2])) for d in flank_offsets]
        poses.append(setup.pose(az3, ELEVATIONS[0]))
        seen = [_instance_pixels(scene, p, setup.intr, 1) for p in poses]
        if min(seen[:-1]) > 0 and seen[-1] == 0:
            return scene, poses
    raise RuntimeError(f"no occlusion sequence found for index {index}")


def permanence_trial(index, setup=None, theta=DETECTION_THETA, iou_threshold=0.5, face_shift=CALIBRATED_FACE_SHIFT):
    setup = setup or Setup()
    scene, poses = occlusion_sequence(index, setup)
    mem = integrate_views(render_frames(scene, poses, setup.intr), setup.intr, setup.grid)
    gt = [g for g in ground_truth_detections(scene, setup.grid, poses[0].azimuth_deg) if g.box.instance_id == 1][0]
    best = max((iou3d(d.box, gt.box) for d in detect(mem, theta, face_shift=face_shift)), default=0.0)
    return {"index": int(index), "iou": float(best), "detected": bool(best >= iou_threshold)}


def object_permanence(indices, setup=None, theta=DETECTION_THETA):
    t0 = time.perf_counter()
    trials = [permanence_trial(i, setup, theta) for i in indices]
    return {
        "sequences": len(trials),
        "fraction_detected": float(np.mean([t["detected"] for t in trials])),
        "mean_iou": float(np.mean([t["iou"] for t in trials])),
        "seconds": time.perf_counter() - t0,
        "trials": trials,
    }


# -- view prediction --------------------------------------------------------------------


def view_prediction_trial(seed, setup=None, n_inputs=5, n_queries=3, theta=VIEW_THETA):
    """Map from ``n_inputs`` protocol views, then predict held-out protocol views."""
    setup = setup or Setup()
    rng = _protocol_rng(seed, 4)
    scene = generate_scene(seed)
    all_views = [(AZIMUTH_STEP * i, e) for i in range(N_AZIMUTHS) for e in ELEVATIONS]
    order = rng.permutation(len(all_views))
    picked = [all_views[i] for i in order[: n_inputs + n_queries]]
    inputs = [setup.pose(*v) for v in picked[:n_inputs]]
    queries = [setup.pose(*v) for v in picked[n_inputs:]]
    mem = integrate_views(render_frames(scene, inputs, setup.intr), setup.intr, setup.grid)
    pitch = float(setup.grid.voxel_size[2])
    out = []
    for q in queries:
        _, pred_depth = predict_view(mem, q, setup.intr, theta, inputs[0].azimuth_deg)
        _, true_depth, _ = render(scene, q, setup.intr)
        pred_fg, true_fg = np.isfinite(pred_depth), np.isfinite(true_depth)
        both = pred_fg & true_fg
        close = np.abs(pred_depth[both] - true_depth[both]) <= 2 * pitch
        out.append(
            {
                "query": [q.azimuth_deg, q.elevation_deg],
                "agreement": float(np.mean(pred_fg == true_fg)),
                "foreground_iou": float(both.sum() / max(np.count_nonzero(pred_fg | true_fg), 1)),
                "foreground_pixels": int(both.sum()),
                "depth_ok": int(close.sum()),
            }
        )
    return out


def view_prediction(seeds, setup=None, n_inputs=5, n_queries=3, theta=VIEW_THETA):
    t0 = time.perf_counter()
    rows = [r for s in seeds for r in view_prediction_trial(s, setup, n_inputs, n_queries, theta)]
    fg = sum(r["foreground_pixels"] for r in rows)
    return {
        "queries": len(rows),
        "mean_agreement": float(np.mean([r["agreement"] for r in rows])),
        "min_agreement": float(np.min([r["agreement"] for r in rows])),
        "mean_foreground_iou": float(np.mean([r["foreground_iou"] for r in rows])),
        "depth_within_two_voxels": float(sum(r["depth_ok"] for r in rows) / fg) if fg else 0.0,
        "seconds": time.perf_counter() - t0,
    }


# -- scene arithmetic -----------------------------------------------------------------


def occupancy_iou(a, b, theta=ARITH_THETA):
    sa, sb = a.data[..., OCC_CHANNEL] >= theta, b.data[..., OCC_CHANNEL] >= theta
    union = np.count_nonzero(sa | sb)
    return np.count_nonzero(sa & sb) / union if union else 1.0


def memory_arithmetic(a, b, c):
    """The memory-level combination ``a - b + c``."""
    return add_volumes(sub_volumes(a, b), c)


def arithmetic_seeds(count, start=0):
    """The first ``count`` seeds from ``start`` on whose three-object draw can be placed."""
    seeds = []
    seed = start
    while len(seeds) < count:
        try:
            generate_scene(seed, n_objects=3)
        except PlacementError:
            pass
        else:
            seeds.append(seed)
        seed += 1
    return seeds


def arithmetic_trial(seed, setup=None, theta=ARITH_THETA):
    """A = {o0, o1}, B = {o1}, C = {o2} from one three-object draw; compare A - B + C with {o0, o2}.

    The cameras ride the highest protocol elevation, where the objects rarely
    hide one another, so each memory is close to the sum of its objects' own.
    """
    setup = setup or Setup()
    rng = _protocol_rng(seed, 5)
    scene = generate_scene(seed, n_objects=3)
    poses = ring_poses(rng, setup, elevations=(ELEVATIONS[-1],))
    maps = {}
    for name, ids in (("A", (0, 1)), ("B", (1,)), ("C", (2,)), ("target", (0, 2))):
        sub = scene.subset(ids)
        maps[name] = integrate_views(render_frames(sub, poses, setup.intr), setup.intr, setup.grid)
    combo = memory_arithmetic(maps["A"], maps["B"], maps["C"])
    return {"seed": int(seed), "iou": float(occupancy_iou(combo, maps["target"], theta))}


def scene_arithmetic(seeds, setup=None, theta=ARITH_THETA):
    t0 = time.perf_counter()
    trials = [arithmetic_trial(s, setup, theta) for s in seeds]
    return {
        "triples": len(trials),
        "min_iou": float(min(t["iou"] for t in trials)),
        "mean_iou": float(np.mean([t["iou"] for t in trials])),
        "seconds": time.perf_counter() - t0,
        "trials": trials,
    }
