"""Command-line front end: ``egomap <subcommand> ...``.

Reports go to stdout as JSON, artifacts go to the paths given by flags.
Exit status is 0 on success, 2 on a usage error and 1 on a runtime error
(with a one-line diagnostic on stderr).
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .detection import (
    detect,
    detections_from_json,
    detections_to_json,
    evaluate_map,
    ground_truth_detections,
)
from .errors import EgomapError
from .formats import read_grnv, read_pfm, read_ppm, write_grnv, write_pfm, write_ppm
from .geometry import CameraIntrinsics, GridSpec, Pose
from .memory import Frame, GruWeights, MapConfig, integrate_views, reference_pose
from .projection import DEFAULT_THETA, predict_view
from .scene import Scene, generate_scene, render
from .volume import FeatureVolume, OCC_CHANNEL, add_volumes, sub_volumes

# -- shared setup ----------------------------------------------------------------------


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _emit(report):
    sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _setup(args):
    """Grid and intrinsics from defaults, then ``--config``, then explicit flags."""
    grid = GridSpec().to_dict()
    camera = {"fov_deg": 60.0, "width": 64, "height": 64}
    if args.config:
        cfg = _load_json(args.config)
        grid.update(cfg.get("grid", {}))
        camera.update(cfg.get("camera", {}))
    if args.grid_size is not None:
        grid.update(w=args.grid_size, h=args.grid_size, d=args.grid_size)
    if args.grid_side is not None:
        grid["side"] = args.grid_side
    if args.radius is not None:
        grid["center_distance"] = args.radius
    if args.fov is not None:
        camera = {k: v for k, v in camera.items() if k in ("width", "height")}
        camera["fov_deg"] = args.fov
    if args.image_size is not None:
        camera.update(width=args.image_size, height=args.image_size)
        if "f" in camera:
            camera.update(cx=(args.image_size - 1) / 2.0, cy=(args.image_size - 1) / 2.0)
    if "f" in camera:
        intr = CameraIntrinsics.from_dict(camera)
    else:
        intr = CameraIntrinsics.from_fov(float(camera["fov_deg"]), int(camera["width"]), int(camera["height"]))
    return ex.Setup(intr, GridSpec.from_dict(grid))


def _intrinsics(args, setup):
    return CameraIntrinsics.from_dict(_load_json(args.intrinsics)) if args.intrinsics else setup.intr


def _load_memory(path, grid):
    data = read_grnv(path)
    if data.shape[:3] != grid.shape:
        raise EgomapError(f"{path}: volume shape {data.shape[:3]} does not match grid {grid.shape}")
    return FeatureVolume(grid, data)


def parse_seeds(text):
    """``"0:32"`` (half-open range) or ``"1,5,9"``."""
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi)))
    return [int(v) for v in text.split(",") if v.strip()]


def parse_floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "seconds"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _face_shift(name):
    return ex.CALIBRATED_FACE_SHIFT if name == "calibrated" else None


# -- subcommands ---------------------------------------------------------------------------


def cmd_gen_scene(args):
    setup = _setup(args)
    scene = generate_scene(args.seed, n_objects=args.objects, style=args.style)
    Path(args.output).write_text(scene.to_json() + "\n", encoding="utf-8")
    report = {"output": args.output, "objects": len(scene.objects), "seed": args.seed, "style": args.style}
    if args.gt:
        gt = ground_truth_detections(scene, setup.grid, args.memory_azimuth, per_cube=args.per_cube)
        _write_json(args.gt, detections_to_json({args.scene_id: gt}, setup.grid))
        report["gt"] = args.gt
    _emit(report)


def cmd_render(args):
    setup = _setup(args)
    intr = _intrinsics(args, setup)
    scene = Scene.from_json(Path(args.scene).read_text(encoding="utf-8"))
    pose = Pose.from_dict(_load_json(args.pose))
    rgb, depth, ids = render(scene, pose, intr)
    write_ppm(args.rgb, rgb)
    write_pfm(args.depth, depth)
    _emit(
        {
            "rgb": args.rgb,
            "depth": args.depth,
            "foreground_pixels": int(np.isfinite(depth).sum()),
            "visible_ids": sorted(int(i) for i in np.unique(ids) if i >= 0),
        }
    )


def _read_manifest(path, setup):
    """Frames manifest: {"intrinsics": {...}?, "frames": [{"image", "depth"?, "pose"}]} or a bare list."""
    base = Path(path).parent
    doc = _load_json(path)
    entries = doc if isinstance(doc, list) else doc.get("frames")
    if not entries:
        raise EgomapError(f"{path}: manifest lists no frames")
    intr = setup.intr
    if isinstance(doc, dict) and "intrinsics" in doc:
        intr = CameraIntrinsics.from_dict(doc["intrinsics"])
    frames = []
    for i, e in enumerate(entries):
        pose = e["pose"]
        pose = Pose.from_dict(pose if isinstance(pose, dict) else _load_json(base / pose))
        image = read_ppm(base / e["image"])
        depth = read_pfm(base / e["depth"]) if e.get("depth") else None
        if image.shape[:2] != (intr.height, intr.width):
            raise EgomapError(f"frame {i + 1}: image is {image.shape[1]}x{image.shape[0]}, camera is {intr.width}x{intr.height}")
        frames.append(Frame(image, depth, pose))
    return frames, intr


def cmd_map(args):
    setup = _setup(args)
    frames, intr = _read_manifest(args.frames, setup)
    weights = None
    if args.gru_weights:
        weights = GruWeights.from_grnv(Path(args.gru_weights).read_bytes())
    config = MapConfig(temperature=args.temperature, argmax=args.argmax, gru_weights=weights, gru_seed=args.gru_seed)
    log = []
    mem = integrate_views(frames, intr, setup.grid, mode=args.mode, egomotion=args.ego, config=config, log=log)
    write_grnv(args.output, mem.data)
    ref = reference_pose(frames[0].pose)
    report = {
        "output": args.output,
        "shape": list(mem.data.shape),
        "reference_azimuth": ref.azimuth_deg,
        "mode": args.mode,
        "egomotion": args.ego,
        "steps": log,
    }
    if args.log:
        _write_json(args.log, log)
        report["log"] = args.log
    _emit(report)


def cmd_egomotion_eval(args):
    setup = _setup(args)
    config = MapConfig(temperature=args.temperature, argmax=args.argmax)
    seeds = parse_seeds(args.seeds)
    res = ex.egomotion_recovery(seeds, setup, n_views=args.views, tolerance_deg=args.tolerance, config=config)
    per_scene = []
    for t in res["trials"]:
        errs = np.asarray(t["errors"])
        per_scene.append(
            {
                "seed": t["seed"],
                "errors": t["errors"],
                "mean_az_err": float(errs[:, 0].mean()),
                "mean_el_err": float(errs[:, 1].mean()),
            }
        )
    report = {
        "scenes": per_scene,
        "mean_az_err": res["mean_azimuth_error"],
        "mean_el_err": res["mean_elevation_error"],
        "fraction_within": res["fraction_within"],
        "tolerance_deg": args.tolerance,
        "last_view_az_err": {"one_view": res["mean_error_one_view"], "integrated": res["mean_error_integrated"]},
    }
    if args.plot_dir:
        from .plotting import plot_egomotion_errors

        Path(args.plot_dir).mkdir(parents=True, exist_ok=True)
        errs = [e for t in res["trials"] for e in t["errors"]]
        report["figures"] = [plot_egomotion_errors(errs, Path(args.plot_dir) / "egomotion_errors.png", args.tolerance)]
    _emit(report)


def _psnr(a, b):
    mse = float(np.mean((np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) ** 2))
    return float("inf") if mse == 0.0 else float(10.0 * np.log10(1.0 / mse))


def cmd_view_predict(args):
    setup = _setup(args)
    intr = _intrinsics(args, setup)
    mem = _load_memory(args.memory, setup.grid)
    pose = Pose.from_dict(_load_json(args.pose))
    rgb, depth = predict_view(mem, pose, intr, args.theta, args.reference_azimuth)
    write_ppm(args.rgb, rgb)
    write_pfm(args.depth, depth)
    report = {"rgb": args.rgb, "depth": args.depth, "foreground_pixels": int(np.isfinite(depth).sum())}
    if args.scene:
        scene = Scene.from_json(Path(args.scene).read_text(encoding="utf-8"))
        true_rgb, true_depth, _ = render(scene, pose, intr)
        pred_fg, true_fg = np.isfinite(depth), np.isfinite(true_depth)
        both = pred_fg & true_fg
        pitch = float(setup.grid.voxel_size[2])
        report["foreground_agreement"] = float(np.mean(pred_fg == true_fg))
        report["psnr"] = _psnr(rgb, true_rgb)
        report["depth_within_two_voxels"] = (
            float(np.mean(np.abs(depth[both] - true_depth[both]) <= 2 * pitch)) if both.any() else None
        )
        if args.plot_dir:
            from .plotting import plot_view_prediction

            Path(args.plot_dir).mkdir(parents=True, exist_ok=True)
            out = Path(args.plot_dir) / "view_prediction.png"
            report["figures"] = [plot_view_prediction(true_rgb, rgb, true_depth, depth, out)]
    _emit(report)


def cmd_detect(args):
    setup = _setup(args)
    mem = _load_memory(args.memory, setup.grid)
    dets = detect(
        mem,
        theta=args.theta,
        min_voxels=args.min_voxels,
        nms_iou=args.nms_iou,
        fill=not args.no_fill,
        face_shift=_face_shift(args.face_shift),
    )
    _write_json(args.output, detections_to_json({args.scene_id: dets}, setup.grid))
    _emit(
        {
            "output": args.output,
            "detections": [
                {"center": list(d.box.center), "dims": list(d.box.dims), "score": d.score} for d in dets
            ],
        }
    )


def cmd_eval_map(args):
    setup = _setup(args)
    preds = detections_from_json(_load_json(args.pred), setup.grid)
    gts = detections_from_json(_load_json(args.gt), setup.grid)
    missing = sorted(set(preds) - set(gts))
    if missing:
        raise EgomapError(f"prediction scene ids missing from ground truth: {', '.join(missing)}")
    thresholds = parse_floats(args.iou)
    table = {f"{t:g}": evaluate_map(preds, gts, t, args.mode) for t in thresholds}
    report = {"map": table[f"{thresholds[0]:g}"] if len(thresholds) == 1 else table}
    if args.plot_dir:
        from .plotting import plot_pr_curves

        Path(args.plot_dir).mkdir(parents=True, exist_ok=True)
        out = Path(args.plot_dir) / f"pr_{args.mode}.png"
        report["figures"] = [plot_pr_curves(preds, gts, out, thresholds, args.mode)]
    _emit(report)


_TOKEN = re.compile(r"\s*([+-])\s*")


def parse_expression(expr):
    """Split ``"a.grnv - b.grnv + c.grnv"`` into [(+1, "a.grnv"), (-1, "b.grnv"), (+1, "c.grnv")].

    Operators must be surrounded by whitespace so that paths may contain dashes.
    """
    parts = re.split(r"\s+([+-])\s+", expr.strip())
    if not parts or not parts[0] or len(parts) % 2 == 0:
        raise EgomapError(f"malformed expression {expr!r}")
    out = [(1, parts[0])]
    for op, operand in zip(parts[1::2], parts[2::2]):
        if not operand or _TOKEN.fullmatch(operand):
            raise EgomapError(f"malformed expression {expr!r}")
        out.append((1 if op == "+" else -1, operand))
    return out


def cmd_arith(args):
    setup = _setup(args)
    terms = parse_expression(args.expression)
    result = None
    for sign, path in terms:
        vol = _load_memory(path, setup.grid)
        if result is None:
            result = vol if sign > 0 else sub_volumes(FeatureVolume.zeros(setup.grid, vol.channels), vol)
        else:
            result = add_volumes(result, vol) if sign > 0 else sub_volumes(result, vol)
    write_grnv(args.output, result.data)
    occ = result.data[..., OCC_CHANNEL] >= args.theta
    report = {"output": args.output, "terms": len(terms), "occupied_voxels": int(occ.sum())}
    if args.compare:
        target = _load_memory(args.compare, setup.grid)
        report["occupancy_iou"] = float(ex.occupancy_iou(result, target, args.theta))
    _emit(report)


def cmd_dump_slice(args):
    from .plotting import save_slice_png

    setup = _setup(args)
    mem = _load_memory(args.memory, setup.grid)
    axis = "ijk".index(args.axis) if args.axis in "ijk" else int(args.axis)
    if not 0 <= args.index < mem.data.shape[axis]:
        raise EgomapError(f"slice index {args.index} out of range for axis {args.axis}")
    if not 0 <= args.channel < mem.channels:
        raise EgomapError(f"channel {args.channel} out of range ({mem.channels} channels)")
    plane = np.take(mem.data[..., args.channel], args.index, axis=axis)
    # rows follow the later grid axis, columns the earlier one
    save_slice_png(plane.T, args.output, args.vmin, args.vmax)
    _emit(
        {
            "output": args.output,
            "axis": args.axis,
            "index": args.index,
            "channel": args.channel,
            "min": float(plane.min()),
            "max": float(plane.max()),
        }
    )


SUITES = ("detection", "view", "egomotion", "permanence", "arithmetic")


def cmd_pipeline(args):
    setup = _setup(args)
    seeds = parse_seeds(args.seeds)
    suites = [s.strip() for s in args.suite.split(",") if s.strip()]
    unknown = [s for s in suites if s not in SUITES]
    if unknown:
        raise EgomapError(f"unknown suite(s): {', '.join(unknown)}")
    plot_dir = Path(args.plot_dir) if args.plot_dir else None
    if plot_dir:
        plot_dir.mkdir(parents=True, exist_ok=True)
    report, figures = {"seeds": seeds}, []
    if "detection" in suites:
        det, preds, gts = ex.detection_map(seeds, setup, face_shift=_face_shift(args.face_shift))
        report["detection"] = det
        if plot_dir:
            from .plotting import plot_pr_curves

            for mode in ("box", "mask"):
                figures.append(plot_pr_curves(preds, gts, plot_dir / f"pr_{mode}.png", mode=mode))
    if "view" in suites:
        report["view"] = ex.view_prediction(seeds, setup)
        if plot_dir:
            from .plotting import plot_view_prediction

            scene = generate_scene(seeds[0])
            poses = [setup.pose(a, e) for a, e in ((0.0, 20.0), (80.0, 40.0), (160.0, 60.0), (240.0, 20.0), (300.0, 40.0))]
            mem = integrate_views(ex.render_frames(scene, poses, setup.intr), setup.intr, setup.grid)
            query = setup.pose(120.0, 40.0)
            rgb, depth = predict_view(mem, query, setup.intr, ex.VIEW_THETA, poses[0].azimuth_deg)
            true_rgb, true_depth, _ = render(scene, query, setup.intr)
            figures.append(plot_view_prediction(true_rgb, rgb, true_depth, depth, plot_dir / "view_prediction.png"))
    if "egomotion" in suites:
        ego = ex.egomotion_recovery(seeds, setup)
        report["egomotion"] = {k: v for k, v in ego.items() if k != "trials"}
        if plot_dir:
            from .plotting import plot_egomotion_errors

            errs = [e for t in ego["trials"] for e in t["errors"]]
            figures.append(plot_egomotion_errors(errs, plot_dir / "egomotion_errors.png"))
    if "permanence" in suites:
        report["permanence"] = ex.object_permanence(seeds, setup)
    if "arithmetic" in suites:
        report["arithmetic"] = ex.scene_arithmetic(ex.arithmetic_seeds(len(seeds), seeds[0] if seeds else 0), setup)
    if figures:
        report["figures"] = figures
    _emit(report if args.timing else _strip_timing(report))


# -- argument parsing -----------------------------------------------------------------------


def _common(p):
    g = p.add_argument_group("setup")
    g.add_argument("--config", help="JSON file with 'grid' and 'camera' sections")
    g.add_argument("--grid-size", type=int, help="voxels per grid axis")
    g.add_argument("--grid-side", type=float, help="grid edge length in world units")
    g.add_argument("--radius", type=float, help="camera radius = grid center distance")
    g.add_argument("--fov", type=float, help="horizontal field of view in degrees")
    g.add_argument("--image-size", type=int, help="square image size in pixels")


def build_parser():
    parser = argparse.ArgumentParser(prog="egomap", description="Egocentric voxel mapping on synthetic scenes.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen-scene", help="generate a seeded scene JSON")
    _common(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--objects", type=int, default=2)
    p.add_argument("--style", choices=("arrangement", "shepard_metzler"), default="arrangement")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--gt", help="also write ground-truth detections JSON here")
    p.add_argument("--memory-azimuth", type=float, default=0.0, help="azimuth of the memory frame for --gt")
    p.add_argument("--scene-id", default="0")
    p.add_argument("--per-cube", action="store_true", help="one ground-truth box per chain cube")
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("render", help="ray-cast RGB (PPM) and depth (PFM)")
    _common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--intrinsics")
    p.add_argument("--rgb", required=True)
    p.add_argument("--depth", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("map", help="integrate a frame manifest into a memory volume")
    _common(p)
    p.add_argument("--frames", required=True, help="manifest JSON")
    p.add_argument("--mode", choices=("average", "gru"), default="average")
    p.add_argument("--ego", choices=("given", "estimated"), default="given")
    p.add_argument("--temperature", type=float, default=MapConfig.temperature)
    p.add_argument("--argmax", action="store_true")
    p.add_argument("--gru-weights")
    p.add_argument("--gru-seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--log", help="write the per-step egomotion log JSON here")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("egomotion-eval", help="egomotion errors over seeded camera walks")
    _common(p)
    p.add_argument("--seeds", default="0:10", help="'lo:hi' or comma list")
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--tolerance", type=float, default=10.0)
    p.add_argument("--temperature", type=float, default=MapConfig.temperature)
    p.add_argument("--argmax", action="store_true")
    p.add_argument("--plot-dir")
    p.set_defaults(func=cmd_egomotion_eval)

    p = sub.add_parser("view-predict", help="render a memory from a query pose")
    _common(p)
    p.add_argument("--memory", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--intrinsics")
    p.add_argument("--reference-azimuth", type=float, default=0.0, help="azimuth of the memory frame")
    p.add_argument("--theta", type=float, default=DEFAULT_THETA)
    p.add_argument("--rgb", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--scene", help="scene JSON for a ground-truth comparison")
    p.add_argument("--plot-dir")
    p.set_defaults(func=cmd_view_predict)

    p = sub.add_parser("detect", help="boxes and masks from a memory volume")
    _common(p)
    p.add_argument("--memory", required=True)
    p.add_argument("--theta", type=float, default=ex.DETECTION_THETA)
    p.add_argument("--min-voxels", type=int, default=8)
    p.add_argument("--nms-iou", type=float, default=0.35)
    p.add_argument("--face-shift", choices=("calibrated", "none"), default="calibrated")
    p.add_argument("--no-fill", action="store_true", help="masks keep only thresholded voxels")
    p.add_argument("--scene-id", default="0")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval-map", help="mAP of detections against ground truth")
    _common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", default="0.5", help="comma-separated IoU thresholds")
    p.add_argument("--mode", choices=("box", "mask"), default="box")
    p.add_argument("--plot-dir")
    p.set_defaults(func=cmd_eval_map)

    p = sub.add_parser("arith", help="add and subtract memory volumes")
    _common(p)
    p.add_argument("expression", help="e.g. 'a.grnv - b.grnv + c.grnv'")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--theta", type=float, default=ex.ARITH_THETA)
    p.add_argument("--compare", help="memory to compare occupancy against")
    p.set_defaults(func=cmd_arith)

    p = sub.add_parser("dump-slice", help="write one grid slice as a grayscale PNG")
    _common(p)
    p.add_argument("--memory", required=True)
    p.add_argument("--axis", choices=("i", "j", "k", "0", "1", "2"), default="k")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--channel", type=int, default=OCC_CHANNEL)
    p.add_argument("--vmin", type=float)
    p.add_argument("--vmax", type=float)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_dump_slice)

    p = sub.add_parser("pipeline", help="run the standard seeded experiments")
    _common(p)
    p.add_argument("--seeds", default="0:4")
    p.add_argument("--suite", default="detection,view", help=f"comma list from {', '.join(SUITES)}")
    p.add_argument("--face-shift", choices=("calibrated", "none"), default="calibrated")
    p.add_argument("--plot-dir")
    p.add_argument("--timing", action="store_true", help="include wall-clock seconds")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (EgomapError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        if isinstance(exc, KeyError):
            msg = f"missing key {exc}"
        print(f"egomap: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
