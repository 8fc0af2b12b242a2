"""Command-line pipeline: render / init-guess / register / eval / overlay.

Configuration is a single JSON file; individual values can be overridden on
the command line with --set section.key=value (flags win). Every subcommand
writes a machine-readable diagnostics JSON next to its outputs.

Exit codes: 0 success, 1 configuration or I/O error, 2 declared
registration failure (no yaw succeeded / no associations).
"""

import argparse
import copy
import json
import logging
import os
import sys
import time

import numpy as np

from . import edges as edgemod
from . import metrics as metricsmod
from . import pcio
from .core import project_points
from .errors import (ConfigError, NoAssociations, NoYawSucceeded,
                     RoadregError)
from .matchinit import InitialGuessParams, estimate_initial_guess
from .optim import OptimizeParams, optimize
from .render import RenderParams, render_view

log = logging.getLogger("roadreg")

DEFAULT_CONFIG = {
    "paths": {
        "cloud": None, "image": None, "intrinsics": None,
        "pose": None, "init_pose": None, "gt_pose": None,
        "matches_dir": None, "mask_image": None, "mask_render": None,
        "distance_pairs": None,
    },
    "render": {"window": 5, "xi": 0.1, "min_foreground": 3},
    "init_guess": {
        "rough_position": [0.0, 0.0, 0.0], "pitch_deg": -10.0, "roll_deg": 0.0,
        "yaw_count": 8, "min_inliers": 30, "ransac_threshold_px": 3.0,
        "ransac_iters": 1000,
    },
    "edges": {
        "backend": "builtin", "spacing": 0.2, "depth_gap": 0.5,
        "high_percentile": 92.0, "low_percentile": 80.0,
    },
    "optim": {
        "M": 10, "max_iterations": 50, "lambda_init": 1e-3,
        "convergence_tol": 1e-8, "huber_delta_px": 2.0,
        "max_assoc_dist_px": 30.0,
    },
    "matcher": "builtin",
    "seed": 42,
    "workers": 0,
    "output_dir": ".",
}


def load_config(path, overrides=()):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, "r") as f:
                user = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        for key, val in user.items():
            if key not in cfg:
                raise ConfigError(f"unknown config section '{key}'")
            if isinstance(cfg[key], dict):
                if not isinstance(val, dict):
                    raise ConfigError(f"section '{key}' must be an object")
                for k2, v2 in val.items():
                    if k2 not in cfg[key]:
                        raise ConfigError(f"unknown config field '{key}.{k2}'")
                    cfg[key][k2] = v2
            else:
                cfg[key] = val
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override '{ov}' is not key=value")
        key, raw = ov.split("=", 1)
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        parts = key.split(".")
        node = cfg
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigError(f"unknown config field '{key}'")
            node = node[p]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown config field '{key}'")
        node[parts[-1]] = val
    workers = os.environ.get("ROADREG_WORKERS")
    if workers is not None:
        try:
            cfg["workers"] = int(workers)
        except ValueError:
            raise ConfigError("ROADREG_WORKERS must be an integer") from None
    return cfg


def _require_paths(cfg, names):
    for name in names:
        p = cfg["paths"].get(name)
        if p is None:
            raise ConfigError(f"paths.{name} is required for this command")
        if not os.path.exists(p):
            raise ConfigError(f"paths.{name}: no such file '{p}'")


def _render_params(cfg):
    r = cfg["render"]
    return RenderParams(window=int(r["window"]), xi=float(r["xi"]),
                        min_foreground=int(r["min_foreground"]))


def _init_params(cfg):
    g = cfg["init_guess"]
    return InitialGuessParams(
        rough_position=np.asarray(g["rough_position"], dtype=float),
        pitch_deg=float(g["pitch_deg"]), roll_deg=float(g["roll_deg"]),
        yaw_count=int(g["yaw_count"]), min_inliers=int(g["min_inliers"]),
        ransac_threshold_px=float(g["ransac_threshold_px"]),
        ransac_iters=int(g["ransac_iters"]), seed=int(cfg["seed"]))


def _edge_params(cfg):
    e = cfg["edges"]
    return edgemod.EdgeParams(backend=e["backend"],
                              high_percentile=float(e["high_percentile"]),
                              low_percentile=float(e["low_percentile"]),
                              spacing=float(e["spacing"]),
                              depth_gap=float(e["depth_gap"]))


def _optim_params(cfg):
    o = cfg["optim"]
    return OptimizeParams(M=int(o["M"]), max_iterations=int(o["max_iterations"]),
                          lambda_init=float(o["lambda_init"]),
                          convergence_tol=float(o["convergence_tol"]),
                          huber_delta_px=float(o["huber_delta_px"]),
                          max_assoc_dist_px=float(o["max_assoc_dist_px"]))


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _diag_path(cfg, cmd):
    return os.path.join(cfg["output_dir"], f"{cmd}_diagnostics.json")


def _edge_mask(cfg, key, image):
    path = cfg["paths"].get(key)
    if cfg["edges"]["backend"] != "mask":
        return None
    if path is None:
        raise ConfigError(f"paths.{key} is required with the mask edge backend")
    return pcio.load_edge_mask(path, expect_size=(image.width, image.height))


def _extract_and_lift(cfg, view):
    """Rendered-view edges -> sampled 3D edge points."""
    params = _edge_params(cfg)
    mask = _edge_mask(cfg, "mask_render", view.image)
    e2d = edgemod.extract_edges_2d(view.image, params, mask=mask)
    dense = edgemod.lift_edges_3d(e2d, view, depth_gap=params.depth_gap)
    return edgemod.sample_edge_points(dense, params.spacing)


def _camera_edge_index(cfg, image):
    params = _edge_params(cfg)
    mask = _edge_mask(cfg, "mask_image", image)
    cam_edges = edgemod.extract_edges_2d(image, params, mask=mask)
    if cam_edges.count == 0:
        raise NoAssociations("camera image produced no edge pixels")
    return edgemod.build_edge_index(cam_edges), cam_edges


def cmd_render(cfg):
    _require_paths(cfg, ["cloud", "intrinsics", "pose"])
    t0 = time.time()
    cloud = pcio.load_point_cloud(cfg["paths"]["cloud"])
    K = pcio.load_intrinsics(cfg["paths"]["intrinsics"])
    pose = pcio.load_pose(cfg["paths"]["pose"])
    view = render_view(cloud, K, pose, _render_params(cfg))
    out = cfg["output_dir"]
    pcio.save_image_pgm(os.path.join(out, "rendered.pgm"), view.image)
    pcio.save_correspondence(os.path.join(out, "rendered_corr.bin"), view)
    _write_json(_diag_path(cfg, "render"), {
        "command": "render", "points": cloud.count,
        "shaded_pixels": int(view.valid.sum()),
        "render": cfg["render"], "workers": cfg["workers"],
        "elapsed_s": round(time.time() - t0, 3)})
    return 0


def cmd_init_guess(cfg):
    _require_paths(cfg, ["cloud", "image", "intrinsics"])
    t0 = time.time()
    cloud = pcio.load_point_cloud(cfg["paths"]["cloud"])
    image = pcio.load_image(cfg["paths"]["image"])
    K = pcio.load_intrinsics(cfg["paths"]["intrinsics"])
    pose, diag = estimate_initial_guess(
        cloud, image, K, _init_params(cfg), matcher_backend=cfg["matcher"],
        matches_dir=cfg["paths"]["matches_dir"], render_params=_render_params(cfg))
    out = cfg["output_dir"]
    pcio.save_pose(os.path.join(out, "initial_pose.json"), pose)
    _write_json(_diag_path(cfg, "init-guess"), {
        "command": "init-guess", "points": cloud.count, "stages": diag,
        "init_guess": {**cfg["init_guess"], "rough_position":
                       list(map(float, cfg["init_guess"]["rough_position"]))},
        "seed": cfg["seed"], "workers": cfg["workers"],
        "elapsed_s": round(time.time() - t0, 3)})
    return 0


def cmd_register(cfg):
    _require_paths(cfg, ["cloud", "image", "intrinsics"])
    t0 = time.time()
    cloud = pcio.load_point_cloud(cfg["paths"]["cloud"])
    image = pcio.load_image(cfg["paths"]["image"])
    K = pcio.load_intrinsics(cfg["paths"]["intrinsics"])
    out = cfg["output_dir"]

    init_diag = None
    if cfg["paths"]["init_pose"] is not None:
        pose0 = pcio.load_pose(cfg["paths"]["init_pose"])
    else:
        pose0, init_diag = estimate_initial_guess(
            cloud, image, K, _init_params(cfg), matcher_backend=cfg["matcher"],
            matches_dir=cfg["paths"]["matches_dir"],
            render_params=_render_params(cfg))

    view = render_view(cloud, K, pose0, _render_params(cfg))
    sampled = _extract_and_lift(cfg, view)
    index, cam_edges = _camera_edge_index(cfg, image)
    result = optimize(sampled, index, K, pose0, _optim_params(cfg))

    pcio.save_pose(os.path.join(out, "pose.json"), result.pose)
    _write_json(os.path.join(out, "result.json"), {
        "pose": {"R": result.pose.R.tolist(), "t": result.pose.t.tolist(),
                 "convention": "world_to_camera"},
        "iterations": result.iterations, "converged": result.converged,
        "residual_rms_px": result.residual_rms,
        "active_residuals": result.active_residuals})
    uv, _, in_front = project_points(K, result.pose, sampled.samples)
    pcio.save_overlay(os.path.join(out, "overlay.ppm"), image, uv[in_front])
    _write_json(_diag_path(cfg, "register"), {
        "command": "register", "points": cloud.count,
        "initial_guess": init_diag,
        "edge_samples_3d": int(sampled.count),
        "camera_edge_pixels": int(cam_edges.count),
        "iterations": result.iterations, "converged": result.converged,
        "final_rms_px": result.residual_rms[-1] if result.residual_rms else None,
        "seed": cfg["seed"], "workers": cfg["workers"],
        "elapsed_s": round(time.time() - t0, 3)})
    return 0


def cmd_eval(cfg):
    _require_paths(cfg, ["cloud", "intrinsics", "pose", "gt_pose"])
    t0 = time.time()
    cloud = pcio.load_point_cloud(cfg["paths"]["cloud"])
    K = pcio.load_intrinsics(cfg["paths"]["intrinsics"])
    est = pcio.load_pose(cfg["paths"]["pose"])
    gt = pcio.load_pose(cfg["paths"]["gt_pose"])
    err = metricsmod.pose_error(est, gt)
    report = {
        "command": "eval",
        "trans_err_m": err.trans_err_m,
        "rot_err_deg": err.rot_err_deg,
        "geodesic_deg": err.geodesic_deg,
    }
    pairs_path = cfg["paths"]["distance_pairs"]
    if pairs_path is not None:
        rows = np.loadtxt(pairs_path, comments="#", ndmin=2)
        if rows.shape[1] != 5:
            raise ConfigError("distance pairs file needs 'u1 v1 u2 v2 d' rows")
        view = render_view(cloud, K, est, _render_params(cfg))
        pairs = rows[:, :4].reshape(-1, 2, 2)
        dist = metricsmod.ground_distance_errors(pairs, view, rows[:, 4])
        report["distance"] = {"max_pct": dist.max_pct,
                              "median_pct": dist.median_pct,
                              "rmse_pct": dist.rmse_pct}
    report["elapsed_s"] = round(time.time() - t0, 3)
    _write_json(os.path.join(cfg["output_dir"], "metrics.json"), report)
    _write_json(_diag_path(cfg, "eval"), report)
    return 0


def cmd_overlay(cfg):
    _require_paths(cfg, ["cloud", "image", "intrinsics", "pose"])
    t0 = time.time()
    cloud = pcio.load_point_cloud(cfg["paths"]["cloud"])
    image = pcio.load_image(cfg["paths"]["image"])
    K = pcio.load_intrinsics(cfg["paths"]["intrinsics"])
    pose = pcio.load_pose(cfg["paths"]["pose"])
    view = render_view(cloud, K, pose, _render_params(cfg))
    sampled = _extract_and_lift(cfg, view)
    uv, _, in_front = project_points(K, pose, sampled.samples)
    pcio.save_overlay(os.path.join(cfg["output_dir"], "overlay.ppm"),
                      image, uv[in_front])
    _write_json(_diag_path(cfg, "overlay"), {
        "command": "overlay", "edge_samples_3d": int(sampled.count),
        "elapsed_s": round(time.time() - t0, 3)})
    return 0


COMMANDS = {
    "render": cmd_render,
    "init-guess": cmd_init_guess,
    "register": cmd_register,
    "eval": cmd_eval,
    "overlay": cmd_overlay,
}


def build_parser():
    ap = argparse.ArgumentParser(
        prog="roadreg",
        description="Register a prior point cloud to a roadside camera image.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("-c", "--config", help="JSON config file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config field, e.g. --set render.xi=0.2")
    ap.add_argument("--output-dir")
    ap.add_argument("--cloud")
    ap.add_argument("--image")
    ap.add_argument("--intrinsics")
    ap.add_argument("--pose")
    ap.add_argument("--init-pose")
    ap.add_argument("--gt-pose")
    ap.add_argument("--matches-dir")
    ap.add_argument("--edge-backend", choices=["builtin", "mask"])
    ap.add_argument("--mask", help="edge mask for the camera image")
    ap.add_argument("--seed", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _apply_flags(cfg, args):
    path_flags = {"cloud": args.cloud, "image": args.image,
                  "intrinsics": args.intrinsics, "pose": args.pose,
                  "init_pose": args.init_pose, "gt_pose": args.gt_pose,
                  "matches_dir": args.matches_dir, "mask_image": args.mask}
    for key, val in path_flags.items():
        if val is not None:
            cfg["paths"][key] = val
    if args.edge_backend is not None:
        cfg["edges"]["backend"] = args.edge_backend
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.output_dir is not None:
        cfg["output_dir"] = args.output_dir


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        _apply_flags(cfg, args)
        os.makedirs(cfg["output_dir"], exist_ok=True)
        return COMMANDS[args.command](cfg)
    except (NoYawSucceeded, NoAssociations) as e:
        log.error("registration failed: %s: %s", type(e).__name__, e)
        return 2
    except (ConfigError,) as e:
        log.error("config: %s", e)
        return 1
    except (RoadregError, OSError) as e:
        log.error("%s: %s", type(e).__name__, e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
