"""Initial pose estimation from a rough camera position.

Roadside cameras sit on poles with near-zero roll and a small downward
pitch, so only the yaw is really unknown: we sample yaw directions at the
rough position, render a view for each, match features against the camera
image, lift matches to 2D-3D through the rendered correspondence map, and
solve PnP inside RANSAC. A second render at the rough pose then evens out
the match distribution before the final solve.
"""

import logging
from dataclasses import dataclass, field

import cv2
import numpy as np

from .core import PoseSE3, boxplus, Twist, pose_point_jacobian, projection_jacobian
from .errors import (BackendUnavailable, InsufficientCorrespondences,
                     NoConsensus, NoYawSucceeded)
from .pcio import load_matches
from .render import RenderParams, render_view

log = logging.getLogger(__name__)

cv2.setNumThreads(0)  # keep feature extraction deterministic


@dataclass(frozen=True)
class Correspondence2D3D:
    pixel: tuple   # (u, v) in the camera image
    point: np.ndarray  # (3,) world frame


@dataclass(frozen=True)
class InitialGuessParams:
    rough_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pitch_deg: float = -10.0
    roll_deg: float = 0.0
    yaw_count: int = 8
    min_inliers: int = 30
    ransac_threshold_px: float = 3.0
    ransac_iters: int = 1000
    seed: int = 42

    def __post_init__(self):
        object.__setattr__(self, "rough_position",
                           np.asarray(self.rough_position, dtype=float).reshape(3))
        if self.yaw_count < 1:
            raise ValueError("yaw_count must be >= 1")
        if self.ransac_threshold_px <= 0 or self.ransac_iters < 1 or self.min_inliers < 4:
            raise ValueError("invalid RANSAC parameters")


def pose_from_yaw_pitch_roll(position, yaw_deg, pitch_deg=0.0, roll_deg=0.0):
    """World-to-camera pose for a camera at `position` in a z-up world.

    Yaw is measured in the ground plane from +x toward +y; pitch < 0 tilts
    the optical axis downward; roll spins around the optical axis.
    """
    y, p, rl = np.radians([yaw_deg, pitch_deg, roll_deg])
    f = np.array([np.cos(p) * np.cos(y), np.cos(p) * np.sin(y), np.sin(p)])
    up = np.array([0.0, 0.0, 1.0])
    r = np.cross(f, up)
    nr = np.linalg.norm(r)
    if nr < 1e-9:
        raise ValueError("camera looking straight up/down; yaw undefined")
    r /= nr
    d = np.cross(f, r)
    if rl != 0.0:
        r, d = (np.cos(rl) * r + np.sin(rl) * d,
                -np.sin(rl) * r + np.cos(rl) * d)
    R = np.stack([r, d, f], axis=0)  # rows: camera axes in world coords
    C = np.asarray(position, dtype=float).reshape(3)
    return PoseSE3(R, -R @ C)


def sample_yaw_poses(params):
    """Uniformly sampled yaw poses at the rough position."""
    step = 360.0 / params.yaw_count
    return [pose_from_yaw_pitch_roll(params.rough_position, k * step,
                                     params.pitch_deg, params.roll_deg)
            for k in range(params.yaw_count)]


def _sift_features(image):
    img8 = np.clip(np.rint(image.pixels * 255.0), 0, 255).astype(np.uint8)
    sift = cv2.SIFT_create()
    kps, desc = sift.detectAndCompute(img8, None)
    if desc is None:
        return np.empty((0, 2)), np.empty((0, 128), dtype=np.float32)
    pts = np.array([kp.pt for kp in kps], dtype=float)
    return pts, desc


def _ratio_matches(desc_a, desc_b, ratio):
    bf = cv2.BFMatcher(cv2.NORM_L2)
    out = {}
    for m, n2 in bf.knnMatch(desc_a, desc_b, k=2):
        if m.distance <= ratio * n2.distance:
            out[m.queryIdx] = m.trainIdx
    return out


def match_features(image_a, image_b, backend="builtin", matches_path=None,
                   ratio=0.8):
    """Sub-pixel feature matches between two images as an (n, 4) array.

    builtin: multi-scale keypoints with gradient-orientation descriptors
    (SIFT), matched by mutual nearest neighbor with a ratio test.
    external_file: reads a precomputed match file, validated against bounds.
    """
    if backend == "external_file":
        if matches_path is None:
            raise BackendUnavailable("external_file backend needs a match file path")
        return load_matches(matches_path,
                            size_a=(image_a.width, image_a.height),
                            size_b=(image_b.width, image_b.height))
    if backend != "builtin":
        raise BackendUnavailable(f"unknown matcher backend '{backend}'")

    pts_a, desc_a = _sift_features(image_a)
    pts_b, desc_b = _sift_features(image_b)
    if len(pts_a) < 2 or len(pts_b) < 2:
        return np.empty((0, 4))
    ab = _ratio_matches(desc_a, desc_b, ratio)
    ba = _ratio_matches(desc_b, desc_a, ratio)
    pairs = [(i, j) for i, j in ab.items() if ba.get(j) == i]
    if not pairs:
        return np.empty((0, 4))
    pairs.sort()
    ia = np.array([p[0] for p in pairs])
    ib = np.array([p[1] for p in pairs])
    return np.hstack([pts_a[ia], pts_b[ib]])


def lift_matches(matches, view):
    """Turn (render, camera) pixel matches into 2D-3D correspondences.

    Side a of each match must refer to the rendered view; matches landing
    on rendering holes are dropped.
    """
    matches = np.asarray(matches, dtype=float).reshape(-1, 4)
    corrs = []
    dropped = 0
    for ua, va, ub, vb in matches:
        P = view.lookup((ua, va))
        if P is None:
            dropped += 1
            continue
        corrs.append(Correspondence2D3D((ub, vb), P))
    if dropped:
        log.debug("lift_matches dropped %d matches on holes", dropped)
    return corrs


def _reprojection_errors(pixels, points, K, R, t):
    X = points @ R.T + t
    z = X[:, 2]
    ok = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * X[:, 0] / z + K.cx
        v = K.fy * X[:, 1] / z + K.cy
    err = np.hypot(u - pixels[:, 0], v - pixels[:, 1])
    err[~ok] = np.inf
    return err


def refine_pose_reprojection(pixels, points, K, pose, iters=30, tol=1e-12):
    """Levenberg-Marquardt on the full 2D reprojection objective."""
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    lam = 1e-4
    T = pose

    def cost(Tc):
        e = _reprojection_errors(pixels, points, K, Tc.R, Tc.t)
        return float(np.sum(np.where(np.isfinite(e), e, 1e6) ** 2))

    c = cost(T)
    for _ in range(iters):
        X = points @ T.R.T + T.t
        ok = X[:, 2] > 0
        if not ok.any():
            break
        u = K.fx * X[ok, 0] / X[ok, 2] + K.cx
        v = K.fy * X[ok, 1] / X[ok, 2] + K.cy
        r = np.stack([u - pixels[ok, 0], v - pixels[ok, 1]], axis=1).ravel()
        J = np.empty((ok.sum() * 2, 6))
        for i, Xc in enumerate(X[ok]):
            J[2 * i:2 * i + 2] = projection_jacobian(K, Xc) @ pose_point_jacobian(Xc)
        JtJ = J.T @ J
        g = J.T @ r
        stepped = False
        for _ in range(8):
            try:
                delta = np.linalg.solve(JtJ + lam * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            T_new = boxplus(T, Twist(delta[:3], delta[3:]))
            c_new = cost(T_new)
            if c_new < c:
                T, c = T_new, c_new
                lam = max(lam * 0.3, 1e-12)
                stepped = True
                break
            lam *= 10
        if not stepped or np.linalg.norm(delta) < tol:
            break
    return T


def solve_pnp_ransac(corrs, K, threshold_px=3.0, iters=1000, min_inliers=30,
                     seed=42, rng=None):
    """RANSAC over minimal 4-point PnP hypotheses + LM refinement on inliers.

    The correspondence list is canonically sorted internally, so the inlier
    set does not depend on input ordering. Returns (pose, inlier indices in
    the input ordering).
    """
    pixels = np.array([c.pixel for c in corrs], dtype=float).reshape(-1, 2)
    points = np.array([c.point for c in corrs], dtype=float).reshape(-1, 3)
    n = pixels.shape[0]
    if n < 4:
        raise InsufficientCorrespondences(f"need >= 4 correspondences, got {n}")
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0],
                        pixels[:, 1], pixels[:, 0]))
    px = pixels[order]
    P = points[order]
    if rng is None:
        rng = np.random.default_rng(seed)
    Kmat = K.matrix()

    best_mask = None
    best_count = 0
    needed = iters
    it = 0
    while it < min(iters, needed):
        it += 1
        sample = rng.choice(n, size=4, replace=False)
        obj = np.ascontiguousarray(P[sample], dtype=np.float64)
        img = np.ascontiguousarray(px[sample], dtype=np.float64)
        try:
            ok_flag, rvecs, tvecs = cv2.solveP3P(obj, img, Kmat, None,
                                                 flags=cv2.SOLVEPNP_AP3P)
        except cv2.error:
            continue
        if not ok_flag:
            continue
        for rvec, tvec in zip(rvecs, tvecs):
            Rm, _ = cv2.Rodrigues(rvec)
            err = _reprojection_errors(px, P, K, Rm, tvec.reshape(3))
            mask = err < threshold_px
            count = int(mask.sum())
            if count > best_count:
                best_count = count
                best_mask = mask
                best_R, best_t = Rm, tvec.reshape(3)
                w = count / n
                if w > 0:
                    denom = np.log(max(1.0 - w ** 4, 1e-12))
                    needed = int(np.ceil(np.log(0.001) / denom)) if denom < 0 else iters
    if best_mask is None or best_count < min_inliers:
        raise NoConsensus(f"best consensus {best_count} < min_inliers {min_inliers}")

    pose = PoseSE3(best_R, best_t)
    pose = refine_pose_reprojection(px[best_mask], P[best_mask], K, pose)
    err = _reprojection_errors(px, P, K, pose.R, pose.t)
    final_mask = err < threshold_px
    if final_mask.sum() < best_count:
        final_mask = best_mask
    inliers = np.sort(order[final_mask])
    return pose, inliers


def estimate_initial_guess(cloud, camera_image, K, params,
                           matcher_backend="builtin", matches_dir=None,
                           render_params=None):
    """Two-stage initial guess: yaw sweep, then re-render and re-match.

    Returns (pose, diagnostics). Raises NoYawSucceeded when no sampled yaw
    reaches min_inliers after PnP-RANSAC.
    """
    if render_params is None:
        render_params = RenderParams()
    diagnostics = {"yaws": [], "stage2": None}

    def match_for(view, tag):
        if matcher_backend == "external_file":
            if matches_dir is None:
                raise BackendUnavailable("external matcher needs --matches-dir")
            path = f"{matches_dir}/{tag}.txt"
            import os
            if not os.path.exists(path):
                return None
            return match_features(view.image, camera_image, "external_file",
                                  matches_path=path)
        return match_features(view.image, camera_image, "builtin")

    stage1 = None
    for k, pose in enumerate(sample_yaw_poses(params)):
        view = render_view(cloud, K, pose, render_params)
        matches = match_for(view, f"yaw_{k}")
        if matches is None:
            diagnostics["yaws"].append({"yaw": k, "matches": 0, "corrs": 0,
                                        "inliers": 0, "note": "no match file"})
            continue
        corrs = lift_matches(matches, view)
        entry = {"yaw": k, "matches": int(len(matches)), "corrs": len(corrs),
                 "inliers": 0}
        if len(corrs) >= 4:
            try:
                est, inliers = solve_pnp_ransac(
                    corrs, K, threshold_px=params.ransac_threshold_px,
                    iters=params.ransac_iters, min_inliers=params.min_inliers,
                    rng=np.random.default_rng([params.seed, k]))
                entry["inliers"] = int(len(inliers))
                stage1 = (est, len(inliers))
            except (NoConsensus, InsufficientCorrespondences):
                pass
        diagnostics["yaws"].append(entry)
        if stage1 is not None:
            break
    if stage1 is None:
        raise NoYawSucceeded("no sampled yaw produced enough PnP inliers")

    rough, count1 = stage1
    view2 = render_view(cloud, K, rough, render_params)
    matches2 = match_for(view2, "refined")
    if matches2 is not None:
        corrs2 = lift_matches(matches2, view2)
        diagnostics["stage2"] = {"matches": int(len(matches2)),
                                 "corrs": len(corrs2), "inliers": 0}
        if len(corrs2) >= 4:
            try:
                est2, inliers2 = solve_pnp_ransac(
                    corrs2, K, threshold_px=params.ransac_threshold_px,
                    iters=params.ransac_iters, min_inliers=params.min_inliers,
                    rng=np.random.default_rng([params.seed, 10_000]))
                diagnostics["stage2"]["inliers"] = int(len(inliers2))
                if len(inliers2) >= count1:
                    return est2, diagnostics
            except (NoConsensus, InsufficientCorrespondences):
                pass
    log.info("stage-2 refinement did not improve; keeping stage-1 pose")
    return rough, diagnostics
