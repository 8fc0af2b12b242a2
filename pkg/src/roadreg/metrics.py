"""Evaluation metrics and pixel-to-3D lookup on a registered view."""

from dataclasses import dataclass

import numpy as np

from .errors import NoCorrespondence


@dataclass(frozen=True)
class PoseError:
    trans_err_m: float   # mean of per-axis absolute translation errors
    rot_err_deg: float   # mean of absolute roll/pitch/yaw differences
    geodesic_deg: float  # convention-free rotation angle


@dataclass(frozen=True)
class DistanceError:
    r: np.ndarray        # normalized error per pair
    max_pct: float
    median_pct: float
    rmse_pct: float


def _euler_zyx_deg(R):
    """(yaw, pitch, roll) of R = Rz(yaw) @ Ry(pitch) @ Rx(roll), degrees."""
    pitch = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    if abs(abs(R[2, 0]) - 1.0) < 1e-12:
        # gimbal lock: fold roll into yaw
        yaw = np.arctan2(-R[0, 1], R[1, 1])
        roll = 0.0
    else:
        yaw = np.arctan2(R[1, 0], R[0, 0])
        roll = np.arctan2(R[2, 1], R[2, 2])
    return np.degrees([yaw, pitch, roll])


def _wrap_deg(a):
    return (a + 180.0) % 360.0 - 180.0


def pose_error(est, gt):
    """Translation/rotation error between two poses."""
    trans = float(np.mean(np.abs(est.t - gt.t)))
    R_rel = gt.R.T @ est.R
    angles = _euler_zyx_deg(R_rel)
    rot = float(np.mean(np.abs(_wrap_deg(angles))))
    cos_g = np.clip((np.trace(R_rel) - 1.0) / 2.0, -1.0, 1.0)
    geodesic = float(np.degrees(np.arccos(cos_g)))
    return PoseError(trans, rot, geodesic)


def locate_3d(pixel, view, radius=7):
    """World point seen at a pixel; falls back to the nearest shaded pixel
    within `radius` px when the pixel itself is a rendering hole."""
    u, v = int(round(pixel[0])), int(round(pixel[1]))
    h, w = view.valid.shape
    if not (0 <= u < w and 0 <= v < h):
        raise NoCorrespondence("pixel out of bounds")
    if view.valid[v, u]:
        return view.correspondence[v, u].copy()
    u0, u1 = max(0, u - radius), min(w, u + radius + 1)
    v0, v1 = max(0, v - radius), min(h, v + radius + 1)
    sub = view.valid[v0:v1, u0:u1]
    if not sub.any():
        raise NoCorrespondence(f"no shaded pixel within {radius} px")
    vs, us = np.nonzero(sub)
    d2 = (us + u0 - u) ** 2 + (vs + v0 - v) ** 2
    best = np.argmin(d2)
    if d2[best] > radius * radius:
        raise NoCorrespondence(f"no shaded pixel within {radius} px")
    return view.correspondence[vs[best] + v0, us[best] + u0].copy()


def ground_distance_errors(pixel_pairs, view, gt_distances):
    """Normalized distance errors r = |d_est - d_gt| / d_gt for pixel pairs.

    Each pair of pixels is lifted to 3D through the view's correspondence
    map; the Euclidean distance between the lifted points is compared with
    the ground-truth distance. Summary statistics are in percent.
    """
    gt = np.asarray(gt_distances, dtype=float).reshape(-1)
    pairs = np.asarray(pixel_pairs, dtype=float).reshape(-1, 2, 2)
    if pairs.shape[0] != gt.shape[0]:
        raise ValueError("pixel pair and distance counts differ")
    r = np.empty(gt.shape[0])
    for i, ((ua, va), (ub, vb)) in enumerate(pairs):
        Pa = locate_3d((ua, va), view)
        Pb = locate_3d((ub, vb), view)
        d_est = float(np.linalg.norm(Pa - Pb))
        r[i] = abs(d_est - gt[i]) / gt[i]
    return DistanceError(r,
                         max_pct=float(100.0 * r.max()),
                         median_pct=float(100.0 * np.median(r)),
                         rmse_pct=float(100.0 * np.sqrt(np.mean(r ** 2))))
