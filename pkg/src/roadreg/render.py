"""Neighbor rendering: synthesize a grayscale view from a point cloud while
keeping, for every shaded pixel, the 3D world point it depicts.

Pipeline per pixel: z-buffer survivors in a small window around the pixel,
distance-based foreground filtering, total-least-squares plane fit, ray-plane
intersection, and inverse-distance-style appearance weighting. The scalar
operations below define the semantics; render_view runs the same math
vectorized over the whole frame.
"""

from dataclasses import dataclass

import numpy as np

from .core import PoseSE3, Plane, Ray, pixel_ray
from .errors import DegenerateGeometry, NegativeDepth, ParallelRay
from .pcio import ImageGray


@dataclass(frozen=True)
class RenderParams:
    window: int = 5           # odd neighbor window size
    xi: float = 0.1           # foreground distance threshold, meters
    min_foreground: int = 3   # below this, fall back to the nearest point

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.xi <= 0:
            raise ValueError("xi must be positive")
        if self.min_foreground < 1:
            raise ValueError("min_foreground must be >= 1")


@dataclass
class ReorganizedCloud:
    """Z-buffer result: at most one (closest) point per pixel."""

    width: int
    height: int
    occupied: np.ndarray   # (H, W) bool
    depth: np.ndarray      # (H, W) camera-frame z of the winner
    index: np.ndarray      # (H, W) winning point index
    point_cam: np.ndarray  # (H, W, 3) camera-frame coordinates
    value: np.ndarray      # (H, W) scalar appearance

    def slot(self, pixel):
        u, v = int(pixel[0]), int(pixel[1])
        if not self.occupied[v, u]:
            return None
        return (int(self.index[v, u]), float(self.depth[v, u]),
                self.point_cam[v, u].copy(), float(self.value[v, u]))


@dataclass
class NeighborSet:
    """Z-buffer points gathered from the window around one pixel."""

    pixel: tuple
    points_cam: np.ndarray  # (n, 3)
    values: np.ndarray      # (n,)
    dists: np.ndarray       # (n,) distance to camera
    flags: np.ndarray = None  # (n,) bool foreground flags

    @property
    def count(self):
        return self.points_cam.shape[0]


@dataclass
class RenderedView:
    image: ImageGray
    depth: np.ndarray           # (H, W), nan at holes
    correspondence: np.ndarray  # (H, W, 3) world frame, nan at holes
    valid: np.ndarray           # (H, W) bool
    pose: PoseSE3
    intrinsics: object

    def lookup(self, pixel):
        """World point for a pixel, or None if it is a hole."""
        u, v = int(round(pixel[0])), int(round(pixel[1]))
        if not (0 <= u < self.image.width and 0 <= v < self.image.height):
            return None
        if not self.valid[v, u]:
            return None
        return self.correspondence[v, u].copy()


def project_zbuffer(cloud, K, T):
    """Project all points and keep the closest one per pixel.

    Equal depths break ties toward the smaller point index, so the result
    does not depend on input traversal order.
    """
    w, h = K.width, K.height
    X = cloud.points @ T.R.T + T.t
    z = X[:, 2]
    vis = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        iu = np.rint(K.fx * X[:, 0] / z + K.cx).astype(np.int64)
        iv = np.rint(K.fy * X[:, 1] / z + K.cy).astype(np.int64)
    vis &= (iu >= 0) & (iu < w) & (iv >= 0) & (iv < h)

    occ = np.zeros((h, w), dtype=bool)
    depth = np.full((h, w), np.inf)
    index = np.full((h, w), -1, dtype=np.int64)
    pcam = np.zeros((h, w, 3))
    value = np.zeros((h, w))

    ids = np.flatnonzero(vis)
    if ids.size:
        pid = iv[ids] * w + iu[ids]
        order = np.lexsort((ids, z[ids], pid))
        pid_sorted = pid[order]
        firsts = order[np.flatnonzero(np.r_[True, pid_sorted[1:] != pid_sorted[:-1]])]
        win = ids[firsts]
        gray = cloud.gray()
        occ[iv[win], iu[win]] = True
        depth[iv[win], iu[win]] = z[win]
        index[iv[win], iu[win]] = win
        pcam[iv[win], iu[win]] = X[win]
        value[iv[win], iu[win]] = gray[win]
    return ReorganizedCloud(w, h, occ, depth, index, pcam, value)


def naive_image(reorg):
    """Direct z-buffer projection image (the no-neighbor-rendering baseline)."""
    img = np.where(reorg.occupied, reorg.value, 0.0)
    depth = np.where(reorg.occupied, reorg.depth, np.nan)
    return ImageGray(reorg.width, reorg.height, img), depth


def gather_neighbors(reorg, pixel, window):
    """Occupied z-buffer slots in the window centered on the pixel."""
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    u, v = int(pixel[0]), int(pixel[1])
    if not (0 <= u < reorg.width and 0 <= v < reorg.height):
        raise ValueError("pixel out of bounds")
    r = window // 2
    pts, vals, dists = [], [], []
    for dv in range(-r, r + 1):
        for du in range(-r, r + 1):
            uu, vv = u + du, v + dv
            if not (0 <= uu < reorg.width and 0 <= vv < reorg.height):
                continue
            if not reorg.occupied[vv, uu]:
                continue
            p = reorg.point_cam[vv, uu]
            pts.append(p)
            vals.append(reorg.value[vv, uu])
            dists.append(np.linalg.norm(p))
    return NeighborSet((u, v),
                       np.array(pts, dtype=float).reshape(-1, 3),
                       np.array(vals, dtype=float),
                       np.array(dists, dtype=float))


def filter_foreground(neighbors, xi):
    """Flag points within xi of the closest neighbor as foreground."""
    if neighbors.count == 0:
        raise ValueError("empty neighbor set")
    if xi <= 0:
        raise ValueError("xi must be positive")
    flags = neighbors.dists - neighbors.dists.min() <= xi
    return flags


def fit_plane(points):
    """Total-least-squares plane through >= 3 camera-frame points."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise ValueError("plane fit needs at least 3 points")
    centroid = pts.mean(axis=0)
    q = pts - centroid
    cov = (q.T @ q) / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    if evals[2] <= 0 or evals[1] < 1e-12 * evals[2]:
        raise DegenerateGeometry("points are (near-)collinear")
    n = evecs[:, 0]
    n = n / np.linalg.norm(n)
    d = -float(n @ centroid)
    return Plane(float(n[0]), float(n[1]), float(n[2]), d)


def intersect_ray_plane(ray, plane):
    """Intersection of a camera ray with a plane; must be in front."""
    n = plane.normal
    denom = float(n @ ray.direction)
    if abs(denom) <= 1e-9:
        raise ParallelRay("ray is parallel to the plane")
    s = -(plane.d + float(n @ ray.origin)) / denom
    if s <= 0:
        raise NegativeDepth("intersection lies behind the camera")
    return ray.origin + s * ray.direction


def shade_pixel(neighbors, P_i, xi):
    """Weighted appearance of foreground neighbors, per the rendering weights.

    Weight of point j: (xi + min_m d_m - d_j) / exp(|P_j - P_i|), summed over
    foreground points only. The output is clamped to [0, 1].
    """
    if neighbors.flags is None:
        raise ValueError("neighbor set has no foreground flags")
    fg = neighbors.flags
    if not fg.any():
        raise ValueError("no foreground points to shade from")
    dmin = neighbors.dists.min()
    P_i = np.asarray(P_i, dtype=float).reshape(3)
    D = np.linalg.norm(neighbors.points_cam[fg] - P_i, axis=1)
    w = (xi + dmin - neighbors.dists[fg]) / np.exp(D)
    v = float((w * neighbors.values[fg]).sum() / w.sum())
    return min(max(v, 0.0), 1.0)


def _ray_directions(K):
    """Normalized per-pixel ray directions, (H, W, 3)."""
    us = np.arange(K.width, dtype=float)
    vs = np.arange(K.height, dtype=float)
    x = (us - K.cx) / K.fx
    y = (vs - K.cy) / K.fy
    d = np.empty((K.height, K.width, 3))
    d[:, :, 0] = x[None, :]
    d[:, :, 1] = y[:, None]
    d[:, :, 2] = 1.0
    d /= np.linalg.norm(d, axis=2, keepdims=True)
    return d


def render_view(cloud, K, T, params=RenderParams()):
    """Render a full view with per-pixel 2D-3D correspondence.

    Pixels with >= min_foreground foreground neighbors get a plane-fit /
    ray-intersection correspondence and weighted shading; pixels with fewer
    (or a degenerate local plane) reuse the nearest foreground point; empty
    windows stay holes.
    """
    from ._render_kernel import render_kernel

    w, h = K.width, K.height
    reorg = project_zbuffer(cloud, K, T)
    dist = np.where(reorg.occupied,
                    np.linalg.norm(reorg.point_cam, axis=2), np.inf)
    dirs = _ray_directions(K)
    image, P_i, shaded = render_kernel(reorg.occupied, dist, reorg.point_cam,
                                       reorg.value, dirs, params.window,
                                       params.xi, params.min_foreground)
    depth = np.where(shaded, P_i[:, :, 2], np.nan)
    corr_world = (P_i.reshape(-1, 3) - T.t) @ T.R
    corr_world = corr_world.reshape(h, w, 3)
    corr_world[~shaded] = np.nan
    image = np.where(shaded, image, 0.0)
    return RenderedView(ImageGray(w, h, image), depth, corr_world, shaded, T, K)


def render_pixel(reorg, K, T, pixel, params=RenderParams()):
    """Scalar reference for one pixel; returns (value, P_world) or None.

    Matches render_view semantics; used for spot checks and small scenes.
    """
    ns = gather_neighbors(reorg, pixel, params.window)
    if ns.count == 0:
        return None
    flags = filter_foreground(ns, params.xi)
    ns.flags = flags
    nfg = int(flags.sum())
    ray = pixel_ray(K, pixel)
    P_cam = None
    if nfg >= max(params.min_foreground, 3):
        try:
            plane = fit_plane(ns.points_cam[flags])
            P_cam = intersect_ray_plane(ray, plane)
            value = shade_pixel(ns, P_cam, params.xi)
            if not np.isfinite(value):  # all weights underflowed
                P_cam = None
        except (DegenerateGeometry, ParallelRay, NegativeDepth):
            P_cam = None
    if P_cam is None:
        j = int(np.argmin(np.where(flags, ns.dists, np.inf)))
        P_cam = ray.direction * (ns.points_cam[j][2] / ray.direction[2])
        value = float(ns.values[j])
    P_world = T.R.T @ (P_cam - T.t)
    return value, P_world
