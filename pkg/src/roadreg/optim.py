"""Pose refinement by point-to-line reprojection error on SE(3).

Sampled 3D edge points are projected with the current pose estimate; each
projection is associated with a short local line model fitted to its nearest
image edge pixels, and the signed normal distance is minimized with
Levenberg-Marquardt over a 6-vector twist applied on the left of the pose.
Associations are refreshed every outer iteration.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import (PoseSE3, Twist, boxplus, pose_point_jacobian,
                   projection_jacobian)
from .errors import DegeneratePixels, DivergedPose, NoAssociations


@dataclass(frozen=True)
class LineLocalModel:
    """Local line through edge pixels: anchor q0 plus unit normal n."""

    q0: np.ndarray  # (2,) anchor pixel
    n: np.ndarray   # (2,) unit normal

    def __post_init__(self):
        q0 = np.asarray(self.q0, dtype=float).reshape(2)
        n = np.asarray(self.n, dtype=float).reshape(2)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("line normal must be unit norm")
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "n", n)


@dataclass(frozen=True)
class OptimizeParams:
    M: int = 10                   # neighbors per projected point
    max_iterations: int = 50
    lambda_init: float = 1e-3
    convergence_tol: float = 1e-8
    huber_delta_px: float = 2.0
    max_assoc_dist_px: float = 30.0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if min(self.max_iterations, self.lambda_init, self.convergence_tol,
               self.huber_delta_px, self.max_assoc_dist_px) <= 0:
            raise ValueError("all tolerances must be positive")


@dataclass
class RegistrationResult:
    pose: PoseSE3
    iterations: int
    residual_rms: list = field(default_factory=list)    # px, per iteration
    active_residuals: list = field(default_factory=list)
    converged: bool = False


def fit_line_model(neighbors):
    """PCA line through >= 2 pixels sorted by distance to the query.

    The normal is the minor eigenvector of the 2x2 centered covariance; the
    anchor is the first (nearest) neighbor. The normal sign is canonicalized
    to n.x > 0, or n.y > 0 when n.x == 0.
    """
    pts = np.asarray(neighbors, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 2:
        raise ValueError("line fit needs at least 2 pixels")
    q = pts - pts.mean(axis=0)
    cov = (q.T @ q) / pts.shape[0]
    if np.allclose(cov, 0.0, atol=1e-15):
        raise DegeneratePixels("all pixels identical")
    evals, evecs = np.linalg.eigh(cov)
    n = evecs[:, 0]
    if n[0] < 0 or (n[0] == 0 and n[1] < 0):
        n = -n
    return LineLocalModel(pts[0], n / np.linalg.norm(n))


def point_line_residual(model, p):
    """Signed distance from p to the line, along the normal, in pixels."""
    p = np.asarray(p, dtype=float).reshape(2)
    return float(model.n @ (p - model.q0))


def associate(edges3d, index, K, Tbar, M=10, max_assoc_dist=30.0):
    """Match each projected 3D edge sample to a local image line model.

    Returns a list of (P_world, LineLocalModel). Samples behind the camera
    or out of frame, anchors beyond max_assoc_dist, and degenerate pixel
    sets are all skipped; an empty result raises NoAssociations.
    """
    P = np.asarray(edges3d.samples, dtype=float).reshape(-1, 3)
    if P.shape[0] == 0:
        raise NoAssociations("no 3D edge samples")
    X = P @ Tbar.R.T + Tbar.t
    z = X[:, 2]
    ok = z > 0
    u = np.empty_like(z)
    v = np.empty_like(z)
    u[ok] = K.fx * X[ok, 0] / z[ok] + K.cx
    v[ok] = K.fy * X[ok, 1] / z[ok] + K.cy
    ok &= np.where(ok, (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height), False)
    ids = np.flatnonzero(ok)
    out = []
    if ids.size:
        dists, neigh = index.query_batch(np.stack([u[ids], v[ids]], axis=1), M)
        near = dists[:, 0] <= max_assoc_dist
        q = neigh - neigh.mean(axis=1, keepdims=True)
        cov = np.einsum("nki,nkj->nij", q, q) / neigh.shape[1]
        nondegen = np.abs(cov).max(axis=(1, 2)) > 1e-15
        keep = np.flatnonzero(near & nondegen)
        if keep.size:
            _, evecs = np.linalg.eigh(cov[keep])
            normals = evecs[:, :, 0]
            flip = (normals[:, 0] < 0) | ((normals[:, 0] == 0) & (normals[:, 1] < 0))
            normals[flip] = -normals[flip]
            for row, n in zip(keep, normals):
                out.append((P[ids[row]],
                            LineLocalModel(neigh[row, 0], n)))
    if not out:
        raise NoAssociations("no valid point-to-line associations")
    return out


def _residuals_and_jacobian(assocs, K, T, with_jacobian=True):
    """Stacked signed residuals (and 6-dof Jacobian) at pose T.

    Associations whose point falls behind the camera contribute nothing.
    """
    P = np.array([a[0] for a in assocs]).reshape(-1, 3)
    n = np.array([a[1].n for a in assocs]).reshape(-1, 2)
    q0 = np.array([a[1].q0 for a in assocs]).reshape(-1, 2)
    X = P @ T.R.T + T.t
    front = X[:, 2] > 0
    X, n, q0 = X[front], n[front], q0[front]
    z = X[:, 2]
    p = np.stack([K.fx * X[:, 0] / z + K.cx, K.fy * X[:, 1] / z + K.cy], axis=1)
    r = np.einsum("ij,ij->i", n, p - q0)
    if not with_jacobian:
        return r, None
    # g = n^T dproj/dX; chain through the left-perturbation point Jacobian
    # [-skew(X) | I] gives rows [cross(X, g) | g]
    g = np.empty_like(X)
    g[:, 0] = n[:, 0] * K.fx / z
    g[:, 1] = n[:, 1] * K.fy / z
    g[:, 2] = -(n[:, 0] * K.fx * X[:, 0] + n[:, 1] * K.fy * X[:, 1]) / (z * z)
    J = np.hstack([np.cross(X, g), g])
    return r, J


def huber_cost(r, delta):
    a = np.abs(r)
    quad = a <= delta
    return float(np.sum(0.5 * r[quad] ** 2)
                 + np.sum(delta * (a[~quad] - 0.5 * delta)))


def _huber_weights(r, delta):
    a = np.abs(r)
    w = np.ones_like(r)
    big = a > delta
    w[big] = delta / a[big]
    return w


def optimize(edges3d, index, K, T0, params=OptimizeParams()):
    """Iteratively re-associate and take damped Gauss-Newton steps.

    Each outer iteration rebuilds associations at the current pose and then
    accepts at most one LM step (robust cost must decrease under the fixed
    association set). Raises NoAssociations when nothing projects near an
    edge, DivergedPose when the translation leaves a 10 m ball around T0.
    """
    T = T0
    result = RegistrationResult(pose=T0, iterations=0)
    lam = params.lambda_init
    for it in range(params.max_iterations):
        assocs = associate(edges3d, index, K, T,
                           M=params.M, max_assoc_dist=params.max_assoc_dist_px)
        r, J = _residuals_and_jacobian(assocs, K, T)
        if r.size == 0:
            raise NoAssociations("all associated points fell behind the camera")
        result.residual_rms.append(float(np.sqrt(np.mean(r ** 2))))
        result.active_residuals.append(int(r.size))
        result.iterations = it + 1

        w = _huber_weights(r, params.huber_delta_px)
        cost = huber_cost(r, params.huber_delta_px)
        JtJ = (J * w[:, None]).T @ J
        g = J.T @ (w * r)

        step = None
        for _ in range(10):
            try:
                delta = np.linalg.solve(JtJ + lam * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            T_new = boxplus(T, Twist(delta[:3], delta[3:]))
            r_new, _ = _residuals_and_jacobian(assocs, K, T_new, with_jacobian=False)
            if r_new.size and huber_cost(r_new, params.huber_delta_px) < cost:
                step = delta
                T = T_new
                lam = max(lam * 0.3, 1e-12)
                break
            lam *= 10.0
        if step is None:
            result.converged = True
            break
        if np.linalg.norm(T.t - T0.t) > 10.0:
            raise DivergedPose("translation moved more than 10 m from the start")
        if np.linalg.norm(step) < params.convergence_tol:
            result.converged = True
            break
    result.pose = T
    return result
