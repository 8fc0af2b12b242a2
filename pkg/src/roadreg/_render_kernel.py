"""Compiled per-pixel kernel behind render_view.

Same math as the scalar operations in render.py, fused into one pass per
pixel: window gather, foreground filter, plane fit (closed-form smallest
eigenvector of the 3x3 covariance), ray intersection, and weighted shading.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=False)
def _smallest_eigvec_sym3(a00, a01, a02, a11, a12, a22):
    """Eigen-decomposition of a symmetric 3x3; returns (l0, l1, l2, v0).

    l0 <= l1 <= l2; v0 is the (unnormalized) eigenvector of l0.
    """
    q = (a00 + a11 + a22) / 3.0
    b00 = a00 - q
    b11 = a11 - q
    b22 = a22 - q
    p2 = (b00 * b00 + b11 * b11 + b22 * b22
          + 2.0 * (a01 * a01 + a02 * a02 + a12 * a12))
    p = np.sqrt(p2 / 6.0)
    if p < 1e-300:
        return q, q, q, np.array([1.0, 0.0, 0.0])
    c00 = b00 / p
    c01 = a01 / p
    c02 = a02 / p
    c11 = b11 / p
    c12 = a12 / p
    c22 = b22 / p
    detc = (c00 * (c11 * c22 - c12 * c12)
            - c01 * (c01 * c22 - c12 * c02)
            + c02 * (c01 * c12 - c11 * c02))
    r = detc / 2.0
    if r <= -1.0:
        phi = np.pi / 3.0
    elif r >= 1.0:
        phi = 0.0
    else:
        phi = np.arccos(r) / 3.0
    l2 = q + 2.0 * p * np.cos(phi)
    l0 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    l1 = 3.0 * q - l0 - l2

    # eigenvector of l0: cross products of rows of (A - l0 I)
    r0 = np.array([a00 - l0, a01, a02])
    r1 = np.array([a01, a11 - l0, a12])
    r2 = np.array([a02, a12, a22 - l0])
    c0 = np.array([r0[1] * r1[2] - r0[2] * r1[1],
                   r0[2] * r1[0] - r0[0] * r1[2],
                   r0[0] * r1[1] - r0[1] * r1[0]])
    c1 = np.array([r0[1] * r2[2] - r0[2] * r2[1],
                   r0[2] * r2[0] - r0[0] * r2[2],
                   r0[0] * r2[1] - r0[1] * r2[0]])
    c2 = np.array([r1[1] * r2[2] - r1[2] * r2[1],
                   r1[2] * r2[0] - r1[0] * r2[2],
                   r1[0] * r2[1] - r1[1] * r2[0]])
    n0 = c0[0] * c0[0] + c0[1] * c0[1] + c0[2] * c0[2]
    n1 = c1[0] * c1[0] + c1[1] * c1[1] + c1[2] * c1[2]
    n2 = c2[0] * c2[0] + c2[1] * c2[1] + c2[2] * c2[2]
    best = c0
    nb = n0
    if n1 > nb:
        best = c1
        nb = n1
    if n2 > nb:
        best = c2
        nb = n2
    return l0, l1, l2, best


@njit(cache=True, fastmath=False)
def render_kernel(occ, dist, pcam, val, dirs, window, xi, min_fg):
    """Neighbor-render every pixel of a z-buffered frame.

    Returns (value (H,W), P_cam (H,W,3), shaded (H,W) bool).
    """
    h, w = occ.shape
    r = window // 2
    out_val = np.zeros((h, w))
    out_P = np.zeros((h, w, 3))
    shaded = np.zeros((h, w), np.bool_)
    plane_min = min_fg if min_fg > 3 else 3
    for vp in range(h):
        v0 = vp - r if vp - r > 0 else 0
        v1 = vp + r + 1 if vp + r + 1 < h else h
        for up in range(w):
            u0 = up - r if up - r > 0 else 0
            u1 = up + r + 1 if up + r + 1 < w else w
            # pass 1: nearest occupied slot
            dmin = np.inf
            near_z = 0.0
            near_val = 0.0
            for vv in range(v0, v1):
                for uu in range(u0, u1):
                    if occ[vv, uu] and dist[vv, uu] < dmin:
                        dmin = dist[vv, uu]
                        near_z = pcam[vv, uu, 2]
                        near_val = val[vv, uu]
            if dmin == np.inf:
                continue
            shaded[vp, up] = True
            dx = dirs[vp, up, 0]
            dy = dirs[vp, up, 1]
            dz = dirs[vp, up, 2]
            ax = dx * dmin
            ay = dy * dmin
            az = dz * dmin
            # pass 2: foreground count and mean (relative to the anchor)
            nfg = 0
            sx = sy = sz = 0.0
            for vv in range(v0, v1):
                for uu in range(u0, u1):
                    if occ[vv, uu] and dist[vv, uu] - dmin <= xi:
                        nfg += 1
                        sx += pcam[vv, uu, 0] - ax
                        sy += pcam[vv, uu, 1] - ay
                        sz += pcam[vv, uu, 2] - az
            plane_ok = False
            px = py = pz = 0.0
            if nfg >= plane_min:
                inv = 1.0 / nfg
                mx = sx * inv
                my = sy * inv
                mz = sz * inv
                # centered second moments (two passes keep tiny eigenvalues
                # meaningful for the degeneracy test)
                c00 = c01 = c02 = c11 = c12 = c22 = 0.0
                for vv in range(v0, v1):
                    for uu in range(u0, u1):
                        if occ[vv, uu] and dist[vv, uu] - dmin <= xi:
                            rx = pcam[vv, uu, 0] - ax - mx
                            ry = pcam[vv, uu, 1] - ay - my
                            rz = pcam[vv, uu, 2] - az - mz
                            c00 += rx * rx
                            c01 += rx * ry
                            c02 += rx * rz
                            c11 += ry * ry
                            c12 += ry * rz
                            c22 += rz * rz
                c00 *= inv
                c01 *= inv
                c02 *= inv
                c11 *= inv
                c12 *= inv
                c22 *= inv
                l0, l1, l2, nvec = _smallest_eigvec_sym3(c00, c01, c02, c11, c12, c22)
                if l1 < 1e-6 * l2:
                    # the closed-form solver loses ~sqrt(eps) accuracy when
                    # the two small eigenvalues coincide; let LAPACK decide
                    # near-collinear cases
                    A = np.empty((3, 3))
                    A[0, 0] = c00
                    A[0, 1] = A[1, 0] = c01
                    A[0, 2] = A[2, 0] = c02
                    A[1, 1] = c11
                    A[1, 2] = A[2, 1] = c12
                    A[2, 2] = c22
                    evals, evecs = np.linalg.eigh(A)
                    l0 = evals[0]
                    l1 = evals[1]
                    l2 = evals[2]
                    nvec = evecs[:, 0].copy()
                if l2 > 0.0 and l1 >= 1e-12 * l2:
                    nn = np.sqrt(nvec[0] ** 2 + nvec[1] ** 2 + nvec[2] ** 2)
                    if nn > 0.0:
                        nx = nvec[0] / nn
                        ny = nvec[1] / nn
                        nz = nvec[2] / nn
                        denom = nx * dx + ny * dy + nz * dz
                        if denom > 1e-9 or denom < -1e-9:
                            # plane passes through centroid = anchor + mean
                            s = (nx * (ax + mx) + ny * (ay + my) + nz * (az + mz)) / denom
                            if s > 0.0:
                                px = s * dx
                                py = s * dy
                                pz = s * dz
                                plane_ok = True
            if plane_ok:
                wsum = 0.0
                wvsum = 0.0
                for vv in range(v0, v1):
                    for uu in range(u0, u1):
                        if occ[vv, uu] and dist[vv, uu] - dmin <= xi:
                            ex = pcam[vv, uu, 0] - px
                            ey = pcam[vv, uu, 1] - py
                            ez = pcam[vv, uu, 2] - pz
                            D = np.sqrt(ex * ex + ey * ey + ez * ez)
                            wgt = (xi + dmin - dist[vv, uu]) / np.exp(D)
                            wsum += wgt
                            wvsum += wgt * val[vv, uu]
                # exp(D) overflows when the intersection is absurdly far
                # (near-grazing plane); treat that like a failed fit
                if wsum <= 0.0:
                    plane_ok = False
            if plane_ok:
                value = wvsum / wsum
                if value < 0.0:
                    value = 0.0
                elif value > 1.0:
                    value = 1.0
                out_val[vp, up] = value
                out_P[vp, up, 0] = px
                out_P[vp, up, 1] = py
                out_P[vp, up, 2] = pz
            else:
                # nearest foreground point's depth along the ray
                s = near_z / dz
                out_val[vp, up] = near_val
                out_P[vp, up, 0] = dx * s
                out_P[vp, up, 1] = dy * s
                out_P[vp, up, 2] = dz * s
    return out_val, out_P, shaded
