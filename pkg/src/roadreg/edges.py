"""Edge features: 2D extraction, lifting to 3D through a rendered view,
arc-length resampling, and a spatial index over image edge pixels.

The builtin detector is Canny-style but thresholds on percentiles of the
gradient-magnitude distribution instead of absolute values, so one setting
works across images with very different contrast. Segmentation masks
produced offline can be supplied instead; their boundary pixels become the
edge set.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DimensionMismatch, EmptyEdgeSet

_NEIGHBORS8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass
class EdgeSet2D:
    pixels: np.ndarray     # (n, 2) float (u, v)
    chain_ids: np.ndarray  # (n,) int, grouping pixels into ordered curves

    @property
    def count(self):
        return self.pixels.shape[0]

    def chains(self):
        """Ordered pixel runs, one (m, 2) array per chain id."""
        out = []
        for cid in np.unique(self.chain_ids):
            out.append(self.pixels[self.chain_ids == cid])
        return out


@dataclass
class EdgeSet3D:
    samples: np.ndarray    # (n, 3) world frame
    chain_ids: np.ndarray  # (n,)

    @property
    def count(self):
        return self.samples.shape[0]

    def chains(self):
        out = []
        for cid in np.unique(self.chain_ids):
            out.append(self.samples[self.chain_ids == cid])
        return out


@dataclass(frozen=True)
class EdgeParams:
    backend: str = "builtin"     # builtin | mask
    sigma: float = 1.4
    high_percentile: float = 92.0
    low_percentile: float = 80.0
    spacing: float = 0.2         # 3D resampling step, meters
    depth_gap: float = 0.5       # chain split threshold, meters
    min_chain_pixels: int = 8    # discard shorter 2D chains as noise


def _trace_chains(mask):
    """Order 8-connected edge pixels into chains; junctions break chains."""
    h, w = mask.shape
    vs, us = np.nonzero(mask)
    pixset = set(zip(us.tolist(), vs.tolist()))

    def neighbors(p):
        u, v = p
        return [(u + du, v + dv) for dv, du in _NEIGHBORS8
                if (u + du, v + dv) in pixset]

    degree = {p: len(neighbors(p)) for p in pixset}
    visited = set()
    chains = []

    def walk(start):
        chain = [start]
        visited.add(start)
        cur = start
        while True:
            nxt = [q for q in neighbors(cur) if q not in visited]
            if not nxt:
                break
            # prefer the neighbor continuing the current direction
            if len(chain) >= 2:
                du, dv = cur[0] - chain[-2][0], cur[1] - chain[-2][1]
                nxt.sort(key=lambda q: -((q[0] - cur[0]) * du + (q[1] - cur[1]) * dv))
            cur = nxt[0]
            chain.append(cur)
            visited.add(cur)
            if degree[cur] > 2:
                break
        return chain

    endpoints = sorted(p for p in pixset if degree[p] <= 1)
    for p in endpoints:
        if p not in visited:
            chains.append(walk(p))
    for p in sorted(pixset):
        if p not in visited:
            chains.append(walk(p))
    return chains


def _chains_to_set(chains, min_pixels=1):
    pixels = []
    ids = []
    cid = 0
    for ch in chains:
        if len(ch) < min_pixels:
            continue
        pixels.extend(ch)
        ids.extend([cid] * len(ch))
        cid += 1
    if not pixels:
        return EdgeSet2D(np.empty((0, 2)), np.empty(0, dtype=int))
    return EdgeSet2D(np.array(pixels, dtype=float), np.array(ids, dtype=int))


def _canny_percentile(image, sigma, high_pct, low_pct):
    img = ndimage.gaussian_filter(image.pixels, sigma)
    gx = ndimage.sobel(img, axis=1)
    gy = ndimage.sobel(img, axis=0)
    mag = np.hypot(gx, gy)
    active = mag[mag > 1e-12]
    if active.size == 0:
        return np.zeros_like(mag, dtype=bool)
    high = np.percentile(active, high_pct)
    low = np.percentile(active, low_pct)

    # non-maximum suppression over 4 quantized directions
    angle = np.arctan2(gy, gx)
    q = np.rint(angle / (np.pi / 4.0)).astype(int) % 4
    pad = np.pad(mag, 1, mode="constant")
    h, w = mag.shape
    shift = lambda dv, du: pad[1 + dv:1 + dv + h, 1 + du:1 + du + w]
    nms = np.zeros_like(mag, dtype=bool)
    # q: 0 = horizontal gradient (vertical edge), 1 = diag, 2 = vertical, 3 = anti-diag
    cmp_pairs = {0: ((0, 1), (0, -1)), 1: ((1, 1), (-1, -1)),
                 2: ((1, 0), (-1, 0)), 3: ((1, -1), (-1, 1))}
    for qi, (d1, d2) in cmp_pairs.items():
        sel = q == qi
        nms |= sel & (mag >= shift(*d1)) & (mag > shift(*d2))
    nms &= mag > 1e-12

    strong = nms & (mag >= high)
    weak = nms & (mag >= low)
    lbl, nlbl = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if nlbl == 0:
        return np.zeros_like(mag, dtype=bool)
    keep = np.zeros(nlbl + 1, dtype=bool)
    keep[np.unique(lbl[strong])] = True
    keep[0] = False
    return keep[lbl]


def _mask_boundary(mask):
    """Mask pixels with at least one zero 4-neighbor (outside counts as 0)."""
    m = mask.astype(bool)
    pad = np.pad(m, 1, mode="constant", constant_values=False)
    h, w = m.shape
    interior = (pad[:h, 1:1 + w] & pad[2:, 1:1 + w]
                & pad[1:1 + h, :w] & pad[1:1 + h, 2:])
    return m & ~interior


def extract_edges_2d(image, params=EdgeParams(), mask=None):
    """Edge pixels of an image, grouped into ordered chains.

    backend 'builtin' runs the percentile-threshold Canny; backend 'mask'
    takes the boundary of a supplied binary mask of matching size.
    """
    if params.backend == "mask":
        if mask is None:
            raise ValueError("mask backend requires a mask")
        if (mask.width, mask.height) != (image.width, image.height):
            raise DimensionMismatch(
                f"mask {mask.width}x{mask.height} vs image {image.width}x{image.height}")
        binary = _mask_boundary(mask.pixels)
        min_pixels = 1
    elif params.backend == "builtin":
        binary = _canny_percentile(image, params.sigma,
                                   params.high_percentile, params.low_percentile)
        min_pixels = params.min_chain_pixels
    else:
        raise ValueError(f"unknown edge backend '{params.backend}'")
    return _chains_to_set(_trace_chains(binary), min_pixels)


def lift_edges_3d(edges2d, view, depth_gap=0.5):
    """World points for edge pixels of a rendered view, split at depth jumps.

    Pixels without a correspondence are dropped; chains are additionally cut
    wherever consecutive lifted points are more than depth_gap apart, so
    silhouette chains do not bridge foreground and background.
    """
    samples = []
    ids = []
    next_id = 0
    for chain in edges2d.chains():
        cur = []
        for (u, v) in chain:
            P = view.lookup((u, v))
            if P is None:
                continue
            if cur and np.linalg.norm(P - cur[-1]) > depth_gap:
                samples.extend(cur)
                ids.extend([next_id] * len(cur))
                next_id += 1
                cur = []
            cur.append(P)
        if cur:
            samples.extend(cur)
            ids.extend([next_id] * len(cur))
            next_id += 1
    if not samples:
        return EdgeSet3D(np.empty((0, 3)), np.empty(0, dtype=int))
    return EdgeSet3D(np.array(samples, dtype=float), np.array(ids, dtype=int))


def sample_edge_points(edges3d, spacing):
    """Arc-length resampling of each 3D chain at a fixed spacing.

    Chains shorter than one spacing contribute their midpoint.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    samples = []
    ids = []
    for cid, chain in zip(np.unique(edges3d.chain_ids), edges3d.chains()):
        if len(chain) == 1:
            samples.append(chain[0])
            ids.append(cid)
            continue
        seg = np.linalg.norm(np.diff(chain, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        total = arc[-1]

        def interp(s):
            j = np.searchsorted(arc, s, side="right") - 1
            j = min(max(j, 0), len(seg) - 1)
            frac = (s - arc[j]) / seg[j] if seg[j] > 0 else 0.0
            return chain[j] + frac * (chain[j + 1] - chain[j])

        if total < spacing:
            samples.append(interp(total / 2.0))
            ids.append(cid)
            continue
        stops = np.arange(0.0, total, spacing)
        if total - stops[-1] > 1e-9:
            stops = np.append(stops, total)
        for s in stops:
            samples.append(interp(s))
            ids.append(cid)
    if not samples:
        return EdgeSet3D(np.empty((0, 3)), np.empty(0, dtype=int))
    return EdgeSet3D(np.array(samples, dtype=float), np.array(ids, dtype=int))


class EdgeIndex:
    """k-nearest-neighbor index over camera-image edge pixels."""

    def __init__(self, pixels):
        pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
        if pixels.shape[0] == 0:
            raise EmptyEdgeSet("cannot index an empty edge set")
        self.pixels = pixels
        self._tree = cKDTree(pixels)

    def query(self, point, k):
        """k nearest edge pixels (clamped to set size), sorted by distance.

        Returns (distances, pixels (k, 2)).
        """
        k = min(k, self.pixels.shape[0])
        dist, idx = self._tree.query(np.asarray(point, dtype=float), k=k)
        dist = np.atleast_1d(dist)
        idx = np.atleast_1d(idx)
        return dist, self.pixels[idx]

    def query_batch(self, points, k):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        k = min(k, self.pixels.shape[0])
        dist, idx = self._tree.query(pts, k=k)
        if k == 1:
            dist = dist[:, None]
            idx = idx[:, None]
        return dist, self.pixels[idx]


def build_edge_index(edges2d):
    """Spatial index over the pixels of an EdgeSet2D."""
    return EdgeIndex(edges2d.pixels)
