"""File I/O: point clouds, images, matches, masks, poses, overlays.

Only ASCII PLY/PCD and whitespace XYZ clouds are supported; images are
PGM/PPM (ascii or binary) plus PNG. Everything loads into plain numpy
containers normalized to [0, 1].
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from .core import CameraIntrinsics, PointCloud, PoseSE3
from .errors import BoundsError, EmptyCloud, ParseError

log = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ImageGray:
    width: int
    height: int
    pixels: np.ndarray  # (H, W) in [0,1]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.shape != (self.height, self.width):
            raise ValueError("pixel buffer shape must be (height, width)")
        if px.size and (px.min() < 0 or px.max() > 1):
            raise ValueError("pixel values must be in [0,1]")
        object.__setattr__(self, "pixels", px)

    @staticmethod
    def from_array(px):
        px = np.asarray(px, dtype=float)
        return ImageGray(px.shape[1], px.shape[0], px)


@dataclass(frozen=True)
class EdgeMask:
    width: int
    height: int
    pixels: np.ndarray  # (H, W) bool, True = edge

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=bool)
        if px.shape != (self.height, self.width):
            raise ValueError("mask shape must be (height, width)")
        object.__setattr__(self, "pixels", px)


def _drop_nan_rows(pts, extra):
    good = np.all(np.isfinite(pts), axis=1)
    dropped = int((~good).sum())
    if dropped:
        log.warning("dropped %d non-finite point rows", dropped)
    return pts[good], [e[good] for e in extra], dropped


def _normalize_intensity(raw):
    lo, hi = raw.min(), raw.max()
    if hi > lo:
        return (raw - lo) / (hi - lo)
    return np.zeros_like(raw)


def _make_cloud(pts, rgb=None, intensity=None):
    if pts.shape[0] == 0:
        raise EmptyCloud("no valid points in file")
    return PointCloud(pts, rgb=rgb, intensity=intensity)


def _load_ply(path):
    with open(path, "r") as f:
        if f.readline().strip() != "ply":
            raise ParseError("missing 'ply' magic")
        fmt = f.readline().split()
        if len(fmt) < 2 or fmt[0] != "format" or fmt[1] != "ascii":
            raise ParseError("only ascii PLY is supported")
        n = None
        props = []
        in_vertex = False
        while True:
            line = f.readline()
            if not line:
                raise ParseError("unterminated PLY header")
            tok = line.split()
            if not tok or tok[0] == "comment":
                continue
            if tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    n = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                props.append(tok[-1])
            elif tok[0] == "end_header":
                break
        if n is None:
            raise ParseError("no vertex element in PLY header")
        try:
            data = np.loadtxt(f, dtype=float, max_rows=n, ndmin=2) if n else np.empty((0, len(props)))
        except ValueError as e:
            raise ParseError(f"bad PLY record: {e}") from None
    if data.shape[0] != n or data.shape[1] < len(props):
        raise ParseError("PLY vertex count mismatch")
    col = {name: i for i, name in enumerate(props)}
    for axis in ("x", "y", "z"):
        if axis not in col:
            raise ParseError(f"PLY missing property {axis}")
    pts = data[:, [col["x"], col["y"], col["z"]]]
    if all(c in col for c in ("red", "green", "blue")):
        rgb = data[:, [col["red"], col["green"], col["blue"]]] / 255.0
        pts, (rgb,), _ = _drop_nan_rows(pts, [rgb])
        return _make_cloud(pts, rgb=np.clip(rgb, 0, 1))
    if "intensity" in col:
        inten = data[:, col["intensity"]]
        pts, (inten,), _ = _drop_nan_rows(pts, [inten])
        return _make_cloud(pts, intensity=_normalize_intensity(inten))
    pts, _, _ = _drop_nan_rows(pts, [])
    return _make_cloud(pts, intensity=np.full(pts.shape[0], 0.5))


def _load_pcd(path):
    with open(path, "r") as f:
        fields = None
        n = None
        while True:
            line = f.readline()
            if not line:
                raise ParseError("unterminated PCD header")
            tok = line.split()
            if not tok or tok[0] == "#":
                continue
            if tok[0] == "FIELDS":
                fields = tok[1:]
            elif tok[0] == "POINTS":
                n = int(tok[1])
            elif tok[0] == "DATA":
                if tok[1] != "ascii":
                    raise ParseError("only ascii PCD is supported")
                break
        if fields is None or n is None:
            raise ParseError("PCD header missing FIELDS or POINTS")
        try:
            data = np.loadtxt(f, dtype=float, max_rows=n, ndmin=2) if n else np.empty((0, len(fields)))
        except ValueError as e:
            raise ParseError(f"bad PCD record: {e}") from None
    if data.shape[0] != n or (n and data.shape[1] != len(fields)):
        raise ParseError("PCD point count mismatch")
    col = {name: i for i, name in enumerate(fields)}
    for axis in ("x", "y", "z"):
        if axis not in col:
            raise ParseError(f"PCD missing field {axis}")
    pts = data[:, [col["x"], col["y"], col["z"]]] if n else np.empty((0, 3))
    if all(c in col for c in ("r", "g", "b")):
        rgb = data[:, [col["r"], col["g"], col["b"]]] / 255.0
        pts, (rgb,), _ = _drop_nan_rows(pts, [rgb])
        return _make_cloud(pts, rgb=np.clip(rgb, 0, 1))
    if "intensity" in col:
        inten = data[:, col["intensity"]]
        pts, (inten,), _ = _drop_nan_rows(pts, [inten])
        return _make_cloud(pts, intensity=_normalize_intensity(inten))
    pts, _, _ = _drop_nan_rows(pts, [])
    return _make_cloud(pts, intensity=np.full(pts.shape[0], 0.5))


def _load_xyz(path):
    try:
        data = np.loadtxt(path, dtype=float, comments="#", ndmin=2)
    except ValueError as e:
        raise ParseError(f"bad XYZ record: {e}") from None
    if data.size == 0:
        raise EmptyCloud("no valid points in file")
    if data.shape[1] < 3:
        raise ParseError("XYZ rows need at least 3 columns")
    pts = data[:, :3]
    if data.shape[1] >= 6:
        rgb = data[:, 3:6]
        if rgb.max() > 1.0:
            rgb = rgb / 255.0
        pts, (rgb,), _ = _drop_nan_rows(pts, [rgb])
        return _make_cloud(pts, rgb=np.clip(rgb, 0, 1))
    if data.shape[1] >= 4:
        inten = data[:, 3]
        pts, (inten,), _ = _drop_nan_rows(pts, [inten])
        return _make_cloud(pts, intensity=_normalize_intensity(inten))
    pts, _, _ = _drop_nan_rows(pts, [])
    return _make_cloud(pts, intensity=np.full(pts.shape[0], 0.5))


def load_point_cloud(path, fmt=None):
    """Load a PLY/PCD/XYZ cloud; appearance is normalized into [0,1]."""
    path = str(path)
    if fmt is None:
        fmt = path.rsplit(".", 1)[-1].lower()
    loaders = {"ply": _load_ply, "pcd": _load_pcd, "xyz": _load_xyz}
    if fmt not in loaders:
        raise ParseError(f"unsupported point cloud format '{fmt}'")
    try:
        return loaders[fmt](path)
    except (OSError, UnicodeDecodeError) as e:
        raise ParseError(str(e)) from None


def _read_pnm_tokens(buf, count):
    """Pull `count` ascii tokens off the front of buf; returns (tokens, rest)."""
    tokens = []
    i = 0
    n = len(buf)
    while len(tokens) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < n and not buf[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ParseError("truncated PNM header")
        tokens.append(buf[i:j])
        i = j
    return tokens, buf[i + 1:]


def _load_pnm(path):
    with open(path, "rb") as f:
        buf = f.read()
    (magic,), rest = _read_pnm_tokens(buf, 1)
    magic = magic.decode("ascii", errors="replace")
    if magic not in ("P2", "P3", "P5", "P6"):
        raise ParseError(f"unsupported PNM magic '{magic}'")
    (w, h, maxval), rest = _read_pnm_tokens(rest, 3)
    w, h, maxval = int(w), int(h), int(maxval)
    if w <= 0 or h <= 0 or maxval <= 0 or maxval > 65535:
        raise ParseError("bad PNM dimensions")
    channels = 3 if magic in ("P3", "P6") else 1
    count = w * h * channels
    if magic in ("P2", "P3"):
        vals = rest.split()
        if len(vals) < count:
            raise ParseError("truncated PNM data")
        data = np.array(vals[:count], dtype=float)
    else:
        dtype = np.uint16 if maxval > 255 else np.uint8
        need = count * np.dtype(dtype).itemsize
        if len(rest) < need:
            raise ParseError("truncated PNM data")
        data = np.frombuffer(rest[:need], dtype=dtype).astype(float)
        if maxval > 255:
            data = np.frombuffer(rest[:need], dtype=">u2").astype(float)
    data = data.reshape(h, w, channels) / maxval
    if channels == 3:
        data = data @ LUMA
    else:
        data = data[:, :, 0]
    return ImageGray(w, h, data)


def load_image(path, fmt=None):
    """Load PGM/PPM/PNG as grayscale in [0,1] (luma conversion for color)."""
    path = str(path)
    if fmt is None:
        fmt = path.rsplit(".", 1)[-1].lower()
    if fmt in ("pgm", "ppm", "pnm"):
        try:
            return _load_pnm(path)
        except OSError as e:
            raise ParseError(str(e)) from None
    if fmt == "png":
        import cv2
        img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
        if img is None:
            raise ParseError(f"cannot read PNG '{path}'")
        img = img.astype(float) / (65535.0 if img.dtype == np.uint16 else 255.0)
        if img.ndim == 3:
            img = img[:, :, :3][:, :, ::-1] @ LUMA  # BGR -> RGB -> luma
        return ImageGray(img.shape[1], img.shape[0], np.clip(img, 0, 1))
    raise ParseError(f"unsupported image format '{fmt}'")


def save_image_pgm(path, image):
    """Write an ImageGray as binary 8-bit PGM."""
    data = np.clip(np.rint(image.pixels * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{image.width} {image.height}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def load_matches(path, size_a=None, size_b=None):
    """Load "u_a v_a u_b v_b" match lines; '#' starts a comment.

    size_a/size_b are optional (width, height) bounds for the two images;
    when given, out-of-bounds coordinates raise BoundsError.
    """
    rows = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 values")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value") from None
    matches = np.array(rows, dtype=float).reshape(-1, 4)
    for cols, size, tag in (((0, 1), size_a, "a"), ((2, 3), size_b, "b")):
        if size is None or matches.size == 0:
            continue
        w, h = size
        u, v = matches[:, cols[0]], matches[:, cols[1]]
        if np.any(u < 0) or np.any(u >= w) or np.any(v < 0) or np.any(v >= h):
            raise BoundsError(f"match coordinate outside image {tag} bounds")
    return matches


def load_edge_mask(path, expect_size=None):
    """Load a binary PGM mask (nonzero = edge)."""
    img = load_image(path)
    if expect_size is not None and (img.width, img.height) != tuple(expect_size):
        from .errors import DimensionMismatch
        raise DimensionMismatch(
            f"mask is {img.width}x{img.height}, expected {expect_size[0]}x{expect_size[1]}")
    return EdgeMask(img.width, img.height, img.pixels > 0.5)


def save_pose(path, pose):
    obj = {"R": pose.R.tolist(), "t": pose.t.tolist(),
           "convention": "world_to_camera"}
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def load_pose(path):
    try:
        with open(path, "r") as f:
            obj = json.load(f)
        if obj.get("convention", "world_to_camera") != "world_to_camera":
            raise ParseError(f"unsupported pose convention in {path}")
        return PoseSE3(np.array(obj["R"], dtype=float), np.array(obj["t"], dtype=float))
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise ParseError(f"bad pose file {path}: {e}") from None


def load_intrinsics(path):
    try:
        with open(path, "r") as f:
            obj = json.load(f)
        return CameraIntrinsics(fx=float(obj["fx"]), fy=float(obj["fy"]),
                                cx=float(obj["cx"]), cy=float(obj["cy"]),
                                width=int(obj["width"]), height=int(obj["height"]))
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise ParseError(f"bad intrinsics file {path}: {e}") from None


def save_intrinsics(path, K):
    obj = {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
           "width": K.width, "height": K.height}
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def save_overlay(path, image, edge_pixels):
    """Write a PPM of the image with the given (u,v) pixels drawn green."""
    gray = np.clip(np.rint(image.pixels * 255.0), 0, 255).astype(np.uint8)
    rgb = np.stack([gray, gray, gray], axis=2)
    px = np.asarray(edge_pixels, dtype=float).reshape(-1, 2)
    if px.size:
        iu = np.rint(px[:, 0]).astype(int)
        iv = np.rint(px[:, 1]).astype(int)
        ok = (iu >= 0) & (iu < image.width) & (iv >= 0) & (iv < image.height)
        rgb[iv[ok], iu[ok]] = (0, 255, 0)
    with open(path, "wb") as f:
        f.write(f"P6\n{image.width} {image.height}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


_CORR_MAGIC = b"RVCORR1"


def save_correspondence(path, view):
    """Binary per-pixel correspondence sidecar: flag byte + 3 float64."""
    h, w = view.correspondence.shape[:2]
    flags = view.valid.astype(np.uint8)
    corr = np.where(view.valid[:, :, None], view.correspondence, 0.0)
    with open(path, "wb") as f:
        f.write(_CORR_MAGIC + f" {w} {h}\n".encode("ascii"))
        rec = np.zeros((h * w, 25), dtype=np.uint8)
        rec[:, 0] = flags.reshape(-1)
        rec[:, 1:] = corr.reshape(-1, 3).astype("<f8").view(np.uint8)
        f.write(rec.tobytes())


def load_correspondence(path):
    """Returns (valid (H,W) bool, correspondence (H,W,3) with nan at holes)."""
    with open(path, "rb") as f:
        header = f.readline()
        tok = header.split()
        if len(tok) != 3 or tok[0] != _CORR_MAGIC:
            raise ParseError("bad correspondence sidecar header")
        w, h = int(tok[1]), int(tok[2])
        raw = f.read()
    if len(raw) != w * h * 25:
        raise ParseError("truncated correspondence sidecar")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(h * w, 25)
    valid = rec[:, 0].astype(bool).reshape(h, w)
    corr = rec[:, 1:].copy().view("<f8").reshape(h, w, 3)
    corr = np.where(valid[:, :, None], corr, np.nan)
    return valid, corr
