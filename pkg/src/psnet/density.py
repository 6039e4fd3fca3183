"""Head-point annotations to density-map ground truth.

Each head becomes a 2-D Gaussian truncated to the image and renormalized so
its in-image mass is exactly one; the map therefore sums to the head count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_SIGMA = 15.0
DEFAULT_K = 3
DEFAULT_BETA = 0.3
TRUNCATE = 4.0


class BoundsError(ValueError):
    pass


@dataclass
class PointSet:
    points: np.ndarray  # (n, 2) of (x, y)
    width: int
    height: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"empty image dimensions {self.width}x{self.height}")
        for i, (x, y) in enumerate(self.points):
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise BoundsError(f"point {i} ({x}, {y}) outside {self.width}x{self.height} image")

    def __len__(self):
        return len(self.points)


def _axis_weights(center, sigma, size, truncate):
    lo = max(int(np.floor(center - truncate * sigma)), 0)
    hi = min(int(np.ceil(center + truncate * sigma)) + 1, size)
    if hi <= lo:
        # support fell outside the image; keep the mass on the nearest pixel
        lo = min(max(int(round(center)), 0), size - 1)
        return lo, np.ones(1)
    coords = np.arange(lo, hi, dtype=np.float64)
    w = np.exp(-0.5 * ((coords - center) / sigma) ** 2)
    s = w.sum()
    if s <= 0:
        w = np.zeros_like(w)
        w[np.argmin(np.abs(coords - center))] = 1.0
        return lo, w
    return lo, w / s


def _splat(points, sigmas, width, height, truncate):
    dmap = np.zeros((height, width), dtype=np.float64)
    for (x, y), sigma in zip(points, sigmas):
        x0, wx = _axis_weights(x, sigma, width, truncate)
        y0, wy = _axis_weights(y, sigma, height, truncate)
        dmap[y0 : y0 + len(wy), x0 : x0 + len(wx)] += np.outer(wy, wx)
    return dmap


def fixed_kernel_density(points: PointSet, sigma=DEFAULT_SIGMA, truncate=TRUNCATE):
    """Density map with one isotropic Gaussian of width ``sigma`` per head."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return _splat(points.points, np.full(len(points), float(sigma)), points.width, points.height, truncate)


def adaptive_sigma(points: PointSet, k=DEFAULT_K, beta=DEFAULT_BETA, default_sigma=DEFAULT_SIGMA):
    """Per-head width ``beta`` times the mean distance to the ``k`` nearest other heads."""
    n = len(points)
    if n == 0:
        return np.zeros(0)
    if n == 1:
        return np.array([float(default_sigma)])
    k = min(int(k), n - 1)
    dist, _ = cKDTree(points.points).query(points.points, k=k + 1)
    dist = np.asarray(dist).reshape(n, k + 1)
    # column 0 is the point itself; coincident heads may swap order but distance is 0 either way
    sig = beta * np.sort(dist, axis=1)[:, 1:].mean(axis=1)
    # coincident annotations would give a zero-width kernel
    return np.where(sig > 0, sig, 1e-3 * default_sigma)


def adaptive_kernel_density(points: PointSet, k=DEFAULT_K, beta=DEFAULT_BETA, default_sigma=DEFAULT_SIGMA, truncate=TRUNCATE):
    sigmas = adaptive_sigma(points, k, beta, default_sigma)
    return _splat(points.points, sigmas, points.width, points.height, truncate)


def sum_pool_downsample(dmap, factor):
    """Sum each ``factor`` x ``factor`` block; the total is preserved."""
    dmap = np.asarray(dmap)
    h, w = dmap.shape
    if factor <= 0 or h % factor or w % factor:
        raise ValueError(f"{h}x{w} map is not divisible by factor {factor}")
    return dmap.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))


# ----------------------------------------------------------------------- files

MAGIC = b"DMAP"


def write_dmap(path, dmap):
    dmap = np.asarray(dmap, dtype="<f4")
    h, w = dmap.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(dmap.tobytes(order="C"))


def read_dmap(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a DMAP file")
    h, w = struct.unpack("<II", blob[4:12])
    body = blob[12:]
    if len(body) != 4 * h * w:
        raise ValueError(f"{path}: expected {h * w} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).copy()


def write_pgm_visual(path, dmap):
    """8-bit PGM with values scaled linearly by the map maximum."""
    dmap = np.asarray(dmap, dtype=np.float64)
    top = dmap.max() if dmap.size else 0.0
    img = np.zeros(dmap.shape, dtype=np.uint8) if top <= 0 else np.clip(np.round(dmap / top * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(img.tobytes())
