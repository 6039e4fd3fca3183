"""Manifests, PPM/PGM codecs, training augmentation and a synthetic crowd generator."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .density import BoundsError, PointSet
from .optim import make_rng

LUMA = np.array([0.299, 0.587, 0.114])


class ManifestError(ValueError):
    pass


# ---------------------------------------------------------------------- codecs


def _read_header(f, path):
    tokens = []
    while len(tokens) < 4:
        line = f.readline()
        if not line:
            raise ValueError(f"{path}: truncated header")
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported image type {magic!r} (need P5 or P6)")
    w, h, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise ValueError(f"{path}: maxval {maxval} unsupported")
    return magic, w, h


def image_size(path):
    """(width, height) from the PNM header."""
    with open(path, "rb") as f:
        _, w, h = _read_header(f, path)
    return w, h


def read_pnm(path):
    """Raw uint8 pixels: H x W x 3 for P6, H x W for P5."""
    with open(path, "rb") as f:
        magic, w, h = _read_header(f, path)
        channels = 3 if magic == b"P6" else 1
        raw = f.read(w * h * channels)
    if len(raw) != w * h * channels:
        raise ValueError(f"{path}: expected {w * h * channels} pixel bytes, got {len(raw)}")
    arr = np.frombuffer(raw, dtype=np.uint8)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)


def write_pnm(path, pixels):
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim == 3:
        h, w, _ = pixels.shape
        head = b"P6\n%d %d\n255\n" % (w, h)
    else:
        h, w = pixels.shape
        head = b"P5\n%d %d\n255\n" % (w, h)
    with open(path, "wb") as f:
        f.write(head + pixels.tobytes())


def decode_image(path):
    """3 x H x W float32 image in [0, 1]; gray images are replicated."""
    px = read_pnm(path)
    if px.ndim == 2:
        px = np.repeat(px[:, :, None], 3, axis=2)
    return (px.transpose(2, 0, 1).astype(np.float32) / 255.0)


def encode_image(path, image):
    """Write a 3 x H x W image in [0, 1] as P6."""
    px = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    write_pnm(path, px)


# -------------------------------------------------------------------- manifest


@dataclass
class ManifestEntry:
    image: str
    points: list


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    root: str = "."
    split: str = "train"

    def __len__(self):
        return len(self.entries)

    def image_path(self, i):
        return os.path.join(self.root, self.entries[i].image)

    def point_set(self, i):
        w, h = image_size(self.image_path(i))
        return PointSet(np.asarray(self.entries[i].points, dtype=np.float64).reshape(-1, 2), w, h)

    def sample(self, i):
        img = decode_image(self.image_path(i))
        _, h, w = img.shape
        return Sample(img, PointSet(np.asarray(self.entries[i].points, dtype=np.float64).reshape(-1, 2), w, h))

    def subset(self, indices, split=None):
        return DatasetManifest([self.entries[i] for i in indices], self.root, split or self.split)


def save_manifest(manifest, path):
    data = [{"image": e.image, "points": [[float(x), float(y)] for x, y in e.points]} for e in manifest.entries]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=1)
        f.write("\n")


def load_manifest(path, split="train", check_images=True):
    """Parse a JSON manifest; image paths are relative to the manifest's folder."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(data, list):
        raise ManifestError(f"{path}: top level must be a JSON array")
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    for i, item in enumerate(data):
        if not isinstance(item, dict) or "image" not in item or "points" not in item:
            raise ManifestError(f"{path}: entry {i} needs 'image' and 'points' fields")
        pts = item["points"]
        if not isinstance(pts, list) or any(not isinstance(p, list) or len(p) != 2 for p in pts):
            raise ManifestError(f"{path}: entry {i} field 'points' must be a list of [x, y] pairs")
        entries.append(ManifestEntry(str(item["image"]), [[float(x), float(y)] for x, y in pts]))
    manifest = DatasetManifest(entries, root, split)
    if check_images:
        for i, e in enumerate(entries):
            p = manifest.image_path(i)
            if not os.path.exists(p):
                raise ManifestError(f"{path}: entry {i} image {e.image!r} not found")
            w, h = image_size(p)
            for j, (x, y) in enumerate(e.points):
                if not (0 <= x < w and 0 <= y < h):
                    raise BoundsError(f"{path}: entry {i} point {j} ({x}, {y}) outside {w}x{h} image {e.image!r}")
    return manifest


# ---------------------------------------------------------------- augmentation


@dataclass
class Sample:
    image: np.ndarray  # 3 x H x W in [0, 1]
    points: PointSet


@dataclass
class AugmentConfig:
    scale_range: tuple = (0.8, 1.2)
    crop_size: int = 256
    mirror_prob: float = 0.5
    gamma_range: tuple = (0.5, 1.5)
    gamma_prob: float = 0.3
    gray_prob: float = 0.1

    def __post_init__(self):
        self.scale_range = tuple(float(v) for v in self.scale_range)
        self.gamma_range = tuple(float(v) for v in self.gamma_range)

    def validate(self):
        if self.crop_size <= 0 or self.crop_size % 8:
            raise ValueError(f"crop_size {self.crop_size} must be a positive multiple of 8")
        for name in ("mirror_prob", "gamma_prob", "gray_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} is not a probability")


def bilinear_resize(image, out_h, out_w):
    """Resample C x H x W so output pixel (i, j) reads input at (i * H/out_h, j * W/out_w)."""
    c, h, w = image.shape
    ys = np.minimum(np.arange(out_h) * (h / out_h), h - 1)
    xs = np.minimum(np.arange(out_w) * (w / out_w), w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    top = image[:, y0][:, :, x0] * (1 - fx) + image[:, y0][:, :, x1] * fx
    bot = image[:, y1][:, :, x0] * (1 - fx) + image[:, y1][:, :, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(image.dtype)


def mirror(image, points):
    """Horizontal flip of the image and its points (x -> W - 1 - x)."""
    w = image.shape[2]
    pts = points.points.copy()
    pts[:, 0] = w - 1 - pts[:, 0]
    keep = (pts[:, 0] >= 0) & (pts[:, 0] < w)
    return image[:, :, ::-1].copy(), PointSet(pts[keep], points.width, points.height)


def augment(sample, config, rng, crop_origin=None):
    """Scale, crop, mirror, gamma and grayscale, in that order.

    All random draws happen up front in a fixed order so the stream is
    consumed identically whichever branches fire.
    """
    lo, hi = config.scale_range
    scale = rng.uniform(lo, hi) if hi > lo else lo
    u_crop = rng.random(2)
    do_mirror = rng.random() < config.mirror_prob
    do_gamma = rng.random() < config.gamma_prob
    gamma = rng.uniform(*config.gamma_range)
    do_gray = rng.random() < config.gray_prob

    img = sample.image
    pts = sample.points.points.copy()
    _, h, w = img.shape
    if scale != 1.0:
        nh, nw = max(int(round(h * scale)), 1), max(int(round(w * scale)), 1)
        img = bilinear_resize(img, nh, nw)
        pts = pts * np.array([nw / w, nh / h])
        h, w = nh, nw
        pts = pts[(pts[:, 0] < w) & (pts[:, 1] < h)]
    cs = config.crop_size
    if h < cs or w < cs:
        img = np.pad(img, ((0, 0), (0, max(cs - h, 0)), (0, max(cs - w, 0))), mode="reflect")
        h, w = img.shape[1:]
    if crop_origin is None:
        oy = int(u_crop[0] * (h - cs + 1))
        ox = int(u_crop[1] * (w - cs + 1))
    else:
        ox, oy = crop_origin
    img = img[:, oy : oy + cs, ox : ox + cs]
    pts = pts - np.array([ox, oy])
    keep = (pts[:, 0] >= 0) & (pts[:, 0] < cs) & (pts[:, 1] >= 0) & (pts[:, 1] < cs)
    points = PointSet(pts[keep], cs, cs)
    if do_mirror:
        img, points = mirror(img, points)
    if do_gamma:
        img = np.power(np.clip(img, 0.0, 1.0), gamma)
    if do_gray:
        lum = np.tensordot(LUMA, img, axes=(0, 0))
        img = np.repeat(lum[None], 3, axis=0)
    return Sample(np.ascontiguousarray(img, dtype=np.float32), points)


# ------------------------------------------------------------------- synthetic


def _background(rng, size):
    coarse = rng.uniform(0.15, 0.55, size=(3, 5, 5))
    bg = bilinear_resize(coarse, size, size)
    yy, xx = np.mgrid[0:size, 0:size] / size
    ripple = 0.05 * np.sin(2 * np.pi * (rng.uniform(1, 3) * xx + rng.uniform(1, 3) * yy + rng.random()))
    return np.clip(bg + ripple[None], 0.0, 1.0)


def render_person(image, x, y, radius, color):
    """Draw a soft-edged disc centred at (x, y)."""
    _, h, w = image.shape
    r = int(np.ceil(radius + 1))
    y0, y1 = max(int(y) - r, 0), min(int(y) + r + 2, h)
    x0, x1 = max(int(x) - r, 0), min(int(x) + r + 2, w)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    d = np.hypot(xx - x, yy - y)
    alpha = np.clip(radius + 0.5 - d, 0.0, 1.0)
    patch = image[:, y0:y1, x0:x1]
    image[:, y0:y1, x0:x1] = patch * (1 - alpha) + color[:, None, None] * alpha


def person_radius(y, size):
    """Heads shrink toward the top of the frame, as with a tilted camera."""
    return 1.0 + 3.0 * (y / size)


def synth_generate(out_dir, n_images, image_size=96, count_range=(5, 30), seed=0, manifest_name="manifest.json"):
    """Write ``n_images`` synthetic scenes and their manifest; returns the manifest."""
    if image_size % 8:
        raise ValueError(f"image_size {image_size} must be divisible by 8")
    lo, hi = count_range
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(n_images):
        rng = make_rng(seed, i)
        img = _background(rng, image_size)
        n = int(rng.integers(lo, hi + 1))
        xs = rng.uniform(0, image_size, size=n)
        # denser toward the top, like a receding crowd
        ys = image_size * rng.beta(1.0, 1.3, size=n)
        ys = np.minimum(ys, np.nextafter(image_size, 0))
        for x, y in sorted(zip(xs, ys), key=lambda p: p[1]):
            color = np.array([rng.uniform(0.75, 1.0), rng.uniform(0.6, 0.9), rng.uniform(0.0, 0.25)])
            render_person(img, x, y, person_radius(y, image_size), color)
        name = f"img_{i:04d}.ppm"
        encode_image(os.path.join(out_dir, name), img)
        pts = [[round(float(x), 3), round(float(y), 3)] for x, y in zip(xs, ys)]
        pts = [[min(x, image_size - 1e-3), min(y, image_size - 1e-3)] for x, y in pts]
        entries.append(ManifestEntry(name, pts))
    manifest = DatasetManifest(entries, os.path.abspath(out_dir))
    save_manifest(manifest, os.path.join(out_dir, manifest_name))
    return manifest
