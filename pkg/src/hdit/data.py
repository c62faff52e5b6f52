"""Datasets and image serialization.

Images live in [-1, 1] float arrays of shape (h, w, 3) channel-last; on disk
they are binary 8-bit PPM (P6) with the fixed mapping byte b <-> b/127.5 - 1,
which makes save->load->save byte-identical.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rng import RngStream

# class 0: filled disks, radius as a fraction of resolution
DISK_RADIUS = (0.125, 0.1875)
# class 1: axis-aligned squares, half-side as a fraction of resolution
SQUARE_HALF = (0.25, 0.3125)
FG_RANGE = (0.2, 1.0)


@dataclass
class Dataset:
    images: np.ndarray               # (n, res, res, 3) float32 in [-1, 1]
    labels: Optional[np.ndarray]     # (n,) int64, or None
    class_count: int = 0

    def __len__(self) -> int:
        return self.images.shape[0]


def _disk_coverage(res: int, cx: float, cy: float, r: float) -> np.ndarray:
    """Approximate pixel coverage of a disk: linear ramp across the rim."""
    centers = np.arange(res, dtype=np.float64) + 0.5
    dist = np.hypot(centers[:, None] - cy, centers[None, :] - cx)
    return np.clip(r - dist + 0.5, 0.0, 1.0)


def _square_coverage(res: int, cx: float, cy: float, h: float) -> np.ndarray:
    """Exact pixel coverage of an axis-aligned square (separable overlap)."""
    lo = np.arange(res, dtype=np.float64)
    hi = lo + 1.0
    ox = np.clip(np.minimum(cx + h, hi) - np.maximum(cx - h, lo), 0.0, 1.0)
    oy = np.clip(np.minimum(cy + h, hi) - np.maximum(cy - h, lo), 0.0, 1.0)
    return oy[:, None] * ox[None, :]


def gen_shapes(n: int, res: int, rng: RngStream) -> Dataset:
    """Two-class toy dataset: anti-aliased disks vs axis-aligned squares on a
    black (-1) background, with jittered position, size and per-channel
    intensity.  Deterministic for a given stream."""
    if res < 16:
        raise ValueError("res must be >= 16")
    labels = rng.integers(0, 2, (n,))
    images = np.empty((n, res, res, 3), dtype=np.float32)
    for i in range(n):
        u = rng.uniform((6,), dtype=np.float64)
        if labels[i] == 0:
            lo, hi = DISK_RADIUS
            size = (lo + (hi - lo) * u[0]) * res
            cov = None
        else:
            lo, hi = SQUARE_HALF
            size = (lo + (hi - lo) * u[0]) * res
            cov = None
        # keep the whole shape inside the frame
        cx = size + u[1] * (res - 2.0 * size)
        cy = size + u[2] * (res - 2.0 * size)
        if labels[i] == 0:
            cov = _disk_coverage(res, cx, cy, size)
        else:
            cov = _square_coverage(res, cx, cy, size)
        color = FG_RANGE[0] + (FG_RANGE[1] - FG_RANGE[0]) * u[3:6]
        img = -1.0 + cov[:, :, None] * (color[None, None, :] + 1.0)
        images[i] = img.astype(np.float32)
    return Dataset(images, labels.astype(np.int64), class_count=2)


# ----------------------------------------------------------------------
# the statistic used to tell the two classes apart
# ----------------------------------------------------------------------
# Brightness below this fraction counts as background.  Sampled images carry
# a percent-level haze over the whole frame; without the floor that invisible
# mass dominates the second moment through the r^2 factor (the frame is ~10x
# the area of a shape).  The dimmest foreground the generator emits is 0.2,
# an order of magnitude above the floor, so clean statistics barely move.
WEIGHT_FLOOR = 0.05


def radial_variance(img: np.ndarray) -> float:
    """Centroid-weighted second spatial moment of the brightness mass.

    Weight per pixel is the channel-mean of (v+1)/2 minus a small floor, so
    background — including faint sampler haze — carries none.  A uniform disk
    of radius r gives r^2/2; a square of half-side h gives 2h^2/3 — disjoint
    ranges for the generator's size bands.
    """
    w = np.mean((np.asarray(img, dtype=np.float64) + 1.0) * 0.5, axis=-1)
    w = np.maximum(w - WEIGHT_FLOOR, 0.0)
    total = w.sum()
    if total <= 1e-9:
        return 0.0
    res_y, res_x = w.shape
    ys = np.arange(res_y, dtype=np.float64) + 0.5
    xs = np.arange(res_x, dtype=np.float64) + 0.5
    cy = (w.sum(axis=1) * ys).sum() / total
    cx = (w.sum(axis=0) * xs).sum() / total
    r2 = (ys[:, None] - cy) ** 2 + (xs[None, :] - cx) ** 2
    return float((w * r2).sum() / total)


def shape_threshold(res: int) -> float:
    """Decision boundary between the disk and square statistic ranges,
    scaled from its value 30.0 at 32x32 (the statistic grows as res^2)."""
    return 30.0 * (res / 32.0) ** 2


def classify_shapes(images: np.ndarray, threshold: Optional[float] = None) -> np.ndarray:
    """Label estimate per image: 0 below the radial-variance boundary
    (disk), 1 above (square)."""
    images = np.asarray(images)
    if threshold is None:
        threshold = shape_threshold(images.shape[1])
    stats = np.array([radial_variance(im) for im in images])
    return (stats >= threshold).astype(np.int64)


# ----------------------------------------------------------------------
# PPM (P6) serialization
# ----------------------------------------------------------------------
def quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(img, dtype=np.float64) + 1.0) * 127.5),
                   0, 255).astype(np.uint8)


def dequantize(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.float32) / np.float32(127.5)) - np.float32(1.0)


def save_image(img: np.ndarray, path: str) -> None:
    """Write one (h, w, 3) image in [-1, 1] as binary PPM."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3), got {img.shape}")
    raw = quantize(img)
    h, w, _ = raw.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(raw.tobytes())


def _read_token(fh) -> bytes:
    """Next whitespace-delimited header token, skipping # comments."""
    tok = b""
    while True:
        c = fh.read(1)
        if not c:
            if tok:
                return tok
            raise ValueError("truncated PPM header")
        if c == b"#":
            while c and c != b"\n":
                c = fh.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def load_image(path: str) -> np.ndarray:
    """Read a binary PPM into a (h, w, 3) float32 array in [-1, 1]."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"P6":
            raise ValueError(f"{path}: not a binary PPM (magic {magic!r})")
        w = int(_read_token(fh))
        h = int(_read_token(fh))
        maxval = int(_read_token(fh))
        if maxval != 255:
            raise ValueError(f"{path}: unsupported maxval {maxval}")
        raw = fh.read(w * h * 3)
        if len(raw) != w * h * 3:
            raise ValueError(f"{path}: truncated pixel data")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return dequantize(arr)


def save_grid(images: np.ndarray, path: str, cols: int = 8) -> None:
    """Tile a batch into one image (row-major, black-padded) and save it."""
    images = np.asarray(images)
    n, h, w, c = images.shape
    cols = max(1, min(cols, n))
    rows = (n + cols - 1) // cols
    grid = np.full((rows * h, cols * w, c), -1.0, dtype=images.dtype)
    for i in range(n):
        r, col = divmod(i, cols)
        grid[r * h:(r + 1) * h, col * w:(col + 1) * w] = images[i]
    save_image(grid, path)


def _center_crop_resize(img: np.ndarray, res: int) -> np.ndarray:
    h, w, _ = img.shape
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    img = img[top:top + side, left:left + side]
    if side == res:
        return img
    idx = np.minimum((np.arange(res, dtype=np.float64) + 0.5) * side / res,
                     side - 1).astype(np.int64)
    return img[idx][:, idx]


def load_folder(path: str, res: Optional[int] = None) -> Dataset:
    """All *.ppm files under path, lexicographic order, center-cropped and
    nearest-neighbor resized to res when given.  Unlabeled."""
    names = sorted(f for f in os.listdir(path) if f.endswith(".ppm"))
    if not names:
        raise ValueError(f"no .ppm files in {path}")
    imgs = []
    for name in names:
        img = load_image(os.path.join(path, name))
        if res is not None:
            img = _center_crop_resize(img, res)
        imgs.append(img)
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent image shapes after resize: {shapes}")
    return Dataset(np.stack(imgs).astype(np.float32), None, class_count=0)
