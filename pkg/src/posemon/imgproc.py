"""Image kernels used by the edge- and feature-based monitors.

Everything works on 2D numpy arrays indexed ``[y, x]``.  Intensities stay on
the 0-255 scale throughout, so Canny thresholds refer to raw 3x3 Sobel
magnitudes.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from ._brief_pattern import PATTERN

CANNY_SIGMA = 1.4
FAST_THRESHOLD = 20
PATCH_MARGIN = 15
DESCRIPTOR_SMOOTHING = 2.0

# radius-3 Bresenham circle, clockwise from 12 o'clock
_CIRCLE = np.array([
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
])
_PATTERN = np.array(PATTERN, dtype=np.float64)
_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    response: float
    orientation: float


@dataclass(frozen=True)
class Match:
    query_index: int
    train_index: int
    hamming: int
    pixel_distance: float


# ------------------------------------------------------------------ filtering

def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_rows(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = len(k) // 2
    padded = np.pad(a, ((0, 0), (r, r)), mode="reflect")
    out = np.zeros_like(a, dtype=np.float64)
    w = a.shape[1]
    for i, kv in enumerate(k):
        out += kv * padded[:, i:i + w]
    return out


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur (radius ceil(3 sigma), reflect-101 borders).

    Returns a float64 array so chained filters do not accumulate rounding.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    a = np.asarray(image, dtype=np.float64)
    if sigma == 0:
        return a.copy()
    k = gaussian_kernel(sigma)
    return _convolve_rows(_convolve_rows(a, k).T, k).T


def sobel(image: np.ndarray):
    """3x3 Sobel derivatives ``(gx, gy)`` with reflect-101 borders (+y is down)."""
    p = np.pad(np.asarray(image, dtype=np.float64), 1, mode="reflect")
    h, w = p.shape[0] - 2, p.shape[1] - 2

    def s(dy, dx):
        return p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]

    gx = (s(-1, 1) + 2 * s(0, 1) + s(1, 1)) - (s(-1, -1) + 2 * s(0, -1) + s(1, -1))
    gy = (s(1, -1) + 2 * s(1, 0) + s(1, 1)) - (s(-1, -1) + 2 * s(-1, 0) + s(-1, 1))
    return gx, gy


def _shift(a: np.ndarray, dy: int, dx: int, fill=0):
    """``out[y, x] = a[y + dy, x + dx]`` with out-of-range reads set to ``fill``."""
    out = np.full_like(a, fill)
    h, w = a.shape
    ys, yd = (slice(dy, h), slice(0, h - dy)) if dy >= 0 else (slice(0, h + dy), slice(-dy, h))
    xs, xd = (slice(dx, w), slice(0, w - dx)) if dx >= 0 else (slice(0, w + dx), slice(-dx, w))
    out[yd, xd] = a[ys, xs]
    return out


def non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Thin gradient magnitudes along the gradient direction (4 axes, signed).

    With ``d`` the quantized step towards the brighter side, a pixel survives
    iff it is not smaller than its darker neighbour ``p - d`` and strictly
    greater than its brighter neighbour ``p + d``.  A symmetric two-pixel ridge,
    as produced by a binary step, thus keeps only its bright pixel, so the edge
    of a bright silhouette falls on the silhouette's own boundary pixels.
    """
    angle = np.degrees(np.arctan2(gy, gx))
    bins = np.mod(np.round(angle / 45.0).astype(int), 8)
    keep = np.zeros(mag.shape, dtype=bool)
    steps = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
    for b, (dx, dy) in enumerate(steps):
        sel = bins == b
        if not sel.any():
            continue
        brighter = _shift(mag, dy, dx)
        darker = _shift(mag, -dy, -dx)
        keep |= sel & (mag >= darker) & (mag > brighter)
    return np.where(keep & (mag > 0), mag, 0.0)


def hysteresis(strength: np.ndarray, low: float, high: float) -> np.ndarray:
    """Keep pixels >= high plus pixels >= low 8-connected (transitively) to them."""
    candidate = (strength >= low) & (strength > 0)
    strong = candidate & (strength >= high)
    out = strong.copy()
    h, w = strength.shape
    queue = deque(zip(*np.nonzero(strong)))
    while queue:
        y, x = queue.popleft()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and candidate[yy, xx] and not out[yy, xx]:
                    out[yy, xx] = True
                    queue.append((yy, xx))
    return out


def canny(image: np.ndarray, low: float, high: float, sigma: float = CANNY_SIGMA) -> np.ndarray:
    """Canny edge mask: blur, Sobel, 4-direction NMS, double-threshold hysteresis."""
    if not 0 <= low <= high:
        raise ValueError(f"canny thresholds need 0 <= low <= high, got low={low}, high={high}")
    smoothed = gaussian_blur(image, sigma)
    gx, gy = sobel(smoothed)
    mag = np.hypot(gx, gy)
    return hysteresis(non_max_suppression(mag, gx, gy), low, high)


def dilate(mask: np.ndarray, kernel_size: int) -> np.ndarray:
    """Binary dilation with a ``k x k`` square; pixels beyond the border are ignored."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be odd and >= 1, got {kernel_size}")
    m = np.asarray(mask, dtype=bool)
    r = kernel_size // 2
    rows = m.copy()
    for d in range(1, r + 1):
        rows |= _shift(m, 0, d, False) | _shift(m, 0, -d, False)
    out = rows.copy()
    for d in range(1, r + 1):
        out |= _shift(rows, d, 0, False) | _shift(rows, -d, 0, False)
    return out


# ------------------------------------------------------------------ keypoints

def _orientation(img: np.ndarray, x: int, y: int, radius: int = 3) -> float:
    h, w = img.shape
    m10 = m01 = 0.0
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dx * dx + dy * dy > radius * radius:
                continue
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w:
                v = float(img[yy, xx])
                m10 += dx * v
                m01 += dy * v
    return math.atan2(m01, m10)


def detect_keypoints(edge_mask: np.ndarray, max_keypoints: int = 500,
                     threshold: float = FAST_THRESHOLD) -> list[Keypoint]:
    """FAST-9 corners on a binary edge image (or a grayscale image) with 3x3 NMS.

    Keypoints are returned strongest first; equal responses are ordered by (y, x).
    """
    a = np.asarray(edge_mask)
    img = a.astype(np.int64) * 255 if a.dtype == bool else a.astype(np.int64)
    h, w = img.shape
    if h < 7 or w < 7 or max_keypoints <= 0:
        return []
    c = img[3:h - 3, 3:w - 3]
    ring = np.stack([img[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx] for dx, dy in _CIRCLE])
    corner = np.zeros(c.shape, dtype=bool)
    for flags in (ring > c + threshold, ring < c - threshold):
        ext = np.concatenate([flags, flags[:8]]).astype(np.int32)
        cs = np.concatenate([np.zeros((1,) + c.shape, np.int32), np.cumsum(ext, axis=0)])
        runs = cs[9:25] - cs[0:16]
        corner |= (runs == 9).any(axis=0)
    if not corner.any():
        return []
    response = np.where(corner, np.abs(ring - c).sum(axis=0), -1).astype(np.float64)
    resp = np.full((h, w), -1.0)
    resp[3:h - 3, 3:w - 3] = response

    ys, xs = np.nonzero(resp >= 0)
    kept = []
    for y, x in zip(ys, xs):
        r = resp[y, x]
        win = resp[max(y - 1, 0):y + 2, max(x - 1, 0):x + 2]
        if (win > r).any():
            continue
        # ties: the first pixel in (y, x) order wins
        tie = False
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if (dy, dx) < (0, 0) and 0 <= y + dy < h and 0 <= x + dx < w and resp[y + dy, x + dx] == r:
                    tie = True
        if not tie:
            kept.append((-r, int(y), int(x)))
    kept.sort()
    kept = kept[:max_keypoints]
    return [Keypoint(x, y, -nr, _orientation(img, x, y)) for nr, y, x in kept]


def compute_descriptors(edge_mask: np.ndarray, keypoints: list[Keypoint]):
    """Steered BRIEF: 256 intensity comparisons in a 31x31 patch, rotated by each keypoint's angle.

    Keypoints closer than 15 px to the border are dropped.  Returns
    ``(kept_keypoints, descriptors)`` where descriptors is ``(N, 32)`` uint8
    (bits packed big-endian).
    """
    a = np.asarray(edge_mask)
    img = a.astype(np.float64) * 255 if a.dtype == bool else a.astype(np.float64)
    h, w = img.shape
    kept = [k for k in keypoints
            if PATCH_MARGIN <= k.x < w - PATCH_MARGIN and PATCH_MARGIN <= k.y < h - PATCH_MARGIN]
    if not kept:
        return [], np.zeros((0, 32), dtype=np.uint8)
    smooth = gaussian_blur(img, DESCRIPTOR_SMOOTHING)
    xs = np.array([k.x for k in kept])[:, None]
    ys = np.array([k.y for k in kept])[:, None]
    ang = np.array([k.orientation for k in kept])[:, None]
    cos, sin = np.cos(ang), np.sin(ang)

    def sample(px, py):
        rx = np.rint(px * cos - py * sin).astype(np.int64)
        ry = np.rint(px * sin + py * cos).astype(np.int64)
        return smooth[ys + ry, xs + rx]

    bits = sample(_PATTERN[:, 0], _PATTERN[:, 1]) < sample(_PATTERN[:, 2], _PATTERN[:, 3])
    return kept, np.packbits(bits, axis=1)


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint8).reshape(-1, 32)
    b = np.asarray(b, dtype=np.uint8).reshape(-1, 32)
    return _POPCOUNT[a[:, None, :] ^ b[None, :, :]].sum(axis=2)


def match_two_nearest(query_descs, train_descs, query_keypoints=None, train_keypoints=None):
    """For each query descriptor, its two nearest train descriptors by Hamming distance.

    Ties go to the lower train index.  ``pixel_distance`` is filled in when
    keypoints are supplied, otherwise it is NaN.
    """
    q = np.asarray(query_descs, dtype=np.uint8).reshape(-1, 32)
    t = np.asarray(train_descs, dtype=np.uint8).reshape(-1, 32)
    if len(t) < 2:
        raise ValueError(f"need at least 2 train descriptors, got {len(t)}")
    d = hamming_matrix(q, t)
    order = np.argsort(d, axis=1, kind="stable")[:, :2]
    out = []
    for i, (j0, j1) in enumerate(order):
        pair = []
        for j in (j0, j1):
            if query_keypoints is not None and train_keypoints is not None:
                qk, tk = query_keypoints[i], train_keypoints[j]
                dist = math.hypot(qk.x - tk.x, qk.y - tk.y)
            else:
                dist = math.nan
            pair.append(Match(i, int(j), int(d[i, j]), dist))
        out.append(tuple(pair))
    return out
