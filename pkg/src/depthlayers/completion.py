"""Classical depth completion: fast-marching propagation fill and bilateral
weighted-median filtering."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .core import check_same_shape

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class FillRegion:
    """Pixels to fill (``mask == 1``) and the known pixels touching them."""

    mask: np.ndarray
    unknown: np.ndarray = field(init=False, repr=False)
    band: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        unknown = np.asarray(self.mask) > 0.5
        object.__setattr__(self, "unknown", unknown)
        grown = ndimage.binary_dilation(unknown, structure=_EIGHT)
        object.__setattr__(self, "band", grown & ~unknown)


def _solve_eikonal(a: float, b: float) -> float:
    if math.isinf(a) and math.isinf(b):
        return math.inf
    if abs(a - b) >= 1.0:
        return min(a, b) + 1.0
    return 0.5 * (a + b + math.sqrt(2.0 - (a - b) ** 2))


def _arrival_time(T, y, x):
    h, w = T.shape
    up = T[y - 1, x] if y > 0 else math.inf
    down = T[y + 1, x] if y < h - 1 else math.inf
    left = T[y, x - 1] if x > 0 else math.inf
    right = T[y, x + 1] if x < w - 1 else math.inf
    return min(_solve_eikonal(up, left), _solve_eikonal(up, right),
               _solve_eikonal(down, left), _solve_eikonal(down, right))


def _front_normal(T, y, x):
    h, w = T.shape

    def diff(lo, hi):
        lo_ok, hi_ok = math.isfinite(lo), math.isfinite(hi)
        if lo_ok and hi_ok:
            return 0.5 * (hi - lo)
        if hi_ok:
            return hi - T[y, x]
        if lo_ok:
            return T[y, x] - lo
        return 0.0

    gy = diff(T[y - 1, x] if y > 0 else math.inf, T[y + 1, x] if y < h - 1 else math.inf)
    gx = diff(T[y, x - 1] if x > 0 else math.inf, T[y, x + 1] if x < w - 1 else math.inf)
    norm = math.hypot(gy, gx)
    return (gy / norm, gx / norm) if norm > 0 else (0.0, 0.0)


def propagate_fill(d, fill, radius: int = 5) -> np.ndarray:
    """Fast-marching fill of unknown pixels, nearest-to-boundary first.

    Each filled value is a normalised combination of source values within
    ``radius`` using the usual direction, distance and level-set weights.
    Sources are the known pixels touching the unknown region plus pixels
    already filled, so results stay within the min/max of that band. The
    gradient-extrapolation term of the classic method is omitted for the
    same reason. Known pixels are returned untouched.
    """
    d = np.asarray(d, dtype=np.float64)
    region = fill if isinstance(fill, FillRegion) else FillRegion(np.asarray(fill))
    check_same_shape(d, region.unknown, names=["depth", "fill"])
    unknown = region.unknown
    out = d.copy()
    if not unknown.any():
        return out
    if unknown.all():
        raise ValueError("propagate_fill needs at least one known pixel")

    h, w = d.shape
    T = np.where(unknown, math.inf, 0.0)
    source = region.band.copy()
    finalized = ~unknown
    r = int(radius)
    oy, ox = np.mgrid[-r:r + 1, -r:r + 1]
    disc = (oy * oy + ox * ox) <= r * r

    heap = [(0.0, int(y), int(x)) for y, x in np.argwhere(region.band)]
    heapq.heapify(heap)
    while heap:
        _, y, x = heapq.heappop(heap)
        if finalized[y, x] and unknown[y, x]:
            continue
        finalized[y, x] = True
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if not (0 <= ny < h and 0 <= nx < w) or finalized[ny, nx]:
                continue
            t = _arrival_time(T, ny, nx)
            if t >= T[ny, nx]:
                continue
            T[ny, nx] = t
            out[ny, nx] = _weighted_value(out, T, source, disc, ny, nx, r)
            source[ny, nx] = True
            heapq.heappush(heap, (t, ny, nx))
    return out


def _weighted_value(vals, T, source, disc, y, x, r):
    h, w = vals.shape
    y0, y1 = max(0, y - r), min(h, y + r + 1)
    x0, x1 = max(0, x - r), min(w, x + r + 1)
    win = disc[y0 - y + r:y1 - y + r, x0 - x + r:x1 - x + r] & source[y0:y1, x0:x1]
    win[y - y0, x - x0] = False
    qy, qx = np.nonzero(win)
    ry = y - (qy + y0)
    rx = x - (qx + x0)
    dist2 = (ry * ry + rx * rx).astype(np.float64)
    ny, nx = _front_normal(T, y, x)
    direction = np.abs(ry * ny + rx * nx) / np.sqrt(dist2)
    direction = np.where(direction <= 1e-2, 1e-6, direction)
    tq = T[qy + y0, qx + x0]
    level = 1.0 / (1.0 + np.abs(tq - T[y, x]))
    weight = direction * level / dist2
    return float(np.dot(weight, vals[qy + y0, qx + x0]) / weight.sum())


def weighted_median(values, weights) -> float:
    """Smallest value whose cumulative weight reaches half the total."""
    order = np.argsort(values, kind="stable")
    v = np.asarray(values)[order]
    cw = np.cumsum(np.asarray(weights)[order])
    return float(v[np.searchsorted(cw, 0.5 * cw[-1], side="left")])


def bilateral_median(d, guide, window: int = 7, sigma_color: float = 0.1, chunk_rows: int = 64) -> np.ndarray:
    """Weighted median over a square window, weighted by colour affinity
    ``exp(-|c_q - c_p|^2 / (2 sigma^2))`` to the centre pixel of ``guide``.

    Window positions outside the image carry zero weight.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd, got {window}")
    d = np.asarray(d, dtype=np.float64)
    guide = np.asarray(guide, dtype=np.float64)
    check_same_shape(d, guide, names=["depth", "guide"])
    if guide.ndim == 2:
        guide = guide[..., None]
    if window == 1:
        return d.copy()
    r = window // 2
    h, w = d.shape
    dp = np.pad(d, r, mode="edge")
    gp = np.pad(guide, ((r, r), (r, r), (0, 0)), mode="edge")
    inside = np.pad(np.ones_like(d, dtype=bool), r)
    out = np.empty_like(d)
    for y0 in range(0, h, chunk_rows):
        y1 = min(h, y0 + chunk_rows)
        rows = slice(y0, y1 + 2 * r)
        vals = sliding_window_view(dp[rows], (window, window)).reshape(y1 - y0, w, -1)
        cols = sliding_window_view(gp[rows], (window, window), axis=(0, 1))
        cols = cols.reshape(y1 - y0, w, guide.shape[2], -1)
        ok = sliding_window_view(inside[rows], (window, window)).reshape(y1 - y0, w, -1)
        center = guide[y0:y1, :, :, None]
        dist2 = ((cols - center) ** 2).sum(axis=2)
        wts = np.exp(-dist2 / (2.0 * sigma_color ** 2)) * ok
        order = np.argsort(vals, axis=-1, kind="stable")
        v = np.take_along_axis(vals, order, axis=-1)
        cw = np.cumsum(np.take_along_axis(wts, order, axis=-1), axis=-1)
        idx = np.argmax(cw >= 0.5 * cw[..., -1:], axis=-1)
        out[y0:y1] = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return out
