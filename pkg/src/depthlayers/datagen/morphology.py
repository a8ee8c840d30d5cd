"""Grayscale/binary morphology and Gaussian blur with replicate borders."""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from ..core import require_binary


def _check_kernel(kernel: int):
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {kernel}")


def dilate(d, kernel: int = 3, iters: int = 1) -> np.ndarray:
    """Grayscale max-filter applied ``iters`` times (square window)."""
    _check_kernel(kernel)
    if iters < 0:
        raise ValueError("iters must be >= 0")
    out = np.asarray(d, dtype=np.float64)
    for _ in range(iters):
        out = ndimage.maximum_filter(out, size=kernel, mode="nearest")
    return out if iters else out.copy()


def erode(d, kernel: int = 3, iters: int = 1) -> np.ndarray:
    """Grayscale min-filter applied ``iters`` times (square window)."""
    _check_kernel(kernel)
    if iters < 0:
        raise ValueError("iters must be >= 0")
    out = np.asarray(d, dtype=np.float64)
    for _ in range(iters):
        out = ndimage.minimum_filter(out, size=kernel, mode="nearest")
    return out if iters else out.copy()


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalised 1-D Gaussian taps with radius ``ceil(3*sigma)``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return np.ones(1)
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def gaussian_blur(d, sigma: float) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    taps = gaussian_kernel(sigma)
    if taps.size == 1:
        return d.copy()
    out = ndimage.correlate1d(d, taps, axis=0, mode="nearest")
    return ndimage.correlate1d(out, taps, axis=1, mode="nearest")


def binary_erode(m, kernel: int, border: str = "replicate") -> np.ndarray:
    """Binary erosion with a ``kernel x kernel`` square.

    ``border="replicate"`` extends the mask past the frame edge;
    ``border="zero"`` treats the outside as background so shapes touching the
    frame shrink inward.
    """
    _check_kernel(kernel)
    m = np.asarray(m)
    require_binary(m)
    mode = "nearest" if border == "replicate" else "constant"
    out = ndimage.minimum_filter(m.astype(np.float64), size=kernel, mode=mode, cval=0.0)
    return out


def binary_dilate(m, kernel: int, border: str = "replicate") -> np.ndarray:
    _check_kernel(kernel)
    m = np.asarray(m)
    require_binary(m)
    mode = "nearest" if border == "replicate" else "constant"
    return ndimage.maximum_filter(m.astype(np.float64), size=kernel, mode=mode, cval=0.0)


def degrade_mask(m, op: str, k: int) -> np.ndarray:
    """Binary opening (erode then dilate) or closing (dilate then erode).

    ``k == 0`` returns the mask unchanged; otherwise ``k`` must be odd.
    """
    m = np.asarray(m, dtype=np.float64)
    require_binary(m)
    if op not in ("opening", "closing"):
        raise ValueError(f"unknown degradation op {op!r}")
    if k == 0:
        return m.copy()
    if k < 3 or k % 2 == 0:
        raise ValueError(f"degradation kernel must be odd and >= 3, got {k}")
    if op == "opening":
        return binary_dilate(binary_erode(m, k), k)
    return binary_erode(binary_dilate(m, k), k)
