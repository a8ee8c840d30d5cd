"""Object-aware crop sampling and resizing for training patches."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class NoQualifyingInstance(LookupError):
    """No instance covers the minimum pixel fraction; caller should resample."""


@dataclass(frozen=True)
class CropSpec:
    origin: tuple[int, int]  # (row, col) of the top-left corner
    size: int
    resized_to: int
    instance_id: int | None = None

    def window(self) -> tuple[slice, slice]:
        y, x = self.origin
        return slice(y, y + self.size), slice(x, x + self.size)


def qualifying_instances(inst, min_fraction: float = 0.01) -> list[int]:
    inst = np.asarray(inst)
    ids, counts = np.unique(inst[inst > 0], return_counts=True)
    return [int(i) for i, c in zip(ids, counts) if c >= min_fraction * inst.size]


def bounding_box(region: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(region.any(axis=1))
    cols = np.flatnonzero(region.any(axis=0))
    return int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])


def sample_crop(inst, patch: int, stuff: bool, rng: np.random.Generator,
                min_fraction: float = 0.01) -> CropSpec:
    """Pick a qualifying instance and a square crop around it.

    Objects that fit in ``patch`` get a ``patch``-sized crop placed uniformly
    among the positions containing their bounding box. Larger objects get a
    crop of side ``p ~ U(s, 2s)`` with ``s = max(bbox_h, bbox_w)``, also
    containing the box. Stuff regions get ``p ~ U(H/2, H)`` anywhere.
    Crop sides are clipped to the image.
    """
    inst = np.asarray(inst)
    if inst.size == 0:
        raise ValueError("empty instance map")
    h, w = inst.shape
    ids = qualifying_instances(inst, min_fraction)
    if not ids:
        raise NoQualifyingInstance(f"no instance covers {min_fraction:.1%} of the image")
    iid = ids[int(rng.integers(len(ids)))]
    limit = min(h, w)

    if stuff:
        p = min(int(rng.integers(math.ceil(h / 2), h + 1)), limit)
        y = int(rng.integers(0, h - p + 1))
        x = int(rng.integers(0, w - p + 1))
        return CropSpec((y, x), p, patch, iid)

    y0, y1, x0, x1 = bounding_box(inst == iid)
    s = max(y1 - y0 + 1, x1 - x0 + 1)
    if s <= patch:
        p = patch
    else:
        p = int(rng.integers(s, 2 * s + 1))
    p = min(p, limit)
    # Top-left positions whose window covers rows y0..y1 and cols x0..x1.
    ylo, yhi = max(0, y1 - p + 1), min(y0, h - p)
    xlo, xhi = max(0, x1 - p + 1), min(x0, w - p)
    if ylo > yhi or xlo > xhi:
        # Box wider than the frame's short side; centre on the box instead.
        ylo = yhi = int(np.clip((y0 + y1 + 1 - p) // 2, 0, h - p))
        xlo = xhi = int(np.clip((x0 + x1 + 1 - p) // 2, 0, w - p))
    y = int(rng.integers(ylo, yhi + 1))
    x = int(rng.integers(xlo, xhi + 1))
    return CropSpec((y, x), p, patch, iid)


def resize(arr, size: tuple[int, int], nearest: bool = False) -> np.ndarray:
    """Resize ``(H, W)`` or ``(H, W, C)`` with half-pixel-centre sampling."""
    arr = np.asarray(arr)
    oh, ow = size
    h, w = arr.shape[:2]
    if (h, w) == (oh, ow):
        return arr.astype(np.float64, copy=True)
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    if nearest:
        yi = np.clip(np.floor(ys + 0.5).astype(int), 0, h - 1)
        xi = np.clip(np.floor(xs + 0.5).astype(int), 0, w - 1)
        return arr[yi][:, xi].astype(np.float64)
    grid = np.meshgrid(ys, xs, indexing="ij")
    src = arr.astype(np.float64)
    if src.ndim == 2:
        return ndimage.map_coordinates(src, grid, order=1, mode="nearest")
    return np.stack([ndimage.map_coordinates(src[..., c], grid, order=1, mode="nearest")
                     for c in range(src.shape[2])], axis=-1)


def apply_crop(arr, spec: CropSpec, nearest: bool = False) -> np.ndarray:
    rows, cols = spec.window()
    return resize(np.asarray(arr)[rows, cols], (spec.resized_to, spec.resized_to), nearest=nearest)
