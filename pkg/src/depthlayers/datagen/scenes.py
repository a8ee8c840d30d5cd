"""Built-in synthetic RGB-D scenes: piecewise-planar inverse depth with RGB
shading that follows depth, so the pipeline runs without external data."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .masks import _size_hw


def _plane(h, w, rng, max_tilt=1.5):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    offset = rng.uniform(1.5, 8.5)
    gy, gx = rng.uniform(-max_tilt, max_tilt, 2)
    return offset + gy * (yy / h - 0.5) + gx * (xx / w - 0.5)


def synthetic_scene(size, rng: np.random.Generator, n_planes: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(rgb, depth)`` for a random scene made of ``n_planes`` tilted
    planes separated by straight cuts.

    Each plane has its own base colour; brightness rises with inverse depth
    and a faint smooth texture breaks up flat colour.
    """
    h, w = _size_hw(size)
    depth = _plane(h, w, rng)
    color = np.broadcast_to(rng.uniform(0.2, 0.8, 3), (h, w, 3)).copy()
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(n_planes - 1):
        angle = rng.uniform(0, np.pi)
        cy, cx = rng.uniform(0.25, 0.75, 2) * (h, w)
        side = (np.cos(angle) * (xx - cx) + np.sin(angle) * (yy - cy)) > 0
        depth = np.where(side, _plane(h, w, rng), depth)
        color[side] = rng.uniform(0.2, 0.8, 3)
    depth = np.clip(depth, 0.2, 9.8)
    shade = 0.6 + 0.04 * depth
    texture = ndimage.gaussian_filter(rng.standard_normal((h, w)), 2.0)
    texture *= 0.05 / max(texture.std(), 1e-12)
    rgb = np.clip(color * shade[..., None] + texture[..., None], 0.0, 1.0)
    return rgb, depth
