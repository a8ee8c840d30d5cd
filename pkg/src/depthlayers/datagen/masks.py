"""Procedural binary masks standing in for segmentation-dataset masks."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

MASK_KINDS = ("object", "sky", "human", "human-with-holes")
COVERAGE_RANGE = (0.05, 0.8)

# Mask mix used when sampling kinds automatically: 50% objects, 20% sky,
# 30% humans of which half carry holes.
DEFAULT_KIND_WEIGHTS = {"object": 0.5, "sky": 0.2, "human": 0.15, "human-with-holes": 0.15}


def _size_hw(size) -> tuple[int, int]:
    if np.isscalar(size):
        return int(size), int(size)
    h, w = size
    return int(h), int(w)


def _radial_profile(rng, n_harmonics=4, roughness=0.25):
    amps = rng.uniform(0, roughness, n_harmonics) / np.arange(1, n_harmonics + 1)
    phases = rng.uniform(0, 2 * np.pi, n_harmonics)

    def profile(theta):
        r = np.ones_like(theta)
        for k, (a, p) in enumerate(zip(amps, phases), start=1):
            r = r + a * np.cos(k * theta + p)
        return r

    return profile


def _fit_coverage(shape_fn, target, lo=0.01, hi=4.0, steps=40):
    """Bisect a scale factor so the shape covers ``target`` of the frame."""
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if shape_fn(mid).mean() < target:
            lo = mid
        else:
            hi = mid
    return shape_fn(0.5 * (lo + hi))


def _blob(h, w, rng, target, aspect=1.0, anchor_bottom=False):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy = rng.uniform(0.35, 0.65) * h
    cx = rng.uniform(0.35, 0.65) * w
    profile = _radial_profile(rng)
    base = 0.5 * min(h, w)
    dy = (yy - cy) / aspect
    dx = xx - cx
    rad = np.hypot(dy, dx)
    theta = np.arctan2(dy, dx)
    limit = profile(theta)

    def shape(scale):
        inside = rad < scale * base * limit
        if anchor_bottom:
            # Extend the figure down to the bottom edge, like a torso.
            col_has = inside.any(axis=0)
            below = (yy > cy) & col_has[None, :] & (np.abs(dx) < scale * base * 0.6)
            inside = inside | below
        return inside

    return _fit_coverage(shape, target)


def _sky(h, w, rng):
    x = np.linspace(0, 2 * np.pi, w)
    level = rng.uniform(0.2, 0.6) * h
    curve = np.full(w, level)
    for k in range(1, 4):
        curve += rng.uniform(0, 0.08 * h / k) * np.sin(k * x + rng.uniform(0, 2 * np.pi))
    lo, hi = COVERAGE_RANGE
    curve = np.clip(curve, (lo + 0.01) * h, (hi - 0.01) * h)
    yy = np.arange(h)[:, None]
    return yy < curve[None, :]


def _punch_holes(blob, rng):
    h, w = blob.shape
    out = blob.copy()
    n_holes = int(rng.integers(1, 4))
    yy, xx = np.mgrid[0:h, 0:w]
    made = 0
    for _ in range(n_holes):
        r = max(1.5, rng.uniform(0.04, 0.1) * min(h, w))
        # Keep a wall of foreground around each hole so it stays enclosed;
        # the zero padding counts the frame edge as background.
        dist = ndimage.distance_transform_edt(np.pad(out, 1))[1:-1, 1:-1]
        cand = np.argwhere(dist >= r + 2.5)
        if len(cand) == 0:
            continue
        cy, cx = cand[rng.integers(len(cand))]
        out[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = False
        made += 1
    return out, made


def synthesize_mask(kind: str, size, rng: np.random.Generator) -> np.ndarray:
    """Binary ``float64`` mask covering 5-80% of the frame.

    ``object``: smooth random blob. ``sky``: region above a wavy horizon.
    ``human``: tall blob anchored toward the bottom edge.
    ``human-with-holes``: human blob with 1-3 enclosed holes.
    """
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}")
    h, w = _size_hw(size)
    if kind == "object":
        m = _blob(h, w, rng, rng.uniform(0.08, 0.5))
    elif kind == "sky":
        m = _sky(h, w, rng)
    elif kind == "human":
        m = _blob(h, w, rng, rng.uniform(0.1, 0.45), aspect=2.0, anchor_bottom=True)
    else:
        m = np.zeros((h, w), bool)
        made = 0
        for _ in range(10):
            body = _blob(h, w, rng, rng.uniform(0.25, 0.5), aspect=1.6)
            m, made = _punch_holes(body, rng)
            if made:
                break
        if not made:
            raise RuntimeError("could not place an enclosed hole; frame too small")
    return m.astype(np.float64)


def sample_mask_kind(rng: np.random.Generator, weights: dict | None = None) -> str:
    weights = weights or DEFAULT_KIND_WEIGHTS
    kinds = list(weights)
    p = np.array([weights[k] for k in kinds], dtype=np.float64)
    return kinds[int(rng.choice(len(kinds), p=p / p.sum()))]
