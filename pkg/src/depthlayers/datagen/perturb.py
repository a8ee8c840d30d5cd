"""Depth perturbations that mimic the failure modes of monocular depth
predictors: lost thin structures, misaligned and blurry boundaries, and
wrong values inside enclosed background holes.

Random draws happen in a fixed order so a run can be replayed stage by
stage: ``k_d``, ``k_e``, scheme coin (morphology); blur-size coin, sigma
(blur); hole coin, then one value per hole (hole perturbation).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from ..core import check_same_shape, require_binary
from .morphology import dilate, erode, gaussian_blur

HOLE_KIND = "human-with-holes"


@dataclass
class PerturbConfig:
    morph_iter_range: tuple[int, int] = (1, 5)
    morph_kernel: int = 3
    blur_small_sigma: tuple[float, float] = (0.0, 1.0)
    blur_large_sigma: tuple[float, float] = (1.0, 5.0)
    blur_small_prob: float = 0.5
    order_scheme_prob: float = 0.5
    hole_ring_width: int = 10
    hole_perturb_prob: float = 0.5

    def __post_init__(self):
        self.morph_iter_range = tuple(int(v) for v in self.morph_iter_range)
        self.blur_small_sigma = tuple(float(v) for v in self.blur_small_sigma)
        self.blur_large_sigma = tuple(float(v) for v in self.blur_large_sigma)
        for name in ("morph_iter_range", "blur_small_sigma", "blur_large_sigma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
        if self.morph_iter_range[0] < 0:
            raise ValueError("morphology iterations must be >= 0")
        if self.blur_small_sigma[0] < 0 or self.blur_large_sigma[0] < 0:
            raise ValueError("blur sigma must be >= 0")
        for name in ("blur_small_prob", "order_scheme_prob", "hole_perturb_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        if self.morph_kernel < 3 or self.morph_kernel % 2 == 0:
            raise ValueError("morph_kernel must be odd and >= 3")
        if self.hole_ring_width < 1:
            raise ValueError("hole_ring_width must be >= 1")

    def hole_prob_for(self, mask_kind: str | None) -> float:
        """Hole perturbation only applies to masks of people with holes."""
        return self.hole_perturb_prob if mask_kind == HOLE_KIND else 0.0

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "PerturbConfig":
        return cls(**data)


def random_morph(d, cfg: PerturbConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = cfg.morph_iter_range
    k_d = int(rng.integers(lo, hi + 1))
    k_e = int(rng.integers(lo, hi + 1))
    scheme_a = bool(rng.random() < cfg.order_scheme_prob)
    return morph_scheme(d, k_d, k_e, scheme_a, cfg.morph_kernel)


def morph_scheme(d, k_d: int, k_e: int, scheme_a: bool, kernel: int = 3) -> np.ndarray:
    """Scheme A is dilate, erode, erode, dilate; scheme B swaps the roles."""
    k = kernel
    if scheme_a:
        out = dilate(d, k, k_d)
        out = erode(out, k, k_e)
        out = erode(out, k, k_e)
        return dilate(out, k, k_d)
    out = erode(d, k, k_e)
    out = dilate(out, k, k_d)
    out = dilate(out, k, k_d)
    return erode(out, k, k_e)


def find_holes(m) -> list[np.ndarray]:
    """Zero regions of a binary mask that are enclosed by foreground.

    A hole is a 4-connected component of zero pixels that cannot reach the
    image border through zero pixels. Components are returned as boolean
    rasters in raster-scan order of their first pixel.
    """
    m = np.asarray(m)
    require_binary(m, "find_holes mask")
    background = m == 0
    labels, n = ndimage.label(background)  # default structure is 4-connected
    if n == 0:
        return []
    edge = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    touching = set(np.unique(edge[edge > 0]).tolist())
    return [labels == i for i in range(1, n + 1) if i not in touching]


def hole_ring(hole: np.ndarray, width: int) -> np.ndarray:
    """Pixels outside ``hole`` within Euclidean distance ``width`` of it."""
    dist = ndimage.distance_transform_edt(~hole)
    return (dist > 0) & (dist <= width)


def hole_perturb(d, m, cfg: PerturbConfig, rng: np.random.Generator) -> np.ndarray:
    """Fill each mask hole with one value drawn between the hole's own mean
    depth and the mean depth of its surrounding ring."""
    d = np.asarray(d, dtype=np.float64)
    check_same_shape(d, m, names=["depth", "mask"])
    out = d.copy()
    for hole in find_holes(m):
        ring = hole_ring(hole, cfg.hole_ring_width)
        mu_in = d[hole].mean()
        mu_out = d[ring].mean() if ring.any() else mu_in
        lo, hi = min(mu_in, mu_out), max(mu_in, mu_out)
        out[hole] = rng.uniform(lo, hi)
    return out


def sample_blur_sigma(cfg: PerturbConfig, rng: np.random.Generator) -> float:
    small = rng.random() < cfg.blur_small_prob
    lo, hi = cfg.blur_small_sigma if small else cfg.blur_large_sigma
    return float(rng.uniform(lo, hi))


def perturb(d, m, cfg: PerturbConfig, rng: np.random.Generator, hole_prob: float | None = None) -> np.ndarray:
    """Morphology, then blur, then (sometimes) hole perturbation."""
    d = np.asarray(d, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    check_same_shape(d, m, names=["depth", "mask"])
    require_binary(m)
    hole_prob = cfg.hole_perturb_prob if hole_prob is None else hole_prob
    out = random_morph(d, cfg, rng)
    out = gaussian_blur(out, sample_blur_sigma(cfg, rng))
    if rng.random() < hole_prob:
        out = hole_perturb(out, m, cfg, rng)
    return out


def augment_rgb(rgb, enabled: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """Photometric augmentation hook; currently a pass-through."""
    return np.asarray(rgb, dtype=np.float64)
