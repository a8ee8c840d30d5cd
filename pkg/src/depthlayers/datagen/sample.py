"""Training-sample assembly: composite two RGB-D records through a mask and
perturb the composite depth."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..core import composite, require_binary
from .crop import resize
from .masks import DEFAULT_KIND_WEIGHTS, sample_mask_kind, synthesize_mask
from .perturb import PerturbConfig, augment_rgb, find_holes, perturb
from .scenes import synthetic_scene

USER_KIND = "user"


@dataclass
class TrainingSample:
    rgb: np.ndarray        # composite image
    depth: np.ndarray      # composite depth, the refinement target
    perturbed: np.ndarray  # perturbed composite depth, the network input
    mask: np.ndarray
    layer1: np.ndarray     # depth of the record under mask == 1
    layer2: np.ndarray     # depth of the record under mask == 0
    seed: int
    kind: str | None = None


def _fit(record, shape):
    rgb, depth = record
    rgb = np.asarray(rgb, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != shape:
        rgb = resize(rgb, shape)
        depth = resize(depth, shape)
    return rgb, depth


def generate_sample(source_a, source_b, m, cfg: PerturbConfig, rng: np.random.Generator,
                    seed: int = 0, kind: str | None = None, augment: bool = False,
                    hole_prob: float | None = None) -> TrainingSample:
    """Composite ``source_a`` over ``source_b`` with binary mask ``m``.

    Sources are ``(rgb, depth)`` pairs; they are resized to the mask if their
    size differs. ``rng`` is consumed only by the perturbation, so
    ``perturbed`` equals ``perturb(depth, m, cfg, rng')`` for a generator in
    the same state. ``hole_prob`` overrides the kind-derived hole probability.
    """
    m = np.asarray(m, dtype=np.float64)
    require_binary(m, "training mask")
    rgb_a, d_a = _fit(source_a, m.shape)
    rgb_b, d_b = _fit(source_b, m.shape)
    rgb = augment_rgb(composite(rgb_a, rgb_b, m), enabled=augment)
    depth = composite(d_a, d_b, m)
    if hole_prob is None and kind:
        hole_prob = cfg.hole_prob_for(kind)
    perturbed = perturb(depth, m, cfg, rng, hole_prob=hole_prob)
    return TrainingSample(rgb=rgb, depth=depth, perturbed=perturbed, mask=m,
                          layer1=d_a, layer2=d_b, seed=seed, kind=kind)


def synthetic_sample(seed: int, size: int, cfg: PerturbConfig, kind_weights: dict | None = None,
                     n_planes: int = 1, records=None, masks=None) -> TrainingSample:
    """One fully seeded sample: mask kind, mask, two sources, perturbation.

    ``records`` optionally supplies a list of ``(rgb, depth)`` sources to draw
    from; otherwise synthetic planar scenes are generated. ``masks`` replaces
    the procedural masks with user-supplied binary masks (kind ``"user"``);
    those with enclosed holes get hole perturbation like people with holes.
    """
    rng = np.random.default_rng(seed)
    hole_prob = None
    if masks:
        kind = USER_KIND
        m = resize(masks[int(rng.integers(len(masks)))], (size, size), nearest=True)
        hole_prob = cfg.hole_perturb_prob if find_holes(m) else 0.0
    else:
        kind = sample_mask_kind(rng, kind_weights or DEFAULT_KIND_WEIGHTS)
        m = synthesize_mask(kind, size, rng)
    if records:
        i, j = rng.choice(len(records), size=2, replace=len(records) < 2)
        a, b = records[int(i)], records[int(j)]
    else:
        a = synthetic_scene(size, rng, n_planes)
        b = synthetic_scene(size, rng, n_planes)
    return generate_sample(a, b, m, cfg, rng, seed=seed, kind=kind, hole_prob=hole_prob)


def _sample_task(args):
    return synthetic_sample(*args)


def generate_dataset(count: int, master_seed: int, size: int, cfg: PerturbConfig | None = None,
                     kind_weights: dict | None = None, n_planes: int = 1, records=None,
                     workers: int = 1, masks=None) -> list[TrainingSample]:
    """Sample ``i`` uses seed ``master_seed + i``, so results do not depend on
    ``workers``."""
    cfg = cfg or PerturbConfig()
    tasks = [(master_seed + i, size, cfg, kind_weights, n_planes, records, masks) for i in range(count)]
    if workers <= 1 or count < 2:
        return [_sample_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sample_task, tasks, chunksize=max(1, count // (4 * workers))))
