"""Layered refinement engine: run a backend on the mask and on its inverse,
merge through the mask, and the baselines built from the same parts."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .completion import FillRegion, propagate_fill
from .core import check_same_shape, inverse, merge_layers, require_binary
from .datagen.crop import qualifying_instances
from .datagen.morphology import binary_dilate, binary_erode


@runtime_checkable
class RefinerBackend(Protocol):
    def refine_layer(self, depth: np.ndarray, rgb: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Refine ``depth``, completing the ``mask == 0`` region from the
        ``mask == 1`` region."""


class BackendError(RuntimeError):
    def __init__(self, layer: str, cause: BaseException):
        super().__init__(f"backend failed on {layer}: {cause}")
        self.layer = layer
        self.cause = cause


class IdentityBackend:
    """Returns the input depth; for exercising the engine."""

    def refine_layer(self, depth, rgb, mask):
        return np.array(depth, dtype=np.float64, copy=True)


class PropagationBackend:
    """Keeps the ``mask == 1`` pixels and propagates them into the rest."""

    def __init__(self, radius: int = 5):
        self.radius = radius

    def refine_layer(self, depth, rgb, mask):
        mask = np.asarray(mask)
        if not (mask > 0.5).any():
            return np.array(depth, dtype=np.float64, copy=True)
        return propagate_fill(depth, FillRegion(mask <= 0.5), self.radius)


@dataclass(frozen=True)
class LayeredResult:
    layer1: np.ndarray
    layer2: np.ndarray
    merged: np.ndarray


def _run(backend, layer, depth, rgb, mask):
    try:
        out = np.asarray(backend.refine_layer(depth, rgb, mask), dtype=np.float64)
    except Exception as exc:  # noqa: BLE001 - re-raised with the layer attached
        raise BackendError(layer, exc) from exc
    if out.shape != depth.shape:
        raise BackendError(layer, ValueError(f"output shape {out.shape} != {depth.shape}"))
    if not np.all(np.isfinite(out)):
        raise BackendError(layer, FloatingPointError("non-finite output"))
    return out


def refine_layered(backend: RefinerBackend, d, rgb, m, merge_mask=None) -> LayeredResult:
    """Refine the mask and inverse-mask layers separately, then merge.

    ``m`` drives both backend passes and must be binary. A soft
    ``merge_mask`` may replace it for the final blend.
    """
    d = np.asarray(d, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    check_same_shape(d, rgb, m, names=["depth", "rgb", "mask"])
    require_binary(m, "refinement mask")
    layer1 = _run(backend, "layer1 (mask)", d, rgb, m)
    layer2 = _run(backend, "layer2 (inverse mask)", d, rgb, inverse(m))
    merged = merge_layers(layer1, layer2, m if merge_mask is None else merge_mask)
    return LayeredResult(layer1, layer2, merged)


def direct_refine(backend: RefinerBackend, d, rgb, m) -> np.ndarray:
    """Single backend pass with the mask as conditioning; no layering."""
    d = np.asarray(d, dtype=np.float64)
    check_same_shape(d, rgb, m, names=["depth", "rgb", "mask"])
    return _run(backend, "direct", d, rgb, np.asarray(m, dtype=np.float64))


def merge_by_max_change(d, candidates) -> np.ndarray:
    """Per pixel, keep the candidate that moved farthest from ``d``.

    Ties go to the earliest candidate.
    """
    d = np.asarray(d, dtype=np.float64)
    if not candidates:
        return d.copy()
    stack = np.stack(candidates)
    pick = np.argmax(np.abs(stack - d[None]), axis=0)
    return np.take_along_axis(stack, pick[None], axis=0)[0]


def refine_with_masks(backend, d, rgb, masks) -> np.ndarray:
    merged = [refine_layered(backend, d, rgb, m).merged for m in masks]
    return merge_by_max_change(d, merged)


def instance_masks(inst, min_fraction: float = 0.01) -> list[np.ndarray]:
    inst = np.asarray(inst)
    return [(inst == i).astype(np.float64) for i in qualifying_instances(inst, min_fraction)]


def refine_instances(backend: RefinerBackend, d, rgb, inst, min_fraction: float = 0.01) -> np.ndarray:
    """Layered refinement per instance (ids covering ``min_fraction`` of the
    image, ascending), merged by largest absolute change from ``d``."""
    d = np.asarray(d, dtype=np.float64)
    check_same_shape(d, inst, names=["depth", "instances"])
    return refine_with_masks(backend, d, rgb, instance_masks(inst, min_fraction))


def baseline_layered_propagation(d, rgb, m, dilate_k: int = 5, erode_k: int = 5,
                                 radius: int = 5) -> LayeredResult:
    """Propagation-fill baseline with hand-set uncertainty bands.

    The mask layer is outpainted from the eroded mask; the background layer
    is inpainted over the dilated mask. The two are merged with ``m``.
    """
    d = np.asarray(d, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    check_same_shape(d, m, names=["depth", "mask"])
    require_binary(m)

    core = binary_erode(m, erode_k)
    if m.any() and not core.any():
        warnings.warn(f"erosion with k={erode_k} removed the mask; retrying with k=3", stacklevel=2)
        core = binary_erode(m, 3)
    grown = binary_dilate(m, dilate_k)
    if (m == 0).any() and grown.all():
        warnings.warn(f"dilation with k={dilate_k} covered the image; retrying with k=3", stacklevel=2)
        grown = binary_dilate(m, 3)

    layer1 = d.copy() if not core.any() else propagate_fill(d, FillRegion(core == 0), radius)
    layer2 = d.copy() if grown.all() else propagate_fill(d, FillRegion(grown), radius)
    return LayeredResult(layer1, layer2, merge_layers(layer1, layer2, m))
