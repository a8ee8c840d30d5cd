"""Composite depth loss: L1 + L2 + four-level gradient-matching term, summed
with unit weights."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

GRAD_LEVELS = 4


def _as_image(x) -> Tensor:
    t = ad.as_tensor(x)
    if t.value.ndim == 2:
        return _reshape(t, (1, 1) + t.shape)
    if t.value.ndim == 3:
        return _reshape(t, (t.shape[0], 1) + t.shape[1:])
    return t


def _reshape(t: Tensor, shape) -> Tensor:
    orig = t.shape
    return ad._op(t.value.reshape(shape), (t,), lambda g: (g.reshape(orig),))


def gradient_loss(residual: Tensor, levels: int = GRAD_LEVELS) -> Tensor:
    """Sum over scales of mean |d/dx r| + mean |d/dy r|; the residual is
    2x average-pooled between scales."""
    terms = []
    r = residual
    for k in range(levels):
        if k:
            if min(r.shape[-2:]) < 2:
                break
            r = ad.avg_pool2(r)
        if r.shape[-1] > 1:
            terms.append(ad.mean(ad.absolute(ad.diff_x(r))))
        if r.shape[-2] > 1:
            terms.append(ad.mean(ad.absolute(ad.diff_y(r))))
    return ad.total(*terms) if terms else ad.scale(ad.mean(r), 0.0)


def loss_terms(pred, target) -> dict[str, Tensor]:
    pred = _as_image(pred)
    target = _as_image(target)
    if pred.shape != target.shape:
        raise ValueError(f"loss shape mismatch: pred {pred.shape}, target {target.shape}")
    r = ad.sub(pred, target)
    l1 = ad.mean(ad.absolute(r))
    l2 = ad.mean(ad.square(r))
    grad = gradient_loss(r)
    return {"l1": l1, "l2": l2, "grad": grad, "total": ad.total(l1, l2, grad)}


def depth_loss(pred, target) -> Tensor:
    return loss_terms(pred, target)["total"]


def loss_values(terms: dict[str, Tensor]) -> dict[str, float]:
    return {k: float(np.asarray(v.value)) for k, v in terms.items()}
