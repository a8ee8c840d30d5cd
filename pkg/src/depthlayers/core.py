"""Raster containers, compositing arithmetic, depth normalisation and
least-squares scale/shift alignment.

Depth maps are plain ``float64`` arrays of shape ``(H, W)`` holding inverse
depth in the working range ``[0, 10]``. Masks are ``(H, W)`` arrays in
``[0, 1]``; RGB images are ``(H, W, 3)`` arrays in ``[0, 1]``; instance maps
are non-negative integer ``(H, W)`` arrays with 0 meaning unlabeled.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

DEPTH_MIN = 0.0
DEPTH_MAX = 10.0


class DegenerateInputWarning(UserWarning):
    """Raised (as a warning) when an input is degenerate but handled."""


@dataclass(frozen=True)
class DepthMap:
    """Inverse-depth raster with an optional validity mask."""

    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", values)
        if self.valid is not None:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != values.shape:
                raise ValueError("valid mask shape does not match depth")
            object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def valid_mask(self) -> np.ndarray:
        finite = np.isfinite(self.values)
        return finite if self.valid is None else finite & self.valid


@dataclass(frozen=True)
class AlignmentResult:
    scale: float
    shift: float
    aligned: np.ndarray
    degenerate: bool = False


def check_same_shape(*arrays, names=None):
    shapes = [np.shape(a)[:2] for a in arrays]
    if any(s != shapes[0] for s in shapes):
        names = names or [f"arg{i}" for i in range(len(arrays))]
        desc = ", ".join(f"{n}={s}" for n, s in zip(names, shapes))
        raise ValueError(f"dimension mismatch: {desc}")


def is_binary(mask) -> bool:
    mask = np.asarray(mask)
    return bool(np.all((mask == 0) | (mask == 1)))


def require_binary(mask, what="mask"):
    if not is_binary(mask):
        raise ValueError(f"{what} must be binary (values in {{0, 1}})")


def inverse(mask) -> np.ndarray:
    return 1.0 - np.asarray(mask, dtype=np.float64)


def composite(a, b, m) -> np.ndarray:
    """Blend ``a`` over ``b`` with alpha ``m``: ``m*a + (1-m)*b``.

    Works for depth ``(H, W)`` and RGB ``(H, W, 3)`` inputs alike; the mask is
    broadcast over channels.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: a={a.shape}, b={b.shape}")
    if m.shape != a.shape[:2] or m.ndim != 2:
        raise ValueError(f"dimension mismatch: mask={m.shape}, layers={a.shape}")
    if np.any((m < 0) | (m > 1)):
        raise ValueError("mask values must lie in [0, 1]")
    if a.ndim == 3:
        m = m[..., None]
    # Written as a select for binary alpha so the result is bit-identical to
    # the source layer (m*a + 0*b can differ from a for inf/-0.0).
    out = m * a + (1.0 - m) * b
    hard1 = m == 1
    hard0 = m == 0
    out = np.where(hard1, a, out)
    out = np.where(hard0, b, out)
    return out


def merge_layers(d1, d2, m) -> np.ndarray:
    """Merge two refined depth layers with the (binary or soft) mask."""
    d1 = np.asarray(d1, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    if d1.ndim != 2:
        raise ValueError("merge_layers expects single-channel depth layers")
    return composite(d1, d2, m)


def normalize_depth(d, valid=None) -> np.ndarray:
    """Affinely map valid values onto ``[0, 10]``.

    A constant map has no defined scale; it comes back as all 5.0 and a
    :class:`DegenerateInputWarning` is emitted.
    """
    d = np.asarray(d, dtype=np.float64)
    mask = np.isfinite(d) if valid is None else (np.asarray(valid, bool) & np.isfinite(d))
    out = d.copy()
    if not mask.any():
        raise ValueError("depth map has no valid pixels")
    lo = d[mask].min()
    hi = d[mask].max()
    if hi == lo:
        warnings.warn("constant depth map normalised to 5.0", DegenerateInputWarning, stacklevel=2)
        out[mask] = 0.5 * (DEPTH_MIN + DEPTH_MAX)
        return out
    if lo == DEPTH_MIN and hi == DEPTH_MAX:
        return out
    out[mask] = (d[mask] - lo) * ((DEPTH_MAX - DEPTH_MIN) / (hi - lo)) + DEPTH_MIN
    # Pin the endpoints exactly; the affine map can miss by an ulp.
    out[mask & (d == lo)] = DEPTH_MIN
    out[mask & (d == hi)] = DEPTH_MAX
    return out


def valid_overlap(pred, gt, valid=None) -> np.ndarray:
    mask = np.isfinite(pred) & np.isfinite(gt)
    if valid is not None:
        mask &= np.asarray(valid, dtype=bool)
    return mask


def align_scale_shift(pred, gt, valid=None) -> AlignmentResult:
    """Closed-form least-squares fit of ``s*pred + t`` to ``gt``.

    Solves the 2x2 normal equations over the valid overlap. A constant
    prediction yields ``s=0, t=mean(gt)`` and ``degenerate=True``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    check_same_shape(pred, gt, names=["pred", "gt"])
    mask = valid_overlap(pred, gt, valid)
    n = int(mask.sum())
    if n < 2:
        raise ValueError("alignment needs at least two valid overlapping pixels")
    p = pred[mask]
    g = gt[mask]
    # Centred form of the normal equations; better conditioned than the raw
    # [[sum p^2, sum p], [sum p, n]] system with identical solution.
    p_mean = p.mean()
    g_mean = g.mean()
    pc = p - p_mean
    spp = float(np.dot(pc, pc))
    if spp == 0.0:
        warnings.warn("constant prediction; alignment degenerate", DegenerateInputWarning, stacklevel=2)
        scale, shift, degenerate = 0.0, float(g_mean), True
    else:
        scale = float(np.dot(pc, g - g_mean) / spp)
        shift = float(g_mean - scale * p_mean)
        degenerate = False
    aligned = pred.copy()
    aligned[mask] = scale * pred[mask] + shift
    return AlignmentResult(scale=scale, shift=shift, aligned=aligned, degenerate=degenerate)
