"""Evaluation metrics on scale/shift-aligned inverse depth.

RMSE, WHDR, depth-boundary accuracy/completeness, mask boundary error (MBE),
relative refinement ratio (R3) and signed improvement maps.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .core import DegenerateInputWarning, align_scale_shift, check_same_shape, require_binary, valid_overlap
from .datagen.crop import qualifying_instances


def rmse(pred, gt, valid=None) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    check_same_shape(pred, gt, names=["pred", "gt"])
    mask = valid_overlap(pred, gt, valid)
    if not mask.any():
        raise ValueError("no valid overlap between prediction and ground truth")
    diff = pred[mask] - gt[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def ordinal_label(a, b, delta: float) -> np.ndarray:
    """+1 if ``a/b > 1+delta``, -1 if ``a/b < 1/(1+delta)``, else 0.

    Written multiplicatively so zero inverse depth needs no division.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    k = 1.0 + delta
    return np.where(a > k * b, 1, np.where(k * a < b, -1, 0))


def whdr(pred, gt, pairs=10000, delta: float = 0.1, rng: np.random.Generator | None = None,
         valid=None) -> float:
    """Fraction of point pairs whose ordinal relation disagrees with ``gt``.

    ``pairs`` is a sample count (pairs drawn uniformly with replacement from
    valid pixels, the two points distinct) or ``"all"`` for every unordered
    pair. An all-equal ground truth returns 0 with a warning.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    check_same_shape(pred, gt, names=["pred", "gt"])
    mask = valid_overlap(pred, gt, valid)
    p = pred[mask]
    g = gt[mask]
    n = p.size
    if n < 2:
        raise ValueError("WHDR needs at least two valid pixels")
    if np.all(g == g[0]):
        warnings.warn("ground truth is constant; WHDR undefined, returning 0", DegenerateInputWarning, stacklevel=2)
        return 0.0
    if isinstance(pairs, str):
        if pairs != "all":
            raise ValueError(f"pairs must be an int or 'all', got {pairs!r}")
        i, j = np.triu_indices(n, k=1)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        i = rng.integers(0, n, int(pairs))
        j = (i + rng.integers(1, n, int(pairs))) % n
    disagree = ordinal_label(g[i], g[j], delta) != ordinal_label(p[i], p[j], delta)
    return float(disagree.mean())


def mask_boundary(m, erode_k: int = 3, dilate_k: int = 5) -> np.ndarray:
    """Boolean band around a binary instance mask: the mask minus its
    erosion, dilated. Outside the frame counts as background."""
    m = np.asarray(m)
    require_binary(m)
    inside = m > 0.5
    if not inside.any():
        raise ValueError("empty instance mask")
    eroded = ndimage.binary_erosion(inside, structure=np.ones((erode_k, erode_k), bool), border_value=0)
    edge = inside & ~eroded
    return ndimage.binary_dilation(edge, structure=np.ones((dilate_k, dilate_k), bool))


def mbe_per_instance(pred, gt, inst, min_fraction: float = 0.01, valid=None,
                     erode_k: int = 3, dilate_k: int = 5) -> dict[int, tuple[float, int]]:
    """``{instance id: (boundary RMSE, boundary pixel count)}``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    inst = np.asarray(inst)
    check_same_shape(pred, gt, inst, names=["pred", "gt", "instances"])
    ok = valid_overlap(pred, gt, valid)
    out = {}
    for iid in qualifying_instances(inst, min_fraction):
        band = mask_boundary(inst == iid, erode_k, dilate_k) & ok
        n_b = int(band.sum())
        if n_b == 0:
            continue
        diff = pred[band] - gt[band]
        out[iid] = (float(np.sqrt(np.mean(diff * diff))), n_b)
    return out


def mbe(pred, gt, inst, min_fraction: float = 0.01, valid=None, erode_k: int = 3, dilate_k: int = 5) -> float:
    """Mean over instances of the RMSE on each instance's boundary band."""
    per = mbe_per_instance(pred, gt, inst, min_fraction, valid, erode_k, dilate_k)
    if not per:
        raise ValueError("no qualifying instances for MBE")
    return float(np.mean([v for v, _ in per.values()]))


def improvement_map(initial, refined, gt) -> np.ndarray:
    """``|initial - gt| - |refined - gt|``; positive where refinement helped."""
    initial = np.asarray(initial, dtype=np.float64)
    refined = np.asarray(refined, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    check_same_shape(initial, refined, gt, names=["initial", "refined", "gt"])
    return np.abs(initial - gt) - np.abs(refined - gt)


def r3_counts(refined, initial, gt, t: float = 0.05, valid=None) -> tuple[int, int]:
    imp = improvement_map(initial, refined, gt)
    mask = np.isfinite(imp)
    if valid is not None:
        mask &= np.asarray(valid, bool)
    imp = imp[mask]
    return int((imp > t).sum()), int((-imp > t).sum())


def r3(refined, initial, gt, t: float = 0.05, valid=None) -> float:
    """Pixels improved by more than ``t`` over pixels worsened by more than
    ``t``. If neither happens the ratio is 1.0 and a warning flags it."""
    improved, worsened = r3_counts(refined, initial, gt, t, valid)
    return r3_from_counts(improved, worsened)


def r3_from_counts(improved: int, worsened: int) -> float:
    if improved == 0 and worsened == 0:
        warnings.warn("R3: no pixel changed by more than t", DegenerateInputWarning, stacklevel=3)
        return 1.0
    return improved / max(worsened, 1)


def depth_edges(d, threshold: float = 0.05) -> np.ndarray:
    """Pixels whose forward-difference gradient magnitude exceeds
    ``threshold``. Forward differences keep a step edge one pixel wide."""
    d = np.asarray(d, dtype=np.float64)
    gx = np.zeros_like(d)
    gy = np.zeros_like(d)
    gx[:, :-1] = d[:, 1:] - d[:, :-1]
    gy[:-1] = d[1:] - d[:-1]
    return np.hypot(gy, gx) > threshold


def boundary_error(pred, gt, threshold: float = 0.05, theta: float = 10.0) -> tuple[float, float]:
    """Truncated chamfer distances between depth-edge sets.

    ``eps_acc`` averages the distance from each predicted edge pixel to the
    nearest ground-truth edge; ``eps_comp`` the reverse. Distances are capped
    at ``theta``. An empty source set contributes 0; an empty target set puts
    every source pixel at ``theta``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    check_same_shape(pred, gt, names=["pred", "gt"])
    e_pred = depth_edges(pred, threshold)
    e_gt = depth_edges(gt, threshold)
    return _chamfer(e_pred, e_gt, theta), _chamfer(e_gt, e_pred, theta)


def _chamfer(src, dst, theta):
    if not src.any():
        return 0.0
    if not dst.any():
        return float(theta)
    dist = ndimage.distance_transform_edt(~dst)
    return float(np.minimum(dist[src], theta).mean())


@dataclass
class MetricOptions:
    t: float = 0.05
    delta: float = 0.1
    theta: float = 10.0
    edge_threshold: float = 0.05
    pairs: int = 10000
    min_fraction: float = 0.01
    seed: int = 0


@dataclass
class MetricsReport:
    rmse: float
    whdr: float
    mbe: float
    r3: float | None
    eps_acc: float
    eps_comp: float
    per_instance: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    alignment: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_instance"] = {str(k): v for k, v in sorted(self.per_instance.items(), key=lambda kv: int(kv[0]))}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))


def evaluate(pred, gt, inst, initial=None, opts: MetricOptions | None = None, valid=None,
             align: bool = True) -> MetricsReport:
    """Align ``pred`` (and ``initial``) to ``gt`` and compute every metric."""
    opts = opts or MetricOptions()
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    alignment = {}
    if align:
        res = align_scale_shift(pred, gt, valid)
        pred = res.aligned
        alignment = {"scale": res.scale, "shift": res.shift, "degenerate": res.degenerate}
    mask = valid_overlap(pred, gt, valid)
    per = mbe_per_instance(pred, gt, inst, opts.min_fraction, valid)
    if not per:
        raise ValueError("no qualifying instances for MBE")
    acc, comp = boundary_error(pred, gt, opts.edge_threshold, opts.theta)
    rng = np.random.default_rng(opts.seed)
    report = MetricsReport(
        rmse=rmse(pred, gt, valid),
        whdr=whdr(pred, gt, opts.pairs, opts.delta, rng, valid),
        mbe=float(np.mean([v for v, _ in per.values()])),
        r3=None,
        eps_acc=acc,
        eps_comp=comp,
        per_instance={int(k): {"mbe": v, "boundary_pixels": n} for k, (v, n) in per.items()},
        counts={"pairs": int(opts.pairs), "instances": len(per), "valid_pixels": int(mask.sum())},
        alignment=alignment,
    )
    if initial is not None:
        initial = np.asarray(initial, dtype=np.float64)
        if align:
            initial = align_scale_shift(initial, gt, valid).aligned
        improved, worsened = r3_counts(pred, initial, gt, opts.t, valid)
        report.r3 = r3_from_counts(improved, worsened)
        report.counts.update(improved=improved, worsened=worsened)
    return report


def aggregate(reports: list[MetricsReport]) -> dict:
    """Suite summary: per-metric means in input order, and R3 from pooled
    improved/worsened counts."""
    if not reports:
        raise ValueError("no reports to aggregate")
    out = {}
    for key in ("rmse", "whdr", "mbe", "eps_acc", "eps_comp"):
        out[key] = math.fsum(getattr(r, key) for r in reports) / len(reports)
    if all(r.r3 is not None for r in reports):
        improved = sum(r.counts["improved"] for r in reports)
        worsened = sum(r.counts["worsened"] for r in reports)
        out["r3"] = r3_from_counts(improved, worsened)
        out["improved"] = improved
        out["worsened"] = worsened
    else:
        out["r3"] = None
    out["images"] = len(reports)
    return out
