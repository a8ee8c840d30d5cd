"""Two-stage training of the toy refiner, plus the single-pass baseline.

Stage 1 teaches completion: given the clean composite and either ``M`` or
``1 - M``, predict the full layer under the ones. Stage 2 feeds perturbed
depth, runs both masks, merges, and supervises both layers and the merge.

Every iteration draws from its own generator seeded by
``(seed, stage, iteration)``, so a resumed run replays the same batches.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .loss import loss_terms, loss_values
from .model import Architecture, ModelParams, forward
from .optim import AdamWState, TrainConfig, learning_rate, optimizer_step

log = logging.getLogger(__name__)

STAGE_IDS = {"stage1": 1, "stage2": 2, "direct": 3}


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict] = field(default_factory=list)
    state: AdamWState = field(default_factory=AdamWState)


def _stack(dataset, idx, attr):
    return np.stack([getattr(dataset[i], attr) for i in idx])


def _draw_batch(dataset, cfg: TrainConfig, stage: str, it: int):
    rng = np.random.default_rng([cfg.seed, STAGE_IDS[stage], it])
    idx = rng.integers(0, len(dataset), cfg.batch)
    flip_mask = bool(rng.random() < 0.5)
    hflip = rng.random(cfg.batch) < 0.5 if cfg.hflip else np.zeros(cfg.batch, bool)
    batch = {k: _stack(dataset, idx, k) for k in ("rgb", "depth", "perturbed", "mask", "layer1", "layer2")}
    for k, arr in batch.items():
        arr[hflip] = arr[hflip][:, :, ::-1]
    h, w = batch["depth"].shape[1:3]
    if h > cfg.patch or w > cfg.patch:
        # one random patch per sample, shared by all of its channels
        ph, pw = min(h, cfg.patch), min(w, cfg.patch)
        ys = rng.integers(0, h - ph + 1, cfg.batch)
        xs = rng.integers(0, w - pw + 1, cfg.batch)
        batch = {k: np.stack([a[y:y + ph, x:x + pw] for a, y, x in zip(arr, ys, xs)])
                 for k, arr in batch.items()}
    return batch, flip_mask


def stage1_loss(params, batch, flip_mask):
    if flip_mask:
        mask, target = 1.0 - batch["mask"], batch["layer2"]
    else:
        mask, target = batch["mask"], batch["layer1"]
    pred = forward(params, batch["depth"], batch["rgb"], mask)
    return loss_terms(pred, target)


def stage2_loss(params, batch, flip_mask=None):
    m = batch["mask"]
    d1 = forward(params, batch["perturbed"], batch["rgb"], m)
    d2 = forward(params, batch["perturbed"], batch["rgb"], 1.0 - m)
    m4 = m[:, None]
    merged = ad.add(ad.mul(d1, m4), ad.mul(d2, 1.0 - m4))
    parts = [loss_terms(d1, batch["layer1"]), loss_terms(d2, batch["layer2"]), loss_terms(merged, batch["depth"])]
    return {k: ad.total(*(p[k] for p in parts)) for k in parts[0]}


def direct_loss(params, batch, flip_mask=None):
    pred = forward(params, batch["perturbed"], batch["rgb"], batch["mask"])
    return loss_terms(pred, batch["depth"])


LOSSES = {"stage1": stage1_loss, "stage2": stage2_loss, "direct": direct_loss}


def run_stage(stage: str, cfg: TrainConfig, dataset, params: ModelParams, iters: int,
              state: AdamWState | None = None, start: int = 0, stop: int | None = None,
              callback=None) -> TrainResult:
    """Run iterations ``start + 1 .. stop`` of a ``iters``-long schedule.

    ``callback(it, params, state)`` fires after every iteration.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    state = state or AdamWState()
    stop = iters if stop is None else stop
    loss_fn = LOSSES[stage]
    rows = []
    t0 = time.perf_counter()
    for it in range(start + 1, stop + 1):
        batch, flip = _draw_batch(dataset, cfg, stage, it)
        params.zero_grad()
        terms = loss_fn(params, batch, flip)
        ad.backward(terms["total"])
        lr = learning_rate(cfg, it, iters)
        optimizer_step(params, params.grads(), cfg, state, lr)
        row = {"iteration": it, **loss_values(terms)}
        rows.append(row)
        if it % 100 == 0 or it == stop:
            log.info("%s it %d/%d loss %.4f lr %.1e (%.1fs)", stage, it, iters, row["total"], lr,
                     time.perf_counter() - t0)
        if callback is not None:
            callback(it, params, state)
    return TrainResult(params, rows, state)


def _arch(cfg: TrainConfig) -> Architecture:
    return Architecture(widths=tuple(cfg.widths), low_channels=cfg.low_channels)


def train_stage1(cfg: TrainConfig, dataset, params: ModelParams | None = None, **kw) -> TrainResult:
    params = params or ModelParams.init(_arch(cfg), seed=cfg.seed)
    return run_stage("stage1", cfg, dataset, params, cfg.iters_stage1, **kw)


def train_stage2(cfg: TrainConfig, dataset, init: ModelParams, **kw) -> TrainResult:
    if init is None:
        raise ValueError("stage 2 needs stage-1 parameters")
    return run_stage("stage2", cfg, dataset, init, cfg.iters_stage2, **kw)


def train_direct(cfg: TrainConfig, dataset, iters: int | None = None, params: ModelParams | None = None,
                 **kw) -> TrainResult:
    """Single-pass refiner trained on the same composites, no layering."""
    params = params or ModelParams.init(_arch(cfg), seed=cfg.seed)
    iters = cfg.iters_stage1 + cfg.iters_stage2 if iters is None else iters
    return run_stage("direct", cfg, dataset, params, iters, **kw)
