"""Desk-scale end-to-end experiment on synthetic two-plane composites.

Shared by ``scripts/desk_experiment.py`` and the acceptance suite: build a
seeded train/held-out split, train the layered refiner (stage 1 then stage 2)
and the single-pass baseline, then score every method on the held-out suite.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .datagen import PerturbConfig, degrade_mask, generate_dataset
from .metrics import MetricOptions, aggregate, evaluate
from .refine import baseline_layered_propagation, direct_refine, refine_layered
from .toynet import ModelParams, ToyNetBackend, TrainConfig, train_direct, train_stage1, train_stage2

log = logging.getLogger(__name__)

HELD_OUT_OFFSET = 1_000_000


@dataclass
class DeskConfig:
    n_train: int = 500
    n_test: int = 50
    size: int = 64
    seed: int = 0
    kind_weights: dict = field(default_factory=lambda: {"object": 1.0})
    train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=1e-3, iters_stage1=3000,
                                                                    iters_stage2=3000))
    iters_direct: int | None = None
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    sweep_k: tuple = (0, 3, 5, 7, 9)
    workers: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DeskModels:
    layered: ModelParams
    direct: ModelParams
    logs: dict = field(default_factory=dict)


def build_split(cfg: DeskConfig):
    kw = dict(size=cfg.size, cfg=cfg.perturb, kind_weights=cfg.kind_weights, n_planes=1,
              workers=cfg.workers)
    train = generate_dataset(cfg.n_train, cfg.seed, **kw)
    test = generate_dataset(cfg.n_test, cfg.seed + HELD_OUT_OFFSET, **kw)
    return train, test


def train_models(cfg: DeskConfig, train) -> DeskModels:
    t0 = time.perf_counter()
    s1 = train_stage1(cfg.train, train)
    s2 = train_stage2(cfg.train, train, s1.params)
    t1 = time.perf_counter()
    direct = train_direct(cfg.train, train, iters=cfg.iters_direct)
    t2 = time.perf_counter()
    log.info("layered training %.0fs, direct %.0fs", t1 - t0, t2 - t1)
    return DeskModels(s2.params, direct.params,
                      {"stage1": s1.log, "stage2": s2.log, "direct": direct.log})


def _score(preds, test, opts):
    reports = [evaluate(p, s.depth, s.mask.astype(np.int64), initial=s.perturbed, opts=opts)
               for p, s in zip(preds, test)]
    return aggregate(reports)


def predictions(models: DeskModels, test) -> dict:
    layered = ToyNetBackend(models.layered)
    direct = ToyNetBackend(models.direct)
    out = {"perturbed": [s.perturbed for s in test], "layered": [], "direct": [], "propagation": []}
    for s in test:
        out["layered"].append(refine_layered(layered, s.perturbed, s.rgb, s.mask).merged)
        out["direct"].append(direct_refine(direct, s.perturbed, s.rgb, s.mask))
        out["propagation"].append(baseline_layered_propagation(s.perturbed, s.rgb, s.mask).merged)
    return out


def degradation_sweep(models: DeskModels, test, ks=(0, 3, 5, 7, 9), opts=None) -> dict:
    """Suite metrics of the layered refiner when the guidance mask is
    degraded by opening or closing with a ``k x k`` kernel."""
    opts = opts or MetricOptions()
    backend = ToyNetBackend(models.layered)
    out = {}
    for op in ("opening", "closing"):
        out[op] = {}
        for k in ks:
            preds = [refine_layered(backend, s.perturbed, s.rgb, degrade_mask(s.mask, op, k)).merged
                     for s in test]
            out[op][int(k)] = _score(preds, test, opts)
    return out


def run(cfg: DeskConfig | None = None, opts: MetricOptions | None = None) -> dict:
    cfg = cfg or DeskConfig()
    opts = opts or MetricOptions()
    t0 = time.perf_counter()
    train, test = build_split(cfg)
    models = train_models(cfg, train)
    scores = {name: _score(preds, test, opts) for name, preds in predictions(models, test).items()}
    sweep = degradation_sweep(models, test, cfg.sweep_k, opts)
    return {"config": cfg.to_dict(), "scores": scores, "sweep": sweep, "models": models,
            "seconds": time.perf_counter() - t0}
