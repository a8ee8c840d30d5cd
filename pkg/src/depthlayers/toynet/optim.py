"""AdamW with a two-milestone step-decay learning rate."""
from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    patch: int = 64
    batch: int = 4
    iters_stage1: int = 2000
    iters_stage2: int = 2000
    lr: float = 1e-4
    milestones: tuple[float, float] = (0.6, 0.8)
    decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    stage: int = 0  # 0 runs both stages
    widths: tuple[int, int, int] = (16, 32, 64)
    low_channels: int = 8
    hflip: bool = True

    def __post_init__(self):
        self.milestones = tuple(float(m) for m in self.milestones)
        self.widths = tuple(int(w) for w in self.widths)
        if not all(0.0 < m < 1.0 for m in self.milestones):
            raise ValueError("decay milestones must lie in (0, 1)")
        for name in ("patch", "batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.iters_stage1 < 0 or self.iters_stage2 < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def learning_rate(cfg: TrainConfig, step: int, total: int) -> float:
    """Base rate, scaled by ``decay`` once per milestone passed.

    ``step`` is 1-based; the milestone at fraction ``f`` applies from step
    ``> f * total``.
    """
    lr = cfg.lr
    for m in cfg.milestones:
        if step > m * total:
            lr *= cfg.decay
    return lr


@dataclass
class AdamWState:
    step: int = 0
    m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    skipped: int = 0


def optimizer_step(params, grads: dict, cfg: TrainConfig, state: AdamWState, lr: float) -> bool:
    """One decoupled-weight-decay Adam update in place.

    Returns False (and leaves everything untouched apart from the skip
    counter) if any gradient is non-finite.
    """
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        log.warning("non-finite gradient; skipping step (%d skipped so far)", state.skipped)
        return False
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, tensor in params.tensors.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        p = tensor.value * (1.0 - lr * cfg.weight_decay)
        tensor.value = p - lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return True
