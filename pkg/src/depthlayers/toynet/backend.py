"""Inference wrapper exposing trained parameters as a refinement backend."""
from __future__ import annotations

import numpy as np

from .model import ModelParams, predict


class ToyNetBackend:
    """Immutable snapshot of parameters; safe to share between threads."""

    def __init__(self, params: ModelParams):
        self.params = params.copy()
        for t in self.params.tensors.values():
            t.value.setflags(write=False)

    def refine_layer(self, depth, rgb, mask) -> np.ndarray:
        return predict(self.params, depth, rgb, mask)


def export_backend(params: ModelParams) -> ToyNetBackend:
    return ToyNetBackend(params)
