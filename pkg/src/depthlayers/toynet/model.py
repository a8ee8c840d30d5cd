"""Two-branch convolutional encoder-decoder with a low-level depth encoder.

Topology: the depth+mask branch and the rgb+mask branch each run their own
first (stride-2) block; their outputs are summed. Two more stride-2 blocks
follow. The decoder upsamples by nearest neighbour + conv and fuses encoder
features by addition. A full-resolution low-level encoder on depth+mask is
concatenated with the last decoder features before the head.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DOWNSAMPLE = 8
LEAK = 0.01


@dataclass(frozen=True)
class Architecture:
    widths: tuple[int, int, int] = (16, 32, 64)
    low_channels: int = 8

    def layers(self) -> list[tuple[str, int, int, int]]:
        """``(name, in_channels, out_channels, kernel)`` for every conv."""
        w0, w1, w2 = self.widths
        lc = self.low_channels
        return [
            ("stem_main", 2, w0, 3),
            ("stem_aux", 4, w0, 3),
            ("enc2", w0, w1, 3),
            ("enc3", w1, w2, 3),
            ("dec3_up", w2, w1, 3),
            ("dec3_fuse", w1, w1, 3),
            ("dec2_up", w1, w0, 3),
            ("dec2_fuse", w0, w0, 3),
            ("dec1_up", w0, w0, 3),
            ("low1", 2, lc, 3),
            ("low2", lc, lc, 3),
            ("head1", w0 + lc, w0, 3),
            ("head2", w0, 1, 1),
        ]


class ModelParams:
    """Named weight/bias tensors plus the architecture that shapes them."""

    def __init__(self, arch: Architecture, tensors: "OrderedDict[str, Tensor]"):
        self.arch = arch
        self.tensors = tensors

    @classmethod
    def init(cls, arch: Architecture | None = None, seed: int = 0) -> "ModelParams":
        """Fan-in scaled uniform initialisation."""
        arch = arch or Architecture()
        rng = np.random.default_rng(seed)
        tensors = OrderedDict()
        for name, cin, cout, k in arch.layers():
            fan_in = cin * k * k
            bound = np.sqrt(6.0 / fan_in)
            tensors[f"{name}.weight"] = Tensor(rng.uniform(-bound, bound, (cout, cin, k, k)),
                                               requires_grad=True, name=f"{name}.weight")
            b = 1.0 / np.sqrt(fan_in)
            tensors[f"{name}.bias"] = Tensor(rng.uniform(-b, b, cout), requires_grad=True, name=f"{name}.bias")
        return cls(arch, tensors)

    def __getitem__(self, key) -> Tensor:
        return self.tensors[key]

    def names(self) -> list[str]:
        return list(self.tensors)

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.value) for k, t in self.tensors.items())

    def count(self) -> int:
        return int(sum(t.value.size for t in self.tensors.values()))

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def grads(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, np.zeros_like(t.value) if t.grad is None else t.grad)
                           for k, t in self.tensors.items())

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, OrderedDict(
            (k, Tensor(t.value.copy(), requires_grad=True, name=k)) for k, t in self.tensors.items()))

    @classmethod
    def from_arrays(cls, arch: Architecture, arrays: dict) -> "ModelParams":
        expected = cls.init(arch, seed=0)
        tensors = OrderedDict()
        for k, t in expected.tensors.items():
            if k not in arrays:
                raise KeyError(f"missing parameter {k}")
            v = np.asarray(arrays[k], dtype=np.float64)
            if v.shape != t.shape:
                raise ValueError(f"parameter {k} has shape {v.shape}, expected {t.shape}")
            tensors[k] = Tensor(v.copy(), requires_grad=True, name=k)
        return cls(arch, tensors)


def _conv(params, name, x, stride=1, act=True):
    y = ad.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=stride)
    return ad.leaky_relu(y, LEAK) if act else y


def _batch(depth, rgb, mask):
    depth = np.asarray(depth, dtype=np.float64)
    rgb = np.asarray(rgb, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if depth.ndim == 2:
        depth, rgb, mask = depth[None], rgb[None], mask[None]
    if depth.shape != mask.shape or rgb.shape[:3] != depth.shape or rgb.shape[-1] != 3:
        raise ValueError(f"shape mismatch: depth {depth.shape}, rgb {rgb.shape}, mask {mask.shape}")
    return depth, rgb, mask


def padded_size(n: int) -> int:
    return -(-n // DOWNSAMPLE) * DOWNSAMPLE


def forward(params: ModelParams, depth, rgb, mask) -> Tensor:
    """Differentiable prediction of shape ``(N, 1, H, W)``.

    Inputs are ``(H, W)`` / ``(H, W, 3)`` or batched ``(N, H, W)`` /
    ``(N, H, W, 3)``. Sizes not divisible by 8 are edge-padded and the
    output cropped back.
    """
    depth, rgb, mask = _batch(depth, rgb, mask)
    n, h, w = depth.shape
    ph, pw = padded_size(h) - h, padded_size(w) - w
    if ph or pw:
        pad = ((0, 0), (0, ph), (0, pw))
        depth = np.pad(depth, pad, mode="edge")
        mask = np.pad(mask, pad, mode="edge")
        rgb = np.pad(rgb, pad + ((0, 0),), mode="edge")
    d = depth[:, None]
    m = mask[:, None]
    main_in = ad.Tensor(np.concatenate([d, m], axis=1))
    aux_in = ad.Tensor(np.concatenate([rgb.transpose(0, 3, 1, 2), m], axis=1))

    e1 = ad.add(_conv(params, "stem_main", main_in, 2), _conv(params, "stem_aux", aux_in, 2))
    e2 = _conv(params, "enc2", e1, 2)
    e3 = _conv(params, "enc3", e2, 2)

    f2 = _conv(params, "dec3_up", ad.upsample2(e3))
    f2 = _conv(params, "dec3_fuse", ad.add(f2, e2))
    f1 = _conv(params, "dec2_up", ad.upsample2(f2))
    f1 = _conv(params, "dec2_fuse", ad.add(f1, e1))
    f0 = _conv(params, "dec1_up", ad.upsample2(f1))

    low = _conv(params, "low2", _conv(params, "low1", main_in))
    hidden = _conv(params, "head1", ad.concat([f0, low], axis=1))
    out = _conv(params, "head2", hidden, act=False)
    if ph or pw:
        out = ad.crop2d(out, h, w)
    return out


def predict(params: ModelParams, depth, rgb, mask) -> np.ndarray:
    """Numpy prediction with the same batching rules as :func:`forward`."""
    with ad.no_grad():
        out = forward(params, depth, rgb, mask).value[:, 0]
    return out[0] if np.ndim(depth) == 2 else out
