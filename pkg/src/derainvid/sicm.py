"""Frame-wise spatial feature extractor (SICM).

Encoder: one conv plus four stride-2 ResBlocks taking the map down to 1/16
resolution.  Decoder: four upsampling ResBlocks back to full resolution.
The four encoder-scale maps are upsampled to the input size and concatenated
with the decoder output into a final 1x1 fusion conv.  One parameter set is
shared by every frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from . import layers as L
from .errors import ShapeError

DOWNSCALE = 16  # four stride-2 stages


@dataclass
class SicmConfig:
    input_channels: int = 3
    base_channels: int = 16
    feature_channels: int = 16

    def stage_channels(self):
        """Encoder stage widths: doubling per stage, capped at 8x base."""
        b = self.base_channels
        return [min(b * 2**k, 8 * b) for k in range(1, 5)]


def sicm_params(store, config, rng, prefix="sicm"):
    b = config.base_channels
    stages = config.stage_channels()
    L.conv_params(store, f"{prefix}.head", config.input_channels, b, 3, rng)
    cin = b
    for k, cout in enumerate(stages, start=1):
        L.resblock_params(store, f"{prefix}.enc{k}", cin, cout, rng, resample="down")
        cin = cout
    for k, cout in enumerate(reversed([b] + stages[:-1]), start=1):
        L.resblock_params(store, f"{prefix}.dec{k}", cin, cout, rng, resample="up")
        cin = cout
    fused_in = b + sum(stages)
    L.conv_params(store, f"{prefix}.fuse", fused_in, config.feature_channels, 1, rng)


def sicm_init(config, seed):
    """Fresh ParamStore for a stand-alone extractor; N(0, 0.01^2) weights, zero biases."""
    store = E.ParamStore(rng_seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    sicm_params(store, config, rng)
    return store


def sicm_forward(frame, params, config=None, tape=None, prefix="sicm", probe=None):
    """Features for a batch of frames: [N,3,H,W] -> [N,feature_channels,H,W].

    H and W must be divisible by 16; the deepest internal map sits at
    (H/16, W/16), which ``probe`` exposes for instrumentation.
    """
    if config is None:
        config = SicmConfig()
    n, c, h, w = frame.shape
    if c != config.input_channels:
        raise ShapeError(f"expected {config.input_channels}-channel frames, got {c}")
    if h % DOWNSCALE or w % DOWNSCALE:
        raise ShapeError(
            f"frame extent {h}x{w} not divisible by {DOWNSCALE}"
        )
    x = E.relu(L.conv2d_layer(tape, params, f"{prefix}.head", frame))
    enc = []
    for k in range(1, 5):
        x = L.resblock(tape, params, f"{prefix}.enc{k}", x, resample="down")
        enc.append(x)
    if probe is not None:
        probe["deepest_hw"] = tuple(enc[-1].shape[2:])
        probe["encoder_hw"] = [tuple(e.shape[2:]) for e in enc]
    for k in range(1, 5):
        x = L.resblock(tape, params, f"{prefix}.dec{k}", x, resample="up")
    fused = [x]
    for k, e in enumerate(enc, start=1):
        for _ in range(k):
            e = E.upsample_nearest2x(e)
        fused.append(e)
    return L.conv2d_layer(tape, params, f"{prefix}.fuse", E.concat(fused, axis=1))


def sicm_flops(config, h, w):
    """Multiply-add FLOPs of one frame forward at HxW (conv layers only)."""
    b = config.base_channels
    stages = config.stage_channels()
    total = L.conv2d_flops(config.input_channels, b, 3, h, w)
    cin, hh, ww = b, h, w
    for cout in stages:
        hh, ww = hh // 2, ww // 2
        total += L.conv2d_flops(cin, cout, 4, hh, ww)
        total += L.conv2d_flops(cout, cout, 3, hh, ww)
        total += L.conv2d_flops(cin, cout, 2, hh, ww)
        cin = cout
    for cout in reversed([b] + stages[:-1]):
        hh, ww = hh * 2, ww * 2
        total += L.conv2d_flops(cin, cout, 3, hh, ww)
        total += L.conv2d_flops(cout, cout, 3, hh, ww)
        total += L.conv2d_flops(cin, cout, 1, hh, ww)
        cin = cout
    total += L.conv2d_flops(b + sum(stages), config.feature_channels, 1, h, w)
    return total
