"""Refinement network: 3D-conv temporal collapse plus residual dense blocks.

Coarse and rainy frames are channel-concatenated per time step into a
[N,6,n,H,W] volume.  Two 3D convolutions with temporal kernel 3 and no
temporal padding take the window from 5 to 3 to 1 frames; residual dense
blocks then refine in 2D, and the output is the rainy center frame plus a
learned residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from . import layers as L
from .errors import ConfigError, ShapeError


@dataclass
class EstmConfig:
    window: int = 5
    in_channels: int = 6          # coarse + rainy RGB pairs
    refine_channels: int = 16
    temporal_kernel: int = 3
    rdb_count: int = 3
    rdb_layers: int = 4
    growth: int = 16
    out_channels: int = 3

    def __post_init__(self):
        collapsed = self.window - 2 * (self.temporal_kernel - 1)
        if collapsed != 1:
            raise ConfigError(
                f"two temporal-{self.temporal_kernel} convs need a window of "
                f"{2 * (self.temporal_kernel - 1) + 1}, got {self.window}"
            )


def rdb_params(store, prefix, channels, layers, growth, rng):
    cin = channels
    for i in range(layers):
        L.conv_params(store, f"{prefix}.dense{i}", cin, growth, 3, rng)
        cin += growth
    L.conv_params(store, f"{prefix}.fuse", cin, channels, 1, rng)


def rdb(tape, store, prefix, x, layers):
    """Densely connected convs, 1x1 local fusion, local residual skip."""
    feats = [x]
    for i in range(layers):
        z = feats[0] if len(feats) == 1 else E.concat(feats, axis=1)
        feats.append(E.relu(L.conv2d_layer(tape, store, f"{prefix}.dense{i}", z)))
    fused = L.conv2d_layer(tape, store, f"{prefix}.fuse", E.concat(feats, axis=1))
    return E.add(x, fused)


def estm_params(store, config, rng, prefix="estm"):
    rc = config.refine_channels
    kt = config.temporal_kernel
    L.conv_params(store, f"{prefix}.t1", config.in_channels, rc, 3, rng, kt=kt)
    L.conv_params(store, f"{prefix}.t2", rc, rc, 3, rng, kt=kt)
    for r in range(config.rdb_count):
        rdb_params(store, f"{prefix}.rdb{r}", rc, config.rdb_layers, config.growth, rng)
    L.conv_params(store, f"{prefix}.out", rc, config.out_channels, 3, rng)


def estm_init(config, seed, prefix="estm"):
    store = E.ParamStore(rng_seed=seed)
    estm_params(store, config, np.random.default_rng(np.random.SeedSequence([seed])), prefix)
    return store


def _check_windows(coarse, rainy, config):
    if len(coarse) != len(rainy):
        raise ShapeError(
            f"coarse/rainy lengths differ: {len(coarse)} vs {len(rainy)}"
        )
    if len(coarse) != config.window:
        raise ShapeError(
            f"refiner configured for window {config.window}, got {len(coarse)} frames"
        )
    for c, r in zip(coarse, rainy):
        if c.shape != r.shape:
            raise ShapeError(
                f"frame shapes differ: {tuple(c.shape)} vs {tuple(r.shape)}"
            )


def _refine_2d(tape, store, x, rainy_center, config, prefix):
    for r in range(config.rdb_count):
        x = rdb(tape, store, f"{prefix}.rdb{r}", x, config.rdb_layers)
    residual = L.conv2d_layer(tape, store, f"{prefix}.out", x)
    return E.add(rainy_center, residual)


def estm_forward(coarse, rainy, params, config=None, tape=None, prefix="estm", probe=None):
    """Refined center frame from an n-frame coarse/rainy window pair.

    ``probe`` records the temporal extents of the stacked volume and of the
    two 3D-conv outputs (n -> n-2 -> 1).
    """
    if config is None:
        config = EstmConfig()
    _check_windows(coarse, rainy, config)
    nb, _, h, w = coarse[0].shape
    steps = [
        E.reshape(E.concat([c, r], axis=1), (nb, 2 * c.shape[1], 1, h, w))
        for c, r in zip(coarse, rainy)
    ]
    vol = E.concat(steps, axis=2)
    extents = [vol.shape[2]]
    v = E.relu(L.conv3d_layer(tape, params, f"{prefix}.t1", vol))
    extents.append(v.shape[2])
    v = E.relu(L.conv3d_layer(tape, params, f"{prefix}.t2", v))
    extents.append(v.shape[2])
    if probe is not None:
        probe["temporal_extents"] = extents
    x = E.reshape(v, (nb, config.refine_channels, h, w))
    center = rainy[config.window // 2]
    return _refine_2d(tape, params, x, center, config, prefix)


def estm_2dcnn_variant(coarse, rainy, params, config=None, tape=None, prefix="estm"):
    """Refiner ablation: two 2D convs on the center frame's 6-channel stack
    instead of the temporal collapse; output ignores non-center frames."""
    if config is None:
        config = EstmConfig()
    _check_windows(coarse, rainy, config)
    mid = config.window // 2
    x = E.concat([coarse[mid], rainy[mid]], axis=1)
    x = E.relu(L.conv2d_layer(tape, params, f"{prefix}.t1", x))
    x = E.relu(L.conv2d_layer(tape, params, f"{prefix}.t2", x))
    return _refine_2d(tape, params, x, rainy[mid], config, prefix)


def estm_2dcnn_params(store, config, rng, prefix="estm"):
    """Parameter set for the 2D ablation (2D stand-ins for the two 3D convs)."""
    rc = config.refine_channels
    L.conv_params(store, f"{prefix}.t1", config.in_channels, rc, 3, rng)
    L.conv_params(store, f"{prefix}.t2", rc, rc, 3, rng)
    for r in range(config.rdb_count):
        rdb_params(store, f"{prefix}.rdb{r}", rc, config.rdb_layers, config.growth, rng)
    L.conv_params(store, f"{prefix}.out", rc, config.out_channels, 3, rng)


def estm_flops(config, h, w, two_d=False):
    """Multiply-add FLOPs for one window refinement at HxW (conv layers only)."""
    rc = config.refine_channels
    kt = config.temporal_kernel
    if two_d:
        total = L.conv2d_flops(config.in_channels, rc, 3, h, w)
        total += L.conv2d_flops(rc, rc, 3, h, w)
    else:
        t1_out = config.window - (kt - 1)
        total = L.conv3d_flops(config.in_channels, rc, kt, 3, t1_out, h, w)
        total += L.conv3d_flops(rc, rc, kt, 3, 1, h, w)
    for _ in range(config.rdb_count):
        cin = rc
        for _ in range(config.rdb_layers):
            total += L.conv2d_flops(cin, config.growth, 3, h, w)
            cin += config.growth
        total += L.conv2d_flops(cin, rc, 1, h, w)
    total += L.conv2d_flops(rc, config.out_channels, 3, h, w)
    return total
