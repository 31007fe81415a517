"""Model assembly: one config, per-variant parameter init and window forward.

Variants mirror the ablation grid:

========================  =====================================================
``full``                  spatial extractor + interaction conv-BLSTM + refiner
``stim_n2`` .. ``stim_n5``  same without the refiner, window of k frames
``convlstm``              plain unidirectional ConvLSTM + refiner
``b_convlstm``            plain bidirectional ConvLSTM + refiner
``sicm_2dcnn``            three per-frame convolutions instead of any recurrence
``estm_2dcnn``            full temporal module, refiner gets 2D convs only
========================  =====================================================
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import engine as E
from . import layers as L
from .errors import ConfigError
from .estm import (
    EstmConfig,
    estm_2dcnn_params,
    estm_2dcnn_variant,
    estm_flops,
    estm_forward,
    estm_params,
)
from .sicm import SicmConfig, sicm_flops, sicm_forward, sicm_params
from .stim import (
    StimConfig,
    convlstm_variants,
    stim_bidirectional,
    stim_flops,
    stim_params,
)

VARIANTS = (
    "full",
    "sicm_2dcnn",
    "convlstm",
    "b_convlstm",
    "stim_n2",
    "stim_n3",
    "stim_n4",
    "stim_n5",
    "estm_2dcnn",
)

REFINER_VARIANTS = ("full", "convlstm", "b_convlstm", "estm_2dcnn")


@dataclass
class ModelConfig:
    variant: str = "full"
    window: int = 5
    input_channels: int = 3
    base_channels: int = 16
    feature_channels: int = 16
    hidden_channels: int = 16
    gate_kernel: int = 3
    refine_channels: int = 16
    temporal_kernel: int = 3
    rdb_count: int = 3
    rdb_layers: int = 4
    growth: int = 16
    init_seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'")
        if self.variant.startswith("stim_n"):
            k = int(self.variant[len("stim_n") :])
            if self.window != k:
                raise ConfigError(
                    f"variant {self.variant} implies window {k}, got {self.window}"
                )
        if self.has_refiner and self.window != 2 * self.temporal_kernel - 1:
            raise ConfigError(
                f"refiner variants need window {2 * self.temporal_kernel - 1}, "
                f"got {self.window}"
            )
        if self.window < 2:
            raise ConfigError("window must cover at least 2 frames")

    @property
    def has_refiner(self):
        return self.variant in REFINER_VARIANTS

    @property
    def has_recurrence(self):
        return self.variant != "sicm_2dcnn"

    def sicm(self):
        return SicmConfig(
            input_channels=self.input_channels,
            base_channels=self.base_channels,
            feature_channels=self.feature_channels,
        )

    def stim(self):
        return StimConfig(
            feature_channels=self.feature_channels,
            hidden_channels=self.hidden_channels,
            gate_kernel=self.gate_kernel,
            interaction=self.variant not in ("convlstm", "b_convlstm"),
            bidirectional=self.variant != "convlstm",
        )

    def estm(self):
        return EstmConfig(
            window=self.window,
            in_channels=2 * self.input_channels,
            refine_channels=self.refine_channels,
            temporal_kernel=self.temporal_kernel,
            rdb_count=self.rdb_count,
            rdb_layers=self.rdb_layers,
            growth=self.growth,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def with_(self, **kw):
        return replace(self, **kw)


def init_model_params(config, seed=None):
    """ParamStore covering every sub-network the variant uses.

    Weights N(0, 0.01^2), biases zero, drawn in a fixed name order so a seed
    pins the whole store bit-exactly.
    """
    seed = config.init_seed if seed is None else seed
    store = E.ParamStore(rng_seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1717]))
    sicm_params(store, config.sicm(), rng)
    if config.has_recurrence:
        stim_params(store, config.stim(), rng)
    else:
        c = config.feature_channels
        L.conv_params(store, "head2d.conv1", c, c, 3, rng)
        L.conv_params(store, "head2d.conv2", c, c, 3, rng)
        L.conv_params(store, "head2d.conv3", c, config.input_channels, 3, rng)
    if config.has_refiner:
        if config.variant == "estm_2dcnn":
            estm_2dcnn_params(store, config.estm(), rng)
        else:
            estm_params(store, config.estm(), rng)
    return store


def _frame_head(feat, params, tape):
    x = E.relu(L.conv2d_layer(tape, params, "head2d.conv1", feat))
    x = E.relu(L.conv2d_layer(tape, params, "head2d.conv2", x))
    return L.conv2d_layer(tape, params, "head2d.conv3", x)


def model_forward(rainy_frames, params, config, tape=None, probe=None):
    """One window through the pipeline.

    rainy_frames: list of n Tensors [N,3,H,W].  Returns (coarse list, refined
    Tensor or None).  Coarse frames are unclamped reals; clamping happens at
    export only.
    """
    if len(rainy_frames) != config.window:
        raise ConfigError(
            f"model expects windows of {config.window} frames, got {len(rainy_frames)}"
        )
    sicm_cfg = config.sicm()
    feats = [
        sicm_forward(f, params, config=sicm_cfg, tape=tape, probe=probe)
        for f in rainy_frames
    ]
    if config.variant == "sicm_2dcnn":
        coarse = [_frame_head(f, params, tape) for f in feats]
    elif config.variant in ("convlstm", "b_convlstm"):
        coarse = convlstm_variants(
            feats, params, config.variant, config=config.stim(), tape=tape
        )
    else:
        coarse = stim_bidirectional(
            feats, params, config=config.stim(), tape=tape, probe=probe
        )
    refined = None
    if config.has_refiner:
        if config.variant == "estm_2dcnn":
            refined = estm_2dcnn_variant(
                coarse, rainy_frames, params, config=config.estm(), tape=tape
            )
        else:
            refined = estm_forward(
                coarse, rainy_frames, params, config=config.estm(), tape=tape,
                probe=probe,
            )
    return coarse, refined


def count_flops(config, h, w, n=None):
    """Closed-form multiply-add FLOPs for one n-frame window forward at HxW.

    Per conv: 2*k*k(*kt)*Cin*Cout*Hout*Wout(*Tout); biases and pointwise ops
    are not counted.  Spatial extractor runs once per frame.
    """
    n = config.window if n is None else n
    total = n * sicm_flops(config.sicm(), h, w)
    if config.has_recurrence:
        total += stim_flops(config.stim(), h, w, n)
    else:
        c = config.feature_channels
        per_frame = (
            L.conv2d_flops(c, c, 3, h, w)
            + L.conv2d_flops(c, c, 3, h, w)
            + L.conv2d_flops(c, config.input_channels, 3, h, w)
        )
        total += n * per_frame
    if config.has_refiner:
        total += estm_flops(config.estm(), h, w, two_d=config.variant == "estm_2dcnn")
    return total


def count_params(store_or_checkpoint):
    """Exact trainable parameter count: sum of tensor sizes."""
    store = getattr(store_or_checkpoint, "store", store_or_checkpoint)
    return store.num_params()
