"""Training losses: per-pixel MSE on coarse frames, on the refined center
frame, and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

from . import engine as E
from .errors import ConfigError, ShapeError


@dataclass
class LossWeights:
    alpha: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")


def _mse(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"loss operands differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    d = E.sub(a, b)
    return E.mean_all(E.hadamard(d, d))


def loss_sti(clean_frames, coarse_frames):
    """Mean squared error over every pixel/channel/frame of the window."""
    if len(clean_frames) != len(coarse_frames):
        raise ShapeError(
            f"frame counts differ: {len(clean_frames)} vs {len(coarse_frames)}"
        )
    if len(clean_frames) == 1:
        return _mse(clean_frames[0], coarse_frames[0])
    stacked_c = E.concat(list(clean_frames), axis=0)
    stacked_o = E.concat(list(coarse_frames), axis=0)
    return _mse(stacked_c, stacked_o)


def loss_est(clean_center, refined):
    """Mean squared error on the single refined center frame."""
    return _mse(clean_center, refined)


def loss_final(sti, est, weights=None):
    """sti + alpha * est; both inputs are scalar tensors."""
    weights = weights or LossWeights()
    if est is None or weights.alpha == 0:
        return sti
    return E.add(sti, E.scale(est, weights.alpha))
