"""Temporal module: bidirectional interaction conv-LSTM over per-frame features.

Each gate is a 3x3 convolution over the channel concatenation of the current
frame's features, the previous frame's features and the previous hidden
state; the extra previous-frame input is what distinguishes the interaction
cell from a plain ConvLSTM.  The hidden state comes out of a two-layer conv
head over [output gate, tanh(cell)], and a shared two-layer fusion head maps
the two directions' hidden states to a coarse 3-channel frame.

The plain ConvLSTM and bidirectional ConvLSTM ablation cells live here too,
as does a dense reference LSTM used by tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from . import layers as L
from .errors import ConfigError, ContractError, ShapeError

GATES = ("f", "i", "c", "o")


@dataclass
class StimConfig:
    feature_channels: int = 16
    hidden_channels: int = 16
    gate_kernel: int = 3
    out_channels: int = 3
    interaction: bool = True      # gates also read the previous frame's features
    bidirectional: bool = True


def _gate_in_channels(config):
    base = config.feature_channels + config.hidden_channels
    return base + (config.feature_channels if config.interaction else 0)


def _direction_params(store, prefix, config, rng):
    cin = _gate_in_channels(config)
    ch = config.hidden_channels
    for g in GATES:
        L.conv_params(store, f"{prefix}.gate_{g}", cin, ch, config.gate_kernel, rng)
    L.conv_params(store, f"{prefix}.head1", 2 * ch, ch, 3, rng)
    L.conv_params(store, f"{prefix}.head2", ch, ch, 3, rng)


def stim_params(store, config, rng, prefix="stim"):
    _direction_params(store, f"{prefix}.fwd", config, rng)
    if config.bidirectional:
        _direction_params(store, f"{prefix}.bwd", config, rng)
    ch = config.hidden_channels
    fuse_in = 2 * ch if config.bidirectional else ch
    L.conv_params(store, f"{prefix}.fuse1", fuse_in, ch, 3, rng)
    L.conv_params(store, f"{prefix}.fuse2", ch, config.out_channels, 3, rng)


def stim_init(config, seed, prefix="stim"):
    store = E.ParamStore(rng_seed=seed)
    stim_params(store, config, np.random.default_rng(np.random.SeedSequence([seed])), prefix)
    return store


def zero_state(feat, hidden_channels):
    """All-zero (h, C) matching a feature map's batch and spatial extents."""
    h = L.zeros_like_frame(feat, hidden_channels)
    return h, L.zeros_like_frame(feat, hidden_channels)


def stim_cell_step(
    f_x_t, f_x_tm1, state, params, config=None, tape=None, prefix="stim.fwd",
    probe=None,
):
    """One interaction-cell update; returns the new (h, C).

    Gate preactivations convolve [f_x_t, f_x_tm1, h]; the cell update is the
    usual forget/input blend, and the new hidden state is the conv head over
    [o, tanh(C_new)] rather than the pointwise o*tanh(C).  ``probe`` collects
    the gate activation arrays for instrumentation.
    """
    if config is None:
        config = StimConfig()
    h, c = state
    if f_x_t.shape != f_x_tm1.shape:
        raise ShapeError(
            f"feature shapes differ: {tuple(f_x_t.shape)} vs {tuple(f_x_tm1.shape)}"
        )
    if h.shape[0] != f_x_t.shape[0] or h.shape[2:] != f_x_t.shape[2:]:
        raise ShapeError(
            f"state shape {tuple(h.shape)} incompatible with features "
            f"{tuple(f_x_t.shape)}"
        )
    if config.interaction:
        z = E.concat([f_x_t, f_x_tm1, h], axis=1)
    else:
        z = E.concat([f_x_t, h], axis=1)
    gate = {
        g: L.conv2d_layer(tape, params, f"{prefix}.gate_{g}", z) for g in GATES
    }
    f = E.sigmoid(gate["f"])
    i = E.sigmoid(gate["i"])
    c_tilde = E.tanh(gate["c"])
    o = E.sigmoid(gate["o"])
    if probe is not None:
        probe.setdefault("gates", []).append(
            {"f": f.data, "i": i.data, "o": o.data, "c_tilde": c_tilde.data}
        )
    c_new = E.add(E.hadamard(f, c), E.hadamard(i, c_tilde))
    head_in = E.concat([o, E.tanh(c_new)], axis=1)
    h_new = L.conv2d_layer(
        tape, params, f"{prefix}.head2",
        E.relu(L.conv2d_layer(tape, params, f"{prefix}.head1", head_in)),
    )
    return h_new, c_new


def _run_direction(features, params, config, tape, prefix, probe=None):
    """Hidden states for one scan direction; zero state and zero f_x_tm1 at t=0."""
    hs = []
    state = zero_state(features[0], config.hidden_channels)
    prev_feat = L.zeros_like_frame(features[0], config.feature_channels)
    for feat in features:
        state = stim_cell_step(
            feat, prev_feat, state, params, config=config, tape=tape,
            prefix=prefix, probe=probe,
        )
        hs.append(state[0])
        prev_feat = feat
    return hs


def _fuse(h_pair, params, config, tape, prefix):
    z = E.concat(h_pair, axis=1) if len(h_pair) > 1 else h_pair[0]
    z = E.relu(L.conv2d_layer(tape, params, f"{prefix}.fuse1", z))
    return L.conv2d_layer(tape, params, f"{prefix}.fuse2", z)


def stim_bidirectional(features, params, config=None, tape=None, prefix="stim", probe=None):
    """Coarse frames from a feature sequence: forward scan, reversed scan,
    per-frame fusion of the two hidden states.  Needs n >= 2 frames."""
    if config is None:
        config = StimConfig()
    n = len(features)
    if n < 2:
        raise ContractError(f"temporal module needs at least 2 frames, got {n}")
    h_fwd = _run_direction(features, params, config, tape, f"{prefix}.fwd", probe)
    h_bwd_rev = _run_direction(
        features[::-1], params, config, tape, f"{prefix}.bwd", probe
    )
    h_bwd = h_bwd_rev[::-1]
    return [
        _fuse([h_fwd[t], h_bwd[t]], params, config, tape, prefix) for t in range(n)
    ]


def convlstm_variants(features, params, variant, config=None, tape=None, prefix="stim"):
    """Ablation cells: 'convlstm' (unidirectional, no previous-frame input)
    and 'b_convlstm' (bidirectional, no previous-frame input)."""
    if variant not in ("convlstm", "b_convlstm"):
        raise ConfigError(f"unknown temporal variant '{variant}'")
    if config is None:
        config = StimConfig(
            interaction=False, bidirectional=(variant == "b_convlstm")
        )
    if config.interaction or config.bidirectional != (variant == "b_convlstm"):
        raise ConfigError(f"config does not match variant '{variant}'")
    n = len(features)
    if n < 2:
        raise ContractError(f"temporal module needs at least 2 frames, got {n}")
    h_fwd = _run_direction(features, params, config, tape, f"{prefix}.fwd")
    if variant == "convlstm":
        return [_fuse([h], params, config, tape, prefix) for h in h_fwd]
    h_bwd = _run_direction(features[::-1], params, config, tape, f"{prefix}.bwd")[::-1]
    return [
        _fuse([h_fwd[t], h_bwd[t]], params, config, tape, prefix) for t in range(n)
    ]


def stim_flops(config, h, w, n):
    """Multiply-add FLOPs of a full n-frame pass at HxW (conv layers only)."""
    cin = _gate_in_channels(config)
    ch = config.hidden_channels
    k = config.gate_kernel
    per_step = 4 * L.conv2d_flops(cin, ch, k, h, w)
    per_step += L.conv2d_flops(2 * ch, ch, 3, h, w) + L.conv2d_flops(ch, ch, 3, h, w)
    dirs = 2 if config.bidirectional else 1
    fuse_in = 2 * ch if config.bidirectional else ch
    fuse = L.conv2d_flops(fuse_in, ch, 3, h, w) + L.conv2d_flops(
        ch, config.out_channels, 3, h, w
    )
    return dirs * n * per_step + n * fuse


# ---------------------------------------------------------------------------
# dense reference LSTM (vectors only; for tests and documentation parity)


class ReferenceLstm:
    """Classic dense LSTM cell: per-gate input and hidden weight matrices.

    Kept separate from the conv cell so tests can pin the textbook update
    equations against hand-evaluated scalars.
    """

    def __init__(self, input_dim, hidden_dim, rng=None, std=0.01):
        rng = rng or np.random.default_rng(0)
        self.u = {g: rng.normal(0, std, (hidden_dim, input_dim)) for g in GATES}
        self.w = {g: rng.normal(0, std, (hidden_dim, hidden_dim)) for g in GATES}
        self.b = {g: np.zeros(hidden_dim) for g in GATES}

    def step(self, x_t, h_tm1, c_tm1):
        x_t, h_tm1, c_tm1 = (np.asarray(v, dtype=np.float64) for v in (x_t, h_tm1, c_tm1))
        if x_t.shape[0] != self.u["f"].shape[1]:
            raise ShapeError(
                f"input dim {x_t.shape[0]} != {self.u['f'].shape[1]}"
            )
        if h_tm1.shape[0] != self.w["f"].shape[1]:
            raise ShapeError(
                f"hidden dim {h_tm1.shape[0]} != {self.w['f'].shape[1]}"
            )

        def pre(g):
            return self.u[g] @ x_t + self.w[g] @ h_tm1 + self.b[g]

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        f = sig(pre("f"))
        i = sig(pre("i"))
        c_tilde = np.tanh(pre("c"))
        c_t = f * c_tm1 + i * c_tilde
        o = sig(pre("o"))
        h_t = o * np.tanh(c_t)
        return h_t, c_t


def reference_lstm_step(x_t, h_tm1, c_tm1, params):
    """Functional wrapper over ReferenceLstm for a single update."""
    return params.step(x_t, h_tm1, c_tm1)
