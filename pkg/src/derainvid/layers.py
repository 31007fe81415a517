"""Conv-layer and ResBlock building blocks shared by the three networks.

Parameters live in a flat ParamStore under hierarchical dotted names
(``<prefix>.w`` / ``<prefix>.b``); forward functions re-read shapes from the
store so a single definition serves init, forward and FLOP accounting.
"""

from __future__ import annotations

import numpy as np

from . import engine as E

WEIGHT_STD = 0.01  # gaussian init, zero mean


def conv_params(store, prefix, cin, cout, k, rng, kt=None, std=WEIGHT_STD):
    shape = (cout, cin, kt, k, k) if kt is not None else (cout, cin, k, k)
    E.init_normal(store, f"{prefix}.w", shape, rng, std=std)
    E.init_zeros(store, f"{prefix}.b", (cout,))


def conv2d_layer(tape, store, prefix, x, stride=1, padding=None):
    w = E.stage_param(tape, store, f"{prefix}.w")
    b = E.stage_param(tape, store, f"{prefix}.b")
    if padding is None:
        padding = (w.shape[-1] - 1) // 2
    return E.conv2d(x, w, b, stride=stride, padding=padding)


def conv3d_layer(tape, store, prefix, x, stride=(1, 1, 1), padding=None):
    w = E.stage_param(tape, store, f"{prefix}.w")
    b = E.stage_param(tape, store, f"{prefix}.b")
    if padding is None:
        # no temporal padding: the refiner shrinks the window on purpose
        padding = (0, (w.shape[-2] - 1) // 2, (w.shape[-1] - 1) // 2)
    return E.conv3d(x, w, b, stride=stride, padding=padding)


def resblock_params(store, prefix, cin, cout, rng, resample=None):
    """Conv pair plus skip; projection conv whenever the shape changes.

    Down blocks use even kernels (4x4 main, 2x2 skip, both stride 2) because
    the engine requires exactly-dividing output extents; 3x3 stride 2 pad 1
    does not halve an even extent integrally.
    """
    k1 = 4 if resample == "down" else 3
    conv_params(store, f"{prefix}.conv1", cin, cout, k1, rng)
    conv_params(store, f"{prefix}.conv2", cout, cout, 3, rng)
    if resample is not None or cin != cout:
        ks = 2 if resample == "down" else 1
        conv_params(store, f"{prefix}.skip", cin, cout, ks, rng)


def resblock(tape, store, prefix, x, resample=None):
    """x + conv2(relu(conv1(x))); no post-activation so the zero block is identity.

    resample="down" puts stride 2 on conv1 and the projection;
    resample="up" prepends nearest-2x upsampling.
    """
    if resample == "up":
        x = E.upsample_nearest2x(x)
    stride = 2 if resample == "down" else 1
    h = conv2d_layer(tape, store, f"{prefix}.conv1", x, stride=stride)
    h = E.relu(h)
    h = conv2d_layer(tape, store, f"{prefix}.conv2", h)
    if f"{prefix}.skip.w" in store:
        s = conv2d_layer(tape, store, f"{prefix}.skip", x, stride=stride)
    else:
        s = x
    return E.add(s, h)


def conv2d_flops(cin, cout, k, hout, wout):
    """2*k*k*Cin*Cout*Hout*Wout multiply-add FLOPs; bias not counted."""
    return 2 * k * k * cin * cout * hout * wout


def conv3d_flops(cin, cout, kt, k, tout, hout, wout):
    return 2 * kt * k * k * cin * cout * tout * hout * wout


def zeros_like_frame(frame_tensor, channels):
    n, _, h, w = frame_tensor.shape
    return E.tensor(np.zeros((n, channels, h, w), dtype=frame_tensor.dtype))
