"""Evaluation metrics (PSNR, SSIM) and metric report export.

Both metrics read frames as [0,1]-valued arrays, channel-first [3,H,W] or
grayscale [H,W].  SSIM follows the canonical definition: ITU-R 601 luma,
11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.
PSNR uses peak 1 and caps at 100 dB so identical frames stay finite.
"""

from __future__ import annotations

import csv

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, RangeError, ShapeError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

_LUMA = np.array([0.299, 0.587, 0.114])


def _check_pair(a, b, check_range):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if check_range:
        for name, arr in (("first", a), ("second", b)):
            lo, hi = arr.min(), arr.max()
            if lo < 0.0 or hi > 1.0:
                raise RangeError(
                    f"{name} frame outside [0,1]: min={lo:.4g} max={hi:.4g}"
                )
    return a, b


def psnr(a, b):
    """10*log10(1/MSE) in dB on [0,1] frames, capped at 100 dB."""
    a, b = _check_pair(a, b, check_range=True)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _to_luma(frame):
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        if frame.shape[0] != 3:
            raise ShapeError(f"expected [3,H,W] frame, got {frame.shape}")
        return np.tensordot(_LUMA, frame, axes=1)
    if frame.ndim == 2:
        return frame
    raise ShapeError(f"expected 2-d or 3-d frame, got rank {frame.ndim}")


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    # separable weighted mean, 'valid' region only
    out = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(out, len(g), axis=1) @ g


def ssim(a, b):
    """Mean SSIM over the valid windowed map; symmetric in its arguments."""
    a, b = _check_pair(a, b, check_range=False)
    x = _to_luma(a)
    y = _to_luma(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ContractError(
            f"frame {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    g = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mx = _filter_valid(x, g)
    my = _filter_valid(y, g)
    mxx = _filter_valid(x * x, g)
    myy = _filter_valid(y * y, g)
    mxy = _filter_valid(x * y, g)
    vx = mxx - mx * mx
    vy = myy - my * my
    cxy = mxy - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def clip_metrics(pred_frames, ref_frames):
    """Per-frame (psnr, ssim) rows plus means for two frame sequences."""
    if len(pred_frames) != len(ref_frames):
        raise ShapeError(
            f"frame counts differ: {len(pred_frames)} vs {len(ref_frames)}"
        )
    rows = []
    for i, (p, r) in enumerate(zip(pred_frames, ref_frames)):
        rows.append((i, psnr(p, r), ssim(p, r)))
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    return rows, mean_psnr, mean_ssim


def write_metric_report(csv_path, rows, mean_psnr, mean_ssim, summary_path=None):
    """Line-per-frame CSV plus a plain-text summary table."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "psnr_db", "ssim"])
        for idx, p, s in rows:
            writer.writerow([idx, f"{p:.6f}", f"{s:.6f}"])
    summary = (
        f"frames    {len(rows)}\n"
        f"mean_psnr {mean_psnr:.4f} dB\n"
        f"mean_ssim {mean_ssim:.6f}\n"
    )
    if summary_path is not None:
        with open(summary_path, "w") as fh:
            fh.write(summary)
    return summary
