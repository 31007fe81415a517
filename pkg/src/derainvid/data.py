"""Synthetic clips, rain-streak overlay, windowing, augmentation and frame I/O.

Clean clips are procedural moving textures (drifting sinusoid background plus
translating rectangles), which stand in for real footage at desk scale.  Rain
is an additive layer of bright, blurred, translated line streaks: the same
streak population persists across frames and moves with a fixed per-frame
velocity, so the corruption is temporally coherent.  Everything is
deterministic given its seed.

Frames on disk are 8-bit PPM (P6) files, PNG optionally via Pillow; a
``manifest.txt`` per directory lists the frame files in order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, ContractError, IoError, ShapeError

FRAME_MULTIPLE = 16
MANIFEST = "manifest.txt"


@dataclass
class VideoClip:
    """Frame sequence [T,3,H,W] in [0,1]; values are clamped at construction."""

    frames: np.ndarray
    role: str = "clean"  # clean | rainy | derained
    fps: float = 24.0

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float32)
        if arr.ndim != 4 or arr.shape[1] != 3:
            raise ShapeError(f"clip must be [T,3,H,W], got {arr.shape}")
        self.frames = np.clip(arr, 0.0, 1.0)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def frame_hw(self):
        return self.frames.shape[2], self.frames.shape[3]


@dataclass
class RainParams:
    streak_count: int = 60
    length_range: tuple = (6.0, 14.0)
    angle_range: tuple = (-20.0, -5.0)        # degrees from vertical
    intensity_range: tuple = (0.15, 0.45)
    velocity: tuple = (3.0, -1.0)             # (dy, dx) pixels per frame
    blur_sigma: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.streak_count < 0:
            raise ConfigError("streak_count must be >= 0")
        for name in ("length_range", "angle_range", "intensity_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ConfigError(f"{name} is empty: ({lo}, {hi})")
        lo, hi = self.intensity_range
        if lo <= 0 or hi > 1:
            raise ConfigError("intensity_range must lie in (0, 1]")


RAIN_PRESETS = {
    "none": RainParams(streak_count=0),
    "light": RainParams(streak_count=30, intensity_range=(0.10, 0.30)),
    "default": RainParams(),
    "heavy": RainParams(
        streak_count=140, length_range=(8.0, 20.0), intensity_range=(0.25, 0.60)
    ),
}


def rain_preset(name, seed=0):
    if name not in RAIN_PRESETS:
        raise ConfigError(
            f"unknown rain preset '{name}' (have: {', '.join(sorted(RAIN_PRESETS))})"
        )
    p = RAIN_PRESETS[name]
    return RainParams(
        streak_count=p.streak_count,
        length_range=p.length_range,
        angle_range=p.angle_range,
        intensity_range=p.intensity_range,
        velocity=p.velocity,
        blur_sigma=p.blur_sigma,
        seed=seed,
    )


def _check_divisible(h, w):
    if h % FRAME_MULTIPLE or w % FRAME_MULTIPLE:
        raise ShapeError(
            f"frame extent {h}x{w} not divisible by {FRAME_MULTIPLE}"
        )


def synth_clean_clip(seed, n_frames, h, w):
    """Deterministic moving-texture clip: drifting sinusoids plus moving shapes."""
    _check_divisible(h, w)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC11A]))
    yy, xx = np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )
    # two sinusoid layers per channel with independent drift
    freqs = rng.uniform(0.5, 3.0, size=(3, 2, 2)) / max(h, w)
    phases = rng.uniform(0, 2 * np.pi, size=(3, 2))
    drift = rng.uniform(-0.35, 0.35, size=(3, 2))
    amp = rng.uniform(0.10, 0.22, size=(3, 2))
    n_shapes = 3
    pos = rng.uniform(0, [h, w], size=(n_shapes, 2))
    vel = rng.uniform(-2.0, 2.0, size=(n_shapes, 2))
    half = rng.uniform(h / 12, h / 5, size=(n_shapes, 2))
    color = rng.uniform(0.1, 0.9, size=(n_shapes, 3))

    frames = np.empty((n_frames, 3, h, w), dtype=np.float32)
    for t in range(n_frames):
        img = np.empty((3, h, w), dtype=np.float64)
        for c in range(3):
            base = 0.5
            for k in range(2):
                phase = phases[c, k] + t * drift[c, k]
                base = base + amp[c, k] * np.sin(
                    2 * np.pi * (freqs[c, k, 0] * yy + freqs[c, k, 1] * xx) + phase
                )
            img[c] = base
        for s in range(n_shapes):
            cy = (pos[s, 0] + t * vel[s, 0]) % h
            cx = (pos[s, 1] + t * vel[s, 1]) % w
            mask = (np.abs(yy - cy) < half[s, 0]) & (np.abs(xx - cx) < half[s, 1])
            for c in range(3):
                img[c][mask] = 0.55 * img[c][mask] + 0.45 * color[s, c]
        frames[t] = np.clip(img, 0.0, 1.0)
    return VideoClip(frames, role="clean")


def add_rain(clip, rain):
    """Clean clip + translated bright streak layer, clamped to [0,1].

    The streak layer is nonnegative, so rainy >= clean holds elementwise.
    """
    t_len = len(clip)
    h, w = clip.frame_hw
    if rain.streak_count == 0:
        return VideoClip(clip.frames.copy(), role="rainy", fps=clip.fps)
    rng = np.random.default_rng(np.random.SeedSequence([rain.seed, 0x4A1B]))
    k = rain.streak_count
    margin = int(np.ceil(rain.length_range[1])) + 4
    box = np.array([h + 2 * margin, w + 2 * margin])
    pos0 = rng.uniform(0, box, size=(k, 2))
    length = rng.uniform(*rain.length_range, size=k)
    angle = np.deg2rad(rng.uniform(*rain.angle_range, size=k))
    intensity = rng.uniform(*rain.intensity_range, size=k)
    # direction from vertical: angle 0 means straight down
    dirs = np.stack([np.cos(angle), np.sin(angle)], axis=1)
    steps = np.linspace(-0.5, 0.5, 24)
    vel = np.asarray(rain.velocity, dtype=np.float64)

    rainy = np.empty_like(clip.frames)
    for t in range(t_len):
        centers = (pos0 + t * vel) % box - margin
        pts = centers[:, None, :] + dirs[:, None, :] * (
            steps[None, :, None] * length[:, None, None]
        )
        ys = np.rint(pts[..., 0]).astype(np.int64)
        xs = np.rint(pts[..., 1]).astype(np.int64)
        inside = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        layer = np.zeros((h, w), dtype=np.float64)
        inten = np.broadcast_to(intensity[:, None], ys.shape)
        np.maximum.at(
            layer, (ys[inside], xs[inside]), inten[inside]
        )
        if rain.blur_sigma > 0:
            layer = gaussian_filter(layer, rain.blur_sigma, mode="constant")
        rainy[t] = np.clip(clip.frames[t] + layer[None, :, :], 0.0, 1.0)
    return VideoClip(rainy, role="rainy", fps=clip.fps)


# ---------------------------------------------------------------------------
# windowing


@dataclass
class Window:
    indices: list
    center: int = field(init=False)

    def __post_init__(self):
        self.center = self.indices[(len(self.indices) - 1) // 2]


def _reflect(i, t_len):
    # mirror about the clip boundaries without repeating the edge frame
    while i < 0 or i >= t_len:
        if i < 0:
            i = -i
        else:
            i = 2 * (t_len - 1) - i
    return i


def make_windows(t_len, n, stride):
    """Window index lists over a clip of t_len frames.

    stride 1: one window per frame, centered on it, boundaries reflected.
    stride >= 2 (training groups): start-aligned windows every ``stride``
    frames plus one reflected tail window when frames remain uncovered.
    """
    if isinstance(t_len, VideoClip):
        t_len = len(t_len)
    if t_len < n:
        raise ContractError(f"clip of {t_len} frames shorter than window {n}")
    if n < 2:
        raise ContractError("windows need n >= 2")
    if stride == 1:
        off = (n - 1) // 2
        return [
            Window([_reflect(c - off + j, t_len) for j in range(n)])
            for c in range(t_len)
        ]
    windows = []
    start = 0
    while start + n <= t_len:
        windows.append(Window(list(range(start, start + n))))
        start += stride
    if windows and windows[-1].indices[-1] < t_len - 1:
        tail = [_reflect(start + j, t_len) for j in range(n)]
        windows.append(Window(tail))
    return windows


def gather(clip, window):
    """Window frames as one [n,3,H,W] array."""
    return clip.frames[np.asarray(window.indices)]


# ---------------------------------------------------------------------------
# augmentation


def augment(clean_window, rainy_window, rng, crop=None, flip="random"):
    """Shared random crop + horizontal flip over both windows of a pair.

    ``crop`` is the square crop size (divisible by 16); None skips cropping.
    ``flip`` is "random", "always" or "never".
    """
    if clean_window.shape != rainy_window.shape:
        raise ShapeError(
            f"window shapes differ: {clean_window.shape} vs {rainy_window.shape}"
        )
    h, w = clean_window.shape[2:]
    if crop is not None:
        if crop % FRAME_MULTIPLE:
            raise ConfigError(f"crop {crop} not divisible by {FRAME_MULTIPLE}")
        if crop > h or crop > w:
            raise ConfigError(f"crop {crop} exceeds frame extent {h}x{w}")
        oy = int(rng.integers(0, h - crop + 1))
        ox = int(rng.integers(0, w - crop + 1))
        clean_window = clean_window[:, :, oy : oy + crop, ox : ox + crop]
        rainy_window = rainy_window[:, :, oy : oy + crop, ox : ox + crop]
    if flip == "always" or (flip == "random" and rng.integers(0, 2) == 1):
        clean_window = clean_window[:, :, :, ::-1]
        rainy_window = rainy_window[:, :, :, ::-1]
    elif flip not in ("random", "never", "always"):
        raise ConfigError(f"unknown flip mode '{flip}'")
    return np.ascontiguousarray(clean_window), np.ascontiguousarray(rainy_window)


# ---------------------------------------------------------------------------
# frame I/O


def _quantize(frames):
    # round half away from zero; values are in [0,1] so +0.5-floor suffices
    return np.floor(frames * 255.0 + 0.5).astype(np.uint8)


def write_frames(clip, dir_path, fmt="ppm"):
    """One image per frame plus a manifest listing the files in order."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    data8 = _quantize(clip.frames)
    for i in range(len(clip)):
        name = f"frame_{i:04d}.{fmt}"
        rgb = np.transpose(data8[i], (1, 2, 0))  # HWC
        path = d / name
        if fmt == "ppm":
            h, w = rgb.shape[:2]
            with open(path, "wb") as fh:
                fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
                fh.write(rgb.tobytes())
        elif fmt == "png":
            try:
                from PIL import Image
            except ImportError as exc:
                raise IoError("PNG output requires Pillow") from exc
            Image.fromarray(rgb, mode="RGB").save(path)
        else:
            raise ConfigError(f"unknown frame format '{fmt}'")
        names.append(name)
    (d / MANIFEST).write_text("".join(f"{n}\n" for n in names))
    return names


def _read_ppm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P6"):
        raise IoError(f"{path}: not a binary PPM (P6) file")
    # header: magic, width, height, maxval; '#' comments allowed
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise IoError(f"{path}: malformed PPM header") from exc
    if maxval != 255:
        raise IoError(f"{path}: only maxval 255 supported, got {maxval}")
    raw = blob[pos : pos + w * h * 3]
    if len(raw) != w * h * 3:
        raise IoError(f"{path}: truncated pixel payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)


def _read_image(path):
    if path.suffix.lower() == ".ppm":
        return _read_ppm(path)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:
            raise IoError(f"{path}: PNG input requires Pillow") from exc
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    raise IoError(f"{path}: unsupported frame format")


def _numeric_key(name):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", name)]


def read_frames(dir_path, role="clean"):
    """Clip from a frame directory; manifest order if present, else numeric sort."""
    d = Path(dir_path)
    if not d.is_dir():
        raise IoError(f"{d}: not a directory")
    manifest = d / MANIFEST
    if manifest.exists():
        names = [ln.strip() for ln in manifest.read_text().splitlines() if ln.strip()]
    else:
        names = sorted(
            (p.name for p in d.iterdir() if p.suffix.lower() in (".ppm", ".png")),
            key=_numeric_key,
        )
    if not names:
        raise IoError(f"{d}: no frames found")
    frames = []
    shape = None
    for name in names:
        img = _read_image(d / name)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise IoError(
                f"{d / name}: frame size {img.shape[:2]} differs from {shape[:2]}"
            )
        frames.append(np.transpose(img, (2, 0, 1)))
    arr = np.stack(frames).astype(np.float32) / 255.0
    return VideoClip(arr, role=role)
