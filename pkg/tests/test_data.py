import numpy as np
import pytest

from derainvid.data import (
    RainParams,
    VideoClip,
    add_rain,
    augment,
    gather,
    make_windows,
    rain_preset,
    read_frames,
    synth_clean_clip,
    write_frames,
)
from derainvid.errors import ConfigError, ContractError, IoError, ShapeError
from derainvid.metrics import psnr


def test_synth_deterministic_per_seed():
    a = synth_clean_clip(5, 6, 32, 48)
    b = synth_clean_clip(5, 6, 32, 48)
    np.testing.assert_array_equal(a.frames, b.frames)


def test_synth_distinct_seeds_distinct_clips():
    pairs = [(s, s + 100) for s in range(10)]
    for s1, s2 in pairs:
        a = synth_clean_clip(s1, 4, 32, 32)
        b = synth_clean_clip(s2, 4, 32, 32)
        assert np.mean((a.frames - b.frames) ** 2) > 0


def test_synth_has_motion():
    clip = synth_clean_clip(1, 8, 32, 32)
    for t in range(7):
        assert np.mean((clip.frames[t] - clip.frames[t + 1]) ** 2) > 0


def test_synth_values_in_range():
    clip = synth_clean_clip(2, 5, 48, 32)
    assert clip.frames.min() >= 0.0
    assert clip.frames.max() <= 1.0


def test_synth_rejects_indivisible_dims():
    with pytest.raises(ShapeError):
        synth_clean_clip(0, 4, 30, 32)


def test_clip_clamps_at_construction():
    clip = VideoClip(np.full((2, 3, 16, 16), 1.7, dtype=np.float32))
    assert clip.frames.max() == 1.0


# ---------------------------------------------------------------------------
# rain


def test_zero_streaks_is_identity():
    clip = synth_clean_clip(3, 5, 32, 32)
    rainy = add_rain(clip, RainParams(streak_count=0, seed=1))
    np.testing.assert_array_equal(rainy.frames, clip.frames)


def test_rain_is_additive_and_nonnegative():
    clip = synth_clean_clip(4, 5, 48, 48)
    rainy = add_rain(clip, rain_preset("default", seed=2))
    assert np.all(rainy.frames >= clip.frames)


def test_rain_deterministic():
    clip = synth_clean_clip(4, 5, 48, 48)
    a = add_rain(clip, rain_preset("default", seed=3))
    b = add_rain(clip, rain_preset("default", seed=3))
    np.testing.assert_array_equal(a.frames, b.frames)


def test_more_streaks_lower_psnr():
    clip = synth_clean_clip(6, 5, 64, 64)
    base = RainParams(streak_count=40, seed=4)
    double = RainParams(streak_count=80, seed=4)
    p1 = np.mean(
        [psnr(f, c) for f, c in zip(add_rain(clip, base).frames, clip.frames)]
    )
    p2 = np.mean(
        [psnr(f, c) for f, c in zip(add_rain(clip, double).frames, clip.frames)]
    )
    assert p1 < 100.0
    assert p2 < p1


def test_rain_params_validation():
    with pytest.raises(ConfigError):
        RainParams(streak_count=-1)
    with pytest.raises(ConfigError):
        RainParams(length_range=(5.0, 2.0))
    with pytest.raises(ConfigError):
        RainParams(intensity_range=(0.0, 0.5))
    with pytest.raises(ConfigError):
        rain_preset("monsoon")


def test_rain_temporal_coherence():
    # the same streak population translated by the velocity: frame t+1 equals
    # frame t's layer shifted, so layer correlation across frames is high
    clip = VideoClip(np.zeros((3, 3, 64, 64), dtype=np.float32))
    rainy = add_rain(clip, RainParams(streak_count=50, velocity=(2.0, 0.0), seed=5))
    l0, l1 = rainy.frames[0, 0], rainy.frames[1, 0]
    shifted = np.roll(l0, 2, axis=0)
    overlap = np.sum((shifted > 0) & (l1 > 0)) / max(np.sum(l1 > 0), 1)
    assert overlap > 0.5


# ---------------------------------------------------------------------------
# windows


def test_training_windows_hand_enumeration():
    wins = make_windows(12, 5, 5)
    assert [w.indices for w in wins] == [
        [0, 1, 2, 3, 4],
        [5, 6, 7, 8, 9],
        [10, 11, 10, 9, 8],
    ]
    assert [w.center for w in wins] == [2, 7, 10]


def test_inference_windows_one_per_center():
    wins = make_windows(5, 5, 1)
    assert len(wins) == 5
    assert [w.center for w in wins] == [0, 1, 2, 3, 4]
    assert wins[0].indices == [2, 1, 0, 1, 2]
    assert wins[4].indices == [2, 3, 4, 3, 2]


def test_windows_exact_cover_no_tail():
    wins = make_windows(10, 5, 5)
    assert [w.indices for w in wins] == [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9]]


def test_window_too_long_rejected():
    with pytest.raises(ContractError):
        make_windows(3, 5, 1)


def test_gather_shapes():
    clip = synth_clean_clip(7, 6, 32, 32)
    win = make_windows(6, 5, 1)[0]
    assert gather(clip, win).shape == (5, 3, 32, 32)


# ---------------------------------------------------------------------------
# augmentation


def test_flip_twice_is_identity():
    clean = synth_clean_clip(8, 5, 32, 32).frames
    rainy = clean + 0.01
    rng = np.random.default_rng(0)
    c1, r1 = augment(clean, rainy, rng, flip="always")
    c2, r2 = augment(c1, r1, rng, flip="always")
    np.testing.assert_array_equal(c2, clean)
    np.testing.assert_array_equal(r2, rainy)


def test_crop_matches_manual_slice():
    clean = synth_clean_clip(9, 5, 96, 96).frames
    rainy = np.clip(clean + 0.05, 0, 1)
    rng = np.random.default_rng(7)
    c, r = augment(clean, rainy, rng, crop=64, flip="never")
    assert c.shape == (5, 3, 64, 64)
    # recover the offset by matching the first frame
    rng2 = np.random.default_rng(7)
    oy = int(rng2.integers(0, 96 - 64 + 1))
    ox = int(rng2.integers(0, 96 - 64 + 1))
    np.testing.assert_array_equal(c, clean[:, :, oy : oy + 64, ox : ox + 64])
    np.testing.assert_array_equal(r, rainy[:, :, oy : oy + 64, ox : ox + 64])


def test_pair_stays_aligned():
    clean = synth_clean_clip(10, 4, 64, 64)
    rainy = add_rain(clean, rain_preset("default", seed=11))
    diff_before = rainy.frames - clean.frames
    rng = np.random.default_rng(3)
    c, r = augment(clean.frames, rainy.frames, rng, crop=32, flip="random")
    # the rain difference support must be the transform of the original
    assert np.all(r - c >= -1e-7)
    assert np.any(r - c > 0) == np.any(diff_before > 0)


def test_crop_validation():
    clean = synth_clean_clip(11, 3, 32, 32).frames
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        augment(clean, clean, rng, crop=48)
    with pytest.raises(ConfigError):
        augment(clean, clean, rng, crop=24)


# ---------------------------------------------------------------------------
# frame I/O


def test_write_read_roundtrip_quantization_bound(tmp_path):
    clip = synth_clean_clip(12, 4, 32, 48)
    write_frames(clip, tmp_path / "c")
    back = read_frames(tmp_path / "c")
    assert len(back) == 4
    assert np.max(np.abs(back.frames - clip.frames)) <= 1.0 / 510.0 + 1e-7


def test_write_read_roundtrip_png(tmp_path):
    pytest.importorskip("PIL")
    clip = synth_clean_clip(13, 3, 32, 32)
    write_frames(clip, tmp_path / "p", fmt="png")
    back = read_frames(tmp_path / "p")
    assert np.max(np.abs(back.frames - clip.frames)) <= 1.0 / 510.0 + 1e-7


def test_empty_directory_rejected(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(IoError):
        read_frames(tmp_path / "empty")


def test_numeric_filename_ordering(tmp_path):
    clip = synth_clean_clip(14, 3, 16, 16)
    d = tmp_path / "n"
    d.mkdir()
    # write out of lexicographic order: frame_2 < frame_10 numerically
    from derainvid.data import _quantize

    for i, name in [(0, "frame_2.ppm"), (1, "frame_10.ppm"), (2, "frame_1.ppm")]:
        rgb = np.transpose(_quantize(clip.frames[i]), (1, 2, 0))
        with open(d / name, "wb") as fh:
            fh.write(b"P6\n16 16\n255\n" + rgb.tobytes())
    back = read_frames(d)
    np.testing.assert_allclose(
        back.frames[0], _quantize(clip.frames[2]) / 255.0, atol=1e-7
    )
    np.testing.assert_allclose(
        back.frames[1], _quantize(clip.frames[0]) / 255.0, atol=1e-7
    )
    np.testing.assert_allclose(
        back.frames[2], _quantize(clip.frames[1]) / 255.0, atol=1e-7
    )


def test_mixed_sizes_rejected(tmp_path):
    d = tmp_path / "m"
    d.mkdir()
    with open(d / "frame_0.ppm", "wb") as fh:
        fh.write(b"P6\n2 2\n255\n" + bytes(12))
    with open(d / "frame_1.ppm", "wb") as fh:
        fh.write(b"P6\n3 2\n255\n" + bytes(18))
    with pytest.raises(IoError) as exc:
        read_frames(d)
    assert "frame_1" in str(exc.value)


def test_truncated_ppm_rejected(tmp_path):
    d = tmp_path / "t"
    d.mkdir()
    with open(d / "frame_0.ppm", "wb") as fh:
        fh.write(b"P6\n4 4\n255\n" + bytes(10))
    with pytest.raises(IoError):
        read_frames(d)
