import math

import numpy as np
import pytest

from derainvid import engine as E
from derainvid.errors import ConfigError, ContractError, ShapeError
from derainvid.stim import (
    ReferenceLstm,
    StimConfig,
    _run_direction,
    convlstm_variants,
    reference_lstm_step,
    stim_bidirectional,
    stim_cell_step,
    stim_init,
    zero_state,
)

from conftest import max_rel_error, projection_loss, rand

CFG = StimConfig(feature_channels=4, hidden_channels=4)


def feats(n, seed, c=4, hw=8, scale=0.5, dtype=np.float32):
    return [E.tensor(rand((1, c, hw, hw), seed + t, scale, dtype)) for t in range(n)]


def zeroed(store):
    for name in store.names():
        store.value(name)[...] = 0
    return store


def randomized(store, seed, std=0.1):
    rng = np.random.default_rng(seed)
    for name in store.names():
        store.value(name)[...] = rng.normal(0, std, store.value(name).shape).astype(
            store.dtype
        )
    return store


# ---------------------------------------------------------------------------
# cell


def test_cell_zero_params_zero_state_is_zero():
    store = zeroed(stim_init(CFG, 0))
    f0, f1 = feats(2, seed=10)
    h, c = stim_cell_step(f1, f0, zero_state(f1, 4), store, config=CFG)
    assert np.all(h.data == 0)
    assert np.all(c.data == 0)


def test_cell_zero_params_halves_memory():
    # sigma(0)=0.5 forget gate, zero candidate: C_new = 0.5 * C
    store = zeroed(stim_init(CFG, 0))
    f0, f1 = feats(2, seed=20)
    c0 = rand((1, 4, 8, 8), 21, dtype=np.float32)
    state = (E.tensor(np.zeros_like(c0)), E.tensor(c0))
    _, c_new = stim_cell_step(f1, f0, state, store, config=CFG)
    np.testing.assert_allclose(c_new.data, 0.5 * c0, rtol=1e-6)


def test_cell_shape_mismatch():
    store = stim_init(CFG, 0)
    f0 = E.tensor(np.zeros((1, 4, 8, 8), dtype=np.float32))
    f1 = E.tensor(np.zeros((1, 4, 4, 4), dtype=np.float32))
    with pytest.raises(ShapeError):
        stim_cell_step(f1, f0, zero_state(f1, 4), store, config=CFG)
    with pytest.raises(ShapeError):
        stim_cell_step(f1, f1, zero_state(f0, 4), store, config=CFG)


def test_cell_gradcheck_two_chained_steps():
    store = randomized(stim_init(CFG, 1).astype(np.float64), seed=30)
    f = [rand((1, 4, 8, 8), 31 + t, scale=0.5) for t in range(2)]
    proj = rand((1, 4, 8, 8), 35)

    def build(tape):
        t0 = E.tensor(f[0], dtype=np.float64)
        t1 = E.tensor(f[1], dtype=np.float64)
        zero_f = E.tensor(np.zeros_like(f[0]))
        state = zero_state(t0, 4)
        state = stim_cell_step(t0, zero_f, state, store, config=CFG, tape=tape,
                               prefix="stim.fwd")
        state = stim_cell_step(t1, t0, state, store, config=CFG, tape=tape,
                               prefix="stim.fwd")
        return projection_loss(state[0], proj)

    # only the forward direction participates in this fragment
    fwd = [n for n in store.names() if n.startswith("stim.fwd")]
    report = E.gradcheck(build, store, max_probes=3, seed=36)
    errs = {name: err for name, err in report}
    assert max(errs[n] for n in fwd) < 1e-4


def test_gate_ranges_strictly_inside_bounds():
    # moderate scales: float32 sigmoid saturates to exactly 1.0 past |x|~17
    store = randomized(stim_init(CFG, 2), seed=40, std=0.1)
    f = feats(3, seed=41, scale=1.0)
    probe = {}
    stim_bidirectional(f, store, config=CFG, probe=probe)
    assert probe["gates"]
    for g in probe["gates"]:
        for k in ("f", "i", "o"):
            assert np.all((g[k] > 0) & (g[k] < 1))
        assert np.all((g["c_tilde"] > -1) & (g["c_tilde"] < 1))


# ---------------------------------------------------------------------------
# bidirectional sequence


def test_bidirectional_shapes_n5():
    store = randomized(stim_init(CFG, 3), seed=50, std=0.05)
    out = stim_bidirectional(feats(5, seed=51, hw=32), store, config=CFG)
    assert len(out) == 5
    for frame in out:
        assert frame.shape == (1, 3, 32, 32)


def test_bidirectional_rejects_single_frame():
    store = stim_init(CFG, 4)
    with pytest.raises(ContractError):
        stim_bidirectional(feats(1, seed=60), store, config=CFG)


def test_zero_params_zero_output():
    store = zeroed(stim_init(CFG, 5))
    out = stim_bidirectional(feats(4, seed=70), store, config=CFG)
    for frame in out:
        assert np.all(frame.data == 0)


def test_palindrome_with_tied_directions_reverses_hidden_states():
    store = randomized(stim_init(CFG, 6), seed=80, std=0.1)
    for name in store.names():
        if ".fwd." in name:
            store.value(name)[...] = store.value(name.replace(".fwd.", ".bwd."))
    f = feats(5, seed=81)
    f[3] = f[1]
    f[4] = f[0]  # palindromic sequence
    h_fwd = _run_direction(f, store, CFG, None, "stim.fwd")
    h_bwd_rev = _run_direction(f[::-1], store, CFG, None, "stim.bwd")
    h_bwd = h_bwd_rev[::-1]
    for t in range(5):
        np.testing.assert_array_equal(h_bwd[t].data, h_fwd[4 - t].data)


def test_temporal_sensitivity_to_frame_order():
    store = randomized(stim_init(CFG, 7), seed=90, std=0.1)
    f = feats(4, seed=91)
    out = stim_bidirectional(f, store, config=CFG)
    perm = [f[1], f[3], f[0], f[2]]
    out_p = stim_bidirectional(perm, store, config=CFG)
    assert any(
        not np.array_equal(a.data, b.data) for a, b in zip(out, out_p)
    )


def test_interaction_input_is_live():
    # zeroing the kernel slice that reads the previous frame's features
    # must change the outputs
    store = randomized(stim_init(CFG, 8), seed=100, std=0.1)
    f = feats(3, seed=101)
    before = [o.data for o in stim_bidirectional(f, store, config=CFG)]
    cf = CFG.feature_channels
    for name in store.names():
        if ".gate_" in name and name.endswith(".w"):
            store.value(name)[:, cf : 2 * cf] = 0
    after = [o.data for o in stim_bidirectional(f, store, config=CFG)]
    assert any(not np.array_equal(a, b) for a, b in zip(before, after))


def test_gradient_reaches_both_directions():
    store = randomized(stim_init(CFG, 9), seed=110, std=0.1)
    f = feats(3, seed=111)
    store.zero_grads()
    tape = E.Tape()
    out = stim_bidirectional(f, store, config=CFG, tape=tape)
    loss = E.mean_all(E.concat([E.hadamard(o, o) for o in out], axis=0))
    tape.backward(loss)
    for direction in ("fwd", "bwd"):
        gs = [
            store.grad(n)
            for n in store.names()
            if n.startswith(f"stim.{direction}")
        ]
        assert any(np.any(g != 0) for g in gs), direction


# ---------------------------------------------------------------------------
# ablation cells


def test_convlstm_interface_parity():
    cfg = StimConfig(feature_channels=4, hidden_channels=4,
                     interaction=False, bidirectional=False)
    store = randomized(stim_init(cfg, 10), seed=120, std=0.1)
    out = convlstm_variants(feats(5, seed=121), store, "convlstm", config=cfg)
    assert len(out) == 5
    assert all(o.shape == (1, 3, 8, 8) for o in out)


def test_convlstm_is_causal():
    cfg = StimConfig(feature_channels=4, hidden_channels=4,
                     interaction=False, bidirectional=False)
    store = randomized(stim_init(cfg, 11), seed=130, std=0.1)
    f = feats(5, seed=131)
    out = convlstm_variants(f, store, "convlstm", config=cfg)
    f2 = list(f)
    f2[3] = E.tensor(rand((1, 4, 8, 8), 999, dtype=np.float32))
    out2 = convlstm_variants(f2, store, "convlstm", config=cfg)
    for t in range(3):
        np.testing.assert_array_equal(out[t].data, out2[t].data)
    assert not np.array_equal(out[3].data, out2[3].data)


def test_b_convlstm_palindrome_symmetry():
    cfg = StimConfig(feature_channels=4, hidden_channels=4,
                     interaction=False, bidirectional=True)
    store = randomized(stim_init(cfg, 12).astype(np.float64), seed=140, std=0.1)
    for name in store.names():
        if ".fwd." in name:
            store.value(name)[...] = store.value(name.replace(".fwd.", ".bwd."))
    # symmetrize the fusion head across its two direction slices
    w = store.value("stim.fuse1.w")
    ch = cfg.hidden_channels
    w[:, ch:] = w[:, :ch]
    f = feats(5, seed=141, dtype=np.float64)
    f[3] = f[1]
    f[4] = f[0]
    out = convlstm_variants(f, store, "b_convlstm", config=cfg)
    for t in range(5):
        np.testing.assert_allclose(
            out[t].data, out[4 - t].data, rtol=1e-12, atol=1e-14
        )


def test_unknown_variant_rejected():
    store = stim_init(CFG, 13)
    with pytest.raises(ConfigError):
        convlstm_variants(feats(3, seed=150), store, "gru", config=CFG)


# ---------------------------------------------------------------------------
# reference LSTM


def test_reference_zero_params_zero_state():
    cell = ReferenceLstm(3, 2)
    for g in cell.u:
        cell.u[g][...] = 0
        cell.w[g][...] = 0
    h, c = reference_lstm_step([1.0, -2.0, 0.5], np.zeros(2), np.zeros(2), cell)
    np.testing.assert_array_equal(h, np.zeros(2))
    np.testing.assert_array_equal(c, np.zeros(2))


def test_reference_zero_params_halves_memory():
    cell = ReferenceLstm(2, 2)
    for g in cell.u:
        cell.u[g][...] = 0
        cell.w[g][...] = 0
    c0 = np.array([0.8, -0.4])
    _, c1 = cell.step(np.zeros(2), np.zeros(2), c0)
    np.testing.assert_allclose(c1, 0.5 * c0, rtol=1e-12)


def test_reference_single_unit_scalar_oracle():
    # hand-evaluated update with picked scalars
    cell = ReferenceLstm(1, 1)
    vals = {"f": (0.5, -0.3, 0.1), "i": (-0.2, 0.4, 0.0),
            "c": (0.7, 0.2, -0.1), "o": (0.3, -0.6, 0.2)}
    for g, (u, w, b) in vals.items():
        cell.u[g][...] = u
        cell.w[g][...] = w
        cell.b[g][...] = b
    x, h0, c0 = 0.8, -0.2, 0.4

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    f = sig(0.5 * x + (-0.3) * h0 + 0.1)
    i = sig(-0.2 * x + 0.4 * h0 + 0.0)
    c_tilde = math.tanh(0.7 * x + 0.2 * h0 - 0.1)
    c1 = f * c0 + i * c_tilde
    o = sig(0.3 * x - 0.6 * h0 + 0.2)
    h1 = o * math.tanh(c1)

    h_got, c_got = cell.step([x], [h0], [c0])
    assert h_got[0] == pytest.approx(h1, rel=1e-12)
    assert c_got[0] == pytest.approx(c1, rel=1e-12)


def test_reference_dim_mismatch():
    cell = ReferenceLstm(3, 2)
    with pytest.raises(ShapeError):
        cell.step(np.zeros(4), np.zeros(2), np.zeros(2))
    with pytest.raises(ShapeError):
        cell.step(np.zeros(3), np.zeros(3), np.zeros(3))
