import math

import numpy as np
import pytest

from stlstm import cells, rng
from stlstm.cells import CellState
from stlstm.linalg import AffineMap, ConfigError


def zero_affine(out_dim, in_dim):
    return AffineMap(np.zeros((out_dim, in_dim)), np.zeros(out_dim))


def zero_lstm(input_dim, d):
    return cells.LstmParams(zero_affine(4 * d, input_dim + d))


def zero_st(input_dim, d):
    return cells.StLstmParams(zero_affine(5 * d, input_dim + 2 * d))


def zero_trust(input_dim, d, lam=0.5):
    return cells.TrustGateParams(zero_st(input_dim, d),
                                 zero_affine(d, 2 * d), zero_affine(d, input_dim), lam)


def zero_fusion(d1, d2, d, lam=0.5):
    ctx = 4 * d
    return cells.FusionParams(
        gate_maps=(zero_affine(4 * d, d1 + ctx), zero_affine(4 * d, d2 + ctx)),
        predict_maps=(zero_affine(d, ctx), zero_affine(d, ctx)),
        input_maps=(zero_affine(d, d1), zero_affine(d, d2)),
        output_map=zero_affine(2 * d, d1 + d2 + ctx),
        lam=lam)


def random_params(kind, stm, input_dim=3, d=3, scale=0.8):
    if kind == "lstm":
        params = cells.init_lstm(stm, input_dim, d)
    elif kind == "lstm_trust":
        params = cells.init_lstm_trust(stm, input_dim, d, 0.5)
    elif kind == "st_lstm":
        params = cells.init_st_lstm(stm, input_dim, d)
    elif kind == "st_lstm_trust":
        params = cells.init_trust_gate(stm, input_dim, d, 0.5)
    else:
        params = cells.init_fusion(stm, (input_dim, input_dim + 1), d, 0.5)
    for _, arr in params.param_items():
        arr[...] = stm.uniform_range(-scale, scale, arr.size).reshape(arr.shape)
    return params


def random_step(kind, stm, input_dim=3, d=3):
    """Random (params, inputs, states) for one cell step."""
    params = random_params(kind, stm, input_dim, d)
    hdim = 2 * d if kind == "fusion" else d
    if kind == "fusion":
        x = (stm.normal(input_dim), stm.normal(input_dim + 1))
        sp = CellState(stm.normal(hdim), (stm.normal(d), stm.normal(d)))
        tm = CellState(stm.normal(hdim), (stm.normal(d), stm.normal(d)))
    else:
        x = stm.normal(input_dim)
        sp = CellState(stm.normal(hdim), stm.normal(d))
        tm = CellState(stm.normal(hdim), stm.normal(d))
    return params, x, sp, tm


class TestLstmForward:
    def test_zero_params_zero_state(self):
        params = zero_lstm(3, 2)
        state, _ = cells.lstm_forward(params, np.array([5.0, -1.0, 2.0]),
                                      cells.zero_state(2))
        assert np.array_equal(state.h, np.zeros(2))
        assert np.array_equal(state.c, np.zeros(2))

    def test_zero_params_unit_cell(self):
        # all gates sigmoid(0)=0.5, u=0: c = 0.5 * 1, h = 0.5 * tanh(0.5)
        params = zero_lstm(1, 1)
        prev = CellState(np.zeros(1), np.ones(1))
        state, _ = cells.lstm_forward(params, np.zeros(1), prev)
        assert abs(state.c[0] - 0.5) < 1e-15
        expected_h = 0.5 * math.tanh(0.5)
        assert abs(expected_h - 0.23105857863000487) < 1e-12
        assert abs(state.h[0] - expected_h) < 1e-15


class TestStLstmForward:
    def test_zero_params_average_history(self):
        params = zero_st(2, 3)
        sp = CellState(np.zeros(3), np.array([1.0, 2.0, -4.0]))
        tm = CellState(np.zeros(3), np.array([3.0, 0.0, 2.0]))
        state, _ = cells.st_lstm_forward(params, np.ones(2), sp, tm)
        assert np.allclose(state.c, 0.5 * (sp.c + tm.c), atol=1e-15)

    def test_zero_params_cancellation(self):
        params = zero_st(2, 1)
        sp = CellState(np.zeros(1), np.array([1.0]))
        tm = CellState(np.zeros(1), np.array([-1.0]))
        state, _ = cells.st_lstm_forward(params, np.zeros(2), sp, tm)
        assert state.c[0] == 0.0
        assert state.h[0] == 0.0


class TestTrustGateForward:
    def test_zero_params_blocks_everything(self):
        params = zero_trust(2, 2)
        sp = CellState(np.zeros(2), np.array([3.0, -1.0]))
        tm = CellState(np.zeros(2), np.array([1.0, 5.0]))
        state, cache = cells.trust_gate_forward(params, np.ones(2), sp, tm)
        assert np.array_equal(cache.tau, np.ones(2))  # p = x' = 0
        assert np.array_equal(state.c, np.zeros(2))   # tau*i*u with u=0
        assert np.array_equal(state.h, np.zeros(2))

    def test_unit_scalar_case(self):
        # d=D=1, all maps zero except input_map weight=1, lambda=0.5, x=1:
        # x'=tanh(1), tau=exp(-0.5 x'^2), c=(1-tau)*(0.5*1+0.5*1), h=0.5*tanh(c)
        params = cells.TrustGateParams(
            zero_st(1, 1), zero_affine(1, 2),
            AffineMap(np.array([[1.0]]), np.zeros(1)), 0.5)
        sp = CellState(np.zeros(1), np.ones(1))
        tm = CellState(np.zeros(1), np.ones(1))
        state, cache = cells.trust_gate_forward(params, np.ones(1), sp, tm)

        xp = math.tanh(1.0)
        tau = math.exp(-0.5 * xp * xp)
        c = (1.0 - tau) * (0.5 + 0.5)
        h = 0.5 * math.tanh(c)
        # frozen oracle values; quoted approximations hold to ~1e-4
        assert abs(xp - 0.7615941560) < 1e-9
        assert abs(tau - 0.7482539680) < 1e-9
        assert abs(c - 0.2517460320) < 1e-9
        assert abs(h - 0.1232796276) < 1e-9
        assert abs(h - 0.123335) < 1e-4
        assert abs(cache.xp[0] - xp) < 1e-12
        assert abs(cache.tau[0] - tau) < 1e-12
        assert abs(state.c[0] - c) < 1e-12
        assert abs(state.h[0] - h) < 1e-12

    def test_trust_monotone_in_discrepancy(self):
        # holding context fixed, larger |p - x'| strictly shrinks tau
        params = cells.TrustGateParams(
            zero_st(1, 1), zero_affine(1, 2),
            AffineMap(np.array([[1.0]]), np.zeros(1)), 0.5)
        sp = tm = CellState(np.zeros(1), np.zeros(1))
        taus = []
        for x in (0.0, 0.25, 0.5, 1.0, 2.0):
            _, cache = cells.trust_gate_forward(params, np.array([x]), sp, tm)
            taus.append(float(cache.tau[0]))
        assert all(a > b for a, b in zip(taus, taus[1:]))

    def test_gate_ranges(self):
        stm = rng.stream(4, "ranges")
        for _ in range(20):
            params, x, sp, tm = random_step("st_lstm_trust", stm)
            state, cache = cells.trust_gate_forward(params, x, sp, tm)
            assert np.all((cache.tau > 0) & (cache.tau <= 1))
            for gate in (cache.i, cache.f_s, cache.f_t, cache.o):
                assert np.all((gate > 0) & (gate < 1))
            assert np.all(np.isfinite(state.c))


class TestFusionForward:
    def test_zero_params(self):
        params = zero_fusion(2, 3, 2)
        sp = CellState(np.zeros(4), (np.zeros(2), np.zeros(2)))
        tm = CellState(np.zeros(4), (np.zeros(2), np.zeros(2)))
        state, cache = cells.fusion_forward(params, np.ones(2), np.ones(3), sp, tm)
        assert np.array_equal(cache.tau[0], np.ones(2))
        assert np.array_equal(cache.tau[1], np.ones(2))
        assert np.array_equal(state.c[0], np.zeros(2))
        assert np.array_equal(state.c[1], np.zeros(2))
        assert np.array_equal(state.h, np.zeros(4))

    def test_identical_modalities_symmetric(self):
        stm = rng.stream(9, "fusion-sym")
        d = 3
        base = cells.init_fusion(stm, (4, 4), d, 0.5)
        sym = cells.FusionParams(
            gate_maps=(base.gate_maps[0], base.gate_maps[0]),
            predict_maps=(base.predict_maps[0], base.predict_maps[0]),
            input_maps=(base.input_maps[0], base.input_maps[0]),
            output_map=base.output_map, lam=0.5)
        x = stm.normal(4)
        sp = CellState(stm.normal(2 * d), (stm.normal(d), stm.normal(d)))
        sp.c = (sp.c[0], sp.c[0].copy())
        tm = CellState(stm.normal(2 * d), (stm.normal(d), stm.normal(d)))
        tm.c = (tm.c[0], tm.c[0].copy())
        state, _ = cells.fusion_forward(sym, x, x.copy(), sp, tm)
        assert np.array_equal(state.c[0], state.c[1])

    def test_missing_modality_rejected(self):
        params = zero_fusion(2, 3, 2)
        sp = CellState(np.zeros(4), (np.zeros(2), np.zeros(2)))
        with pytest.raises(ValueError):
            cells.fusion_forward(params, np.ones(2), None, sp, sp)


def scalar_loss(kind, params, x, sp, tm, gh, gc):
    state, _ = cells.cell_forward(kind, params, x, sp, tm)
    if kind == "fusion":
        return float((state.h * gh).sum() + (state.c[0] * gc[0]).sum()
                     + (state.c[1] * gc[1]).sum())
    return float((state.h * gh).sum() + (state.c * gc).sum())


def numeric_grad(arr, k, loss_fn, eps=1e-5):
    flat = arr.reshape(-1)
    old = flat[k]
    flat[k] = old + eps
    up = loss_fn()
    flat[k] = old - eps
    down = loss_fn()
    flat[k] = old
    return (up - down) / (2 * eps)


@pytest.mark.parametrize("kind", cells.KINDS)
def test_backward_matches_finite_differences(kind):
    """Every parameter, input, and state gradient vs central differences."""
    stm = rng.stream(17, "fd", cells.KINDS.index(kind))
    params, x, sp, tm = random_step(kind, stm)
    state, cache = cells.cell_forward(kind, params, x, sp, tm)
    if kind == "fusion":
        gh = stm.normal(state.h.shape[-1])
        gc = (stm.normal(3), stm.normal(3))
    else:
        gh = stm.normal(state.h.shape[-1])
        gc = stm.normal(state.c.shape[-1])
    grads, dx, dsp, dtm = cells.cell_backward(kind, params, cache, gh, gc)

    def loss_fn():
        return scalar_loss(kind, params, x, sp, tm, gh, gc)

    checks = [(name, arr, grads[name]) for name, arr in params.param_items()]
    if kind == "fusion":
        checks += [("x1", x[0], dx[0]), ("x2", x[1], dx[1]),
                   ("h_sp", sp.h, dsp[0]), ("c_sp1", sp.c[0], dsp[1][0]),
                   ("c_sp2", sp.c[1], dsp[1][1]),
                   ("h_tm", tm.h, dtm[0]), ("c_tm1", tm.c[0], dtm[1][0]),
                   ("c_tm2", tm.c[1], dtm[1][1])]
    else:
        checks += [("x", x, dx), ("h_tm", tm.h, dtm[0]), ("c_tm", tm.c, dtm[1])]
        if dsp is not None:
            checks += [("h_sp", sp.h, dsp[0]), ("c_sp", sp.c, dsp[1])]

    worst = 0.0
    for name, arr, grad in checks:
        flat_g = np.asarray(grad).reshape(-1)
        for k in range(flat_g.size):
            numeric = numeric_grad(np.asarray(arr), k, loss_fn)
            rel = abs(flat_g[k] - numeric) / max(abs(flat_g[k]), abs(numeric), 1e-8)
            worst = max(worst, rel)
    assert worst < 1e-4


@pytest.mark.parametrize("kind", cells.KINDS)
def test_directional_derivatives(kind):
    """g . v vs (L(theta+eps v) - L(theta-eps v)) / 2eps over random directions."""
    stm = rng.stream(23, "dir", cells.KINDS.index(kind))
    params, x, sp, tm = random_step(kind, stm)
    state, cache = cells.cell_forward(kind, params, x, sp, tm)
    if kind == "fusion":
        gh, gc = stm.normal(state.h.shape[-1]), (stm.normal(3), stm.normal(3))
    else:
        gh, gc = stm.normal(state.h.shape[-1]), stm.normal(state.c.shape[-1])
    grads, *_ = cells.cell_backward(kind, params, cache, gh, gc)
    eps = 1e-5
    arrays = [arr for _, arr in params.param_items()]
    for trial in range(100):
        vs = [stm.normal(arr.size).reshape(arr.shape) for arr in arrays]
        analytic = sum(float((grads[name] * v).sum())
                       for (name, _), v in zip(params.param_items(), vs))
        for arr, v in zip(arrays, vs):
            arr += eps * v
        up = scalar_loss(kind, params, x, sp, tm, gh, gc)
        for arr, v in zip(arrays, vs):
            arr -= 2 * eps * v
        down = scalar_loss(kind, params, x, sp, tm, gh, gc)
        for arr, v in zip(arrays, vs):
            arr += eps * v
        numeric = (up - down) / (2 * eps)
        assert abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8) < 1e-4


@pytest.mark.parametrize("kind", cells.KINDS)
def test_backward_zero_incoming_grads(kind):
    stm = rng.stream(31, "zero", cells.KINDS.index(kind))
    params, x, sp, tm = random_step(kind, stm)
    state, cache = cells.cell_forward(kind, params, x, sp, tm)
    if kind == "fusion":
        gh, gc = np.zeros(state.h.shape[-1]), (np.zeros(3), np.zeros(3))
    else:
        gh, gc = np.zeros(state.h.shape[-1]), np.zeros(state.c.shape[-1])
    grads, dx, dsp, dtm = cells.cell_backward(kind, params, cache, gh, gc)
    for g in grads.values():
        assert not np.any(g)
    assert not np.any(dx[0] if kind == "fusion" else dx)


def test_lstm_backward_hand_case():
    # zero params, prev.c = 0, grad_h = [1]: d(prev.c) = o * tanh'(0) * f = 0.25
    params = zero_lstm(1, 1)
    prev = CellState(np.zeros(1), np.zeros(1))
    _, cache = cells.lstm_forward(params, np.zeros(1), prev)
    _, _, _, (dh_prev, dc_prev) = cells.cell_backward(
        "lstm", params, cache, np.ones(1), np.zeros(1))
    assert abs(dc_prev[0] - 0.25) < 1e-15


def test_backward_kind_mismatch():
    params = zero_lstm(1, 1)
    _, cache = cells.lstm_forward(params, np.zeros(1), cells.zero_state(1))
    with pytest.raises(ConfigError, match="lstm"):
        cells.cell_backward("st_lstm", params, cache, np.ones(1))


def st_params_from_lstm(lstm_params: cells.LstmParams) -> cells.StLstmParams:
    """Weight arrangement under which ST-LSTM reduces to the plain LSTM."""
    d = lstm_params.hidden_dim
    din = lstm_params.input_dim
    w = lstm_params.gate_map.weight
    b = lstm_params.gate_map.bias
    st_w = np.zeros((5 * d, din + 2 * d))
    st_b = np.zeros(5 * d)
    # lstm blocks (i, f, o, u) map to st blocks (i, f_s, f_t, o, u)
    for lstm_block, st_block in ((0, 0), (1, 2), (2, 3), (3, 4)):
        rows = slice(lstm_block * d, (lstm_block + 1) * d)
        st_rows = slice(st_block * d, (st_block + 1) * d)
        st_w[st_rows, :din] = w[rows, :din]           # input columns
        st_w[st_rows, din + d:] = w[rows, din:]       # temporal-h columns
        st_b[st_rows] = b[rows]
    return cells.StLstmParams(AffineMap(st_w, st_b))


def test_st_lstm_reduces_to_lstm():
    """Zero spatial context + zero spatial-forget block == plain LSTM."""
    stm = rng.stream(41, "reduction")
    steps = 1000
    d, din = 1, 2
    lstm_params = cells.init_lstm(stm, din, d)
    for _, arr in lstm_params.param_items():
        arr[...] = stm.uniform_range(-1.0, 1.0, arr.size).reshape(arr.shape)
    st_params = st_params_from_lstm(lstm_params)

    x = stm.normal(steps * din).reshape(steps, din)
    h_prev = stm.normal(steps * d).reshape(steps, d)
    c_prev = stm.normal(steps * d).reshape(steps, d)
    zeros = np.zeros((steps, d))

    lstm_state, _ = cells.lstm_forward(lstm_params, x, CellState(h_prev, c_prev))
    st_state, _ = cells.st_lstm_forward(
        st_params, x, CellState(zeros, zeros), CellState(h_prev, c_prev))
    assert np.max(np.abs(lstm_state.c - st_state.c)) < 1e-12
    assert np.max(np.abs(lstm_state.h - st_state.h)) < 1e-12


def test_batched_forward_matches_loop():
    stm = rng.stream(47, "batch")
    params, _, _, _ = random_step("st_lstm_trust", stm)
    batch = 8
    x = stm.normal(batch * 3).reshape(batch, 3)
    sp = CellState(stm.normal(batch * 3).reshape(batch, 3),
                   stm.normal(batch * 3).reshape(batch, 3))
    tm = CellState(stm.normal(batch * 3).reshape(batch, 3),
                   stm.normal(batch * 3).reshape(batch, 3))
    state, _ = cells.trust_gate_forward(params, x, sp, tm)
    for b in range(batch):
        single, _ = cells.trust_gate_forward(
            params, x[b], CellState(sp.h[b], sp.c[b]), CellState(tm.h[b], tm.c[b]))
        # batched and single-row matmuls may use different BLAS kernels
        assert np.max(np.abs(single.h - state.h[b])) < 1e-14
        assert np.max(np.abs(single.c - state.c[b])) < 1e-14
