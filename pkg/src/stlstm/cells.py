"""Recurrent cell variants: forward passes and exact analytic backward passes.

Four cell families share one code path here:

  lstm           gates (i, f, o, u) from (x, h_prev)
  lstm_trust     lstm plus an input-reliability gate predicted from h_prev
  st_lstm        gates (i, f_s, f_t, o, u) from (x, h_spatial, h_temporal),
                 one forget gate per context direction
  st_lstm_trust  st_lstm plus the reliability gate predicted from both contexts
  fusion         two modalities, each with its own (i, f_s, f_t, u) gates,
                 reliability gate and memory cell, sharing one output gate

The reliability ("trust") gate compares a context-based prediction of the
input against the transformed actual input: tau = exp(-lam * (p - x')^2).
It scales the fresh-input contribution and inversely scales history
retention, so an unpredictable (likely corrupted) input is blocked from
the memory cell.

A fused cell keeps one memory cell per modality; its hidden state is the
output gate applied to tanh of the stacked pair, so fused hidden states
have length 2d and every map consuming context takes 2d per context
vector.

All functions accept feature-last arrays with an optional leading batch
axis. Every forward returns `(CellState, StepCache)`; the cache holds the
activations `cell_backward` needs, referencing (not copying) its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import rng
from .linalg import (
    AffineMap,
    ConfigError,
    DimensionError,
    affine_apply,
    affine_grads,
    gaussian_grad,
    gaussian_response,
    sigmoid,
    sigmoid_grad,
    tanh_grad,
)

KINDS = ("lstm", "lstm_trust", "st_lstm", "st_lstm_trust", "fusion")


@dataclass
class CellState:
    h: np.ndarray
    c: Any  # ndarray, or (ndarray, ndarray) for fusion cells


@dataclass
class StepCache:
    kind: str
    x: Any
    h_sp: Any
    c_sp: Any
    h_tm: Any
    c_tm: Any
    i: Any
    f_s: Any
    f_t: Any
    o: Any
    u: Any
    c_new: Any
    p: Any = None
    xp: Any = None
    tau: Any = None


# ---------------------------------------------------------------------------
# parameters


@dataclass
class LstmParams:
    gate_map: AffineMap  # (D + d) -> 4d, blocks (i, f, o, u)

    @property
    def hidden_dim(self) -> int:
        return self.gate_map.out_dim // 4

    @property
    def input_dim(self) -> int:
        return self.gate_map.in_dim - self.hidden_dim

    def param_items(self):
        return [("gate_w", self.gate_map.weight), ("gate_b", self.gate_map.bias)]


@dataclass
class StLstmParams:
    gate_map: AffineMap  # (D + 2d) -> 5d, blocks (i, f_s, f_t, o, u)

    @property
    def hidden_dim(self) -> int:
        return self.gate_map.out_dim // 5

    @property
    def input_dim(self) -> int:
        return self.gate_map.in_dim - 2 * self.hidden_dim

    def param_items(self):
        return [("gate_w", self.gate_map.weight), ("gate_b", self.gate_map.bias)]


@dataclass
class LstmTrustParams:
    base: LstmParams
    predict_map: AffineMap  # d -> d, prediction from temporal context only
    input_map: AffineMap    # D -> d
    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"trust-gate bandwidth must be positive, got {self.lam}")

    @property
    def hidden_dim(self) -> int:
        return self.base.hidden_dim

    @property
    def input_dim(self) -> int:
        return self.base.input_dim

    def param_items(self):
        return self.base.param_items() + [
            ("pred_w", self.predict_map.weight), ("pred_b", self.predict_map.bias),
            ("inp_w", self.input_map.weight), ("inp_b", self.input_map.bias),
        ]


@dataclass
class TrustGateParams:
    base: StLstmParams
    predict_map: AffineMap  # 2d -> d
    input_map: AffineMap    # D -> d
    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"trust-gate bandwidth must be positive, got {self.lam}")

    @property
    def hidden_dim(self) -> int:
        return self.base.hidden_dim

    @property
    def input_dim(self) -> int:
        return self.base.input_dim

    def param_items(self):
        return self.base.param_items() + [
            ("pred_w", self.predict_map.weight), ("pred_b", self.predict_map.bias),
            ("inp_w", self.input_map.weight), ("inp_b", self.input_map.bias),
        ]


@dataclass
class FusionParams:
    """Two-modality fused cell. Hidden states are 2d long, so the per-
    modality gate maps take (D_F + 4d) inputs and the shared output map
    produces 2d."""

    gate_maps: tuple      # (D_F + 4d) -> 4d each, blocks (i, f_s, f_t, u)
    predict_maps: tuple   # 4d -> d each
    input_maps: tuple     # D_F -> d each
    output_map: AffineMap  # (D_1 + D_2 + 4d) -> 2d
    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"trust-gate bandwidth must be positive, got {self.lam}")
        if len(self.gate_maps) != 2 or len(self.predict_maps) != 2 or len(self.input_maps) != 2:
            raise ConfigError("fusion cell needs exactly two modalities")

    @property
    def cell_dim(self) -> int:
        return self.gate_maps[0].out_dim // 4

    @property
    def hidden_dim(self) -> int:
        return 2 * self.cell_dim

    @property
    def input_dims(self) -> tuple:
        d2 = 2 * self.hidden_dim
        return (self.gate_maps[0].in_dim - d2, self.gate_maps[1].in_dim - d2)

    def param_items(self):
        items = []
        for f in (0, 1):
            n = f + 1
            items += [
                (f"gate{n}_w", self.gate_maps[f].weight),
                (f"gate{n}_b", self.gate_maps[f].bias),
                (f"pred{n}_w", self.predict_maps[f].weight),
                (f"pred{n}_b", self.predict_maps[f].bias),
                (f"inp{n}_w", self.input_maps[f].weight),
                (f"inp{n}_b", self.input_maps[f].bias),
            ]
        items += [("out_w", self.output_map.weight), ("out_b", self.output_map.bias)]
        return items


def init_affine(stm: rng.Stream, out_dim: int, in_dim: int,
                scale: float = 1.0) -> AffineMap:
    """Uniform [-scale/sqrt(fan_in), scale/sqrt(fan_in)] weights, zero bias.

    scale=1 keeps gates near 0.5 at the origin but lets deep stacked
    lattices attenuate their inputs to numerically dead levels; desk-scale
    training uses a larger scale so the top-layer signal is alive at init.
    """
    bound = scale / np.sqrt(in_dim)
    w = stm.uniform_range(-bound, bound, out_dim * in_dim).reshape(out_dim, in_dim)
    return AffineMap(w, np.zeros(out_dim))


def init_lstm(stm: rng.Stream, input_dim: int, d: int, scale: float = 1.0) -> LstmParams:
    return LstmParams(init_affine(stm, 4 * d, input_dim + d, scale))


def init_lstm_trust(stm: rng.Stream, input_dim: int, d: int, lam: float,
                    scale: float = 1.0) -> LstmTrustParams:
    return LstmTrustParams(
        base=init_lstm(stm, input_dim, d, scale),
        predict_map=init_affine(stm, d, d, scale),
        input_map=init_affine(stm, d, input_dim, scale),
        lam=lam,
    )


def init_st_lstm(stm: rng.Stream, input_dim: int, d: int, scale: float = 1.0) -> StLstmParams:
    return StLstmParams(init_affine(stm, 5 * d, input_dim + 2 * d, scale))


def init_trust_gate(stm: rng.Stream, input_dim: int, d: int, lam: float,
                    scale: float = 1.0) -> TrustGateParams:
    return TrustGateParams(
        base=init_st_lstm(stm, input_dim, d, scale),
        predict_map=init_affine(stm, d, 2 * d, scale),
        input_map=init_affine(stm, d, input_dim, scale),
        lam=lam,
    )


def init_fusion(stm: rng.Stream, input_dims: tuple, d: int, lam: float,
                scale: float = 1.0) -> FusionParams:
    d1, d2 = input_dims
    ctx = 4 * d  # two context vectors of the 2d-long fused hidden state
    return FusionParams(
        gate_maps=(init_affine(stm, 4 * d, d1 + ctx, scale),
                   init_affine(stm, 4 * d, d2 + ctx, scale)),
        predict_maps=(init_affine(stm, d, ctx, scale), init_affine(stm, d, ctx, scale)),
        input_maps=(init_affine(stm, d, d1, scale), init_affine(stm, d, d2, scale)),
        output_map=init_affine(stm, 2 * d, d1 + d2 + ctx, scale),
        lam=lam,
    )


def zero_state(hidden_dim: int, batch_shape: tuple = (), fusion: bool = False) -> CellState:
    h = np.zeros(batch_shape + (hidden_dim,))
    if fusion:
        half = hidden_dim // 2
        c = (np.zeros(batch_shape + (half,)), np.zeros(batch_shape + (half,)))
    else:
        c = np.zeros(batch_shape + (hidden_dim,))
    return CellState(h, c)


# ---------------------------------------------------------------------------
# forward passes


def _split(stacked: np.ndarray, blocks: int):
    return np.split(stacked, blocks, axis=-1)


def _trust(predict_map, input_map, lam, context, x):
    pre_p = affine_apply(predict_map, context)
    p = np.tanh(pre_p)
    xp = np.tanh(affine_apply(input_map, x))
    tau = gaussian_response(p - xp, lam)
    return p, xp, tau


def lstm_forward(params: LstmParams, x: np.ndarray, prev: CellState):
    z = np.concatenate([x, prev.h], axis=-1)
    gi, gf, go, gu = _split(affine_apply(params.gate_map, z), 4)
    i, f, o = sigmoid(gi), sigmoid(gf), sigmoid(go)
    u = np.tanh(gu)
    c = i * u + f * prev.c
    h = o * np.tanh(c)
    cache = StepCache("lstm", x, None, None, prev.h, prev.c, i, None, f, o, u, c)
    return CellState(h, c), cache


def lstm_trust_forward(params: LstmTrustParams, x: np.ndarray, prev: CellState):
    z = np.concatenate([x, prev.h], axis=-1)
    gi, gf, go, gu = _split(affine_apply(params.base.gate_map, z), 4)
    i, f, o = sigmoid(gi), sigmoid(gf), sigmoid(go)
    u = np.tanh(gu)
    p, xp, tau = _trust(params.predict_map, params.input_map, params.lam, prev.h, x)
    c = tau * i * u + (1.0 - tau) * f * prev.c
    h = o * np.tanh(c)
    cache = StepCache("lstm_trust", x, None, None, prev.h, prev.c,
                      i, None, f, o, u, c, p, xp, tau)
    return CellState(h, c), cache


def st_lstm_forward(params: StLstmParams, x: np.ndarray,
                    spatial_prev: CellState, temporal_prev: CellState):
    z = np.concatenate([x, spatial_prev.h, temporal_prev.h], axis=-1)
    gi, gfs, gft, go, gu = _split(affine_apply(params.gate_map, z), 5)
    i, f_s, f_t, o = sigmoid(gi), sigmoid(gfs), sigmoid(gft), sigmoid(go)
    u = np.tanh(gu)
    c = i * u + f_s * spatial_prev.c + f_t * temporal_prev.c
    h = o * np.tanh(c)
    cache = StepCache("st_lstm", x, spatial_prev.h, spatial_prev.c,
                      temporal_prev.h, temporal_prev.c, i, f_s, f_t, o, u, c)
    return CellState(h, c), cache


def trust_gate_forward(params: TrustGateParams, x: np.ndarray,
                       spatial_prev: CellState, temporal_prev: CellState):
    z = np.concatenate([x, spatial_prev.h, temporal_prev.h], axis=-1)
    gi, gfs, gft, go, gu = _split(affine_apply(params.base.gate_map, z), 5)
    i, f_s, f_t, o = sigmoid(gi), sigmoid(gfs), sigmoid(gft), sigmoid(go)
    u = np.tanh(gu)
    context = np.concatenate([spatial_prev.h, temporal_prev.h], axis=-1)
    p, xp, tau = _trust(params.predict_map, params.input_map, params.lam, context, x)
    c = tau * i * u + (1.0 - tau) * (f_s * spatial_prev.c + f_t * temporal_prev.c)
    h = o * np.tanh(c)
    cache = StepCache("st_lstm_trust", x, spatial_prev.h, spatial_prev.c,
                      temporal_prev.h, temporal_prev.c, i, f_s, f_t, o, u, c, p, xp, tau)
    return CellState(h, c), cache


def fusion_forward(params: FusionParams, x1: np.ndarray, x2: np.ndarray,
                   spatial_prev: CellState, temporal_prev: CellState):
    if x1 is None or x2 is None:
        raise DimensionError("fusion cell needs both modality inputs")
    context = np.concatenate([spatial_prev.h, temporal_prev.h], axis=-1)
    xs = (x1, x2)
    i = [None, None]
    f_s = [None, None]
    f_t = [None, None]
    u = [None, None]
    p = [None, None]
    xp = [None, None]
    tau = [None, None]
    c = [None, None]
    for f in (0, 1):
        z = np.concatenate([xs[f], context], axis=-1)
        gi, gfs, gft, gu = _split(affine_apply(params.gate_maps[f], z), 4)
        i[f], f_s[f], f_t[f] = sigmoid(gi), sigmoid(gfs), sigmoid(gft)
        u[f] = np.tanh(gu)
        p[f], xp[f], tau[f] = _trust(
            params.predict_maps[f], params.input_maps[f], params.lam, context, xs[f]
        )
        c[f] = (tau[f] * i[f] * u[f]
                + (1.0 - tau[f]) * (f_s[f] * spatial_prev.c[f]
                                    + f_t[f] * temporal_prev.c[f]))
    zo = np.concatenate([x1, x2, context], axis=-1)
    o = sigmoid(affine_apply(params.output_map, zo))
    c_pair = (c[0], c[1])
    h = o * np.tanh(np.concatenate(c_pair, axis=-1))
    cache = StepCache("fusion", xs, spatial_prev.h, spatial_prev.c,
                      temporal_prev.h, temporal_prev.c,
                      tuple(i), tuple(f_s), tuple(f_t), o, tuple(u), c_pair,
                      tuple(p), tuple(xp), tuple(tau))
    return CellState(h, c_pair), cache


# ---------------------------------------------------------------------------
# backward passes


def _zeros_like_c(c):
    if isinstance(c, tuple):
        return (np.zeros_like(c[0]), np.zeros_like(c[1]))
    return np.zeros_like(c)


def _lstm_backward(params, cache: StepCache, grad_h, grad_c, trust: bool):
    d = cache.i.shape[-1]
    tc = np.tanh(cache.c_new)
    do = grad_h * tc
    dc = grad_c + grad_h * cache.o * tanh_grad(tc)

    grads = {}
    if trust:
        dtau = dc * (cache.i * cache.u - cache.f_t * cache.c_tm)
        di = dc * cache.tau * cache.u
        du = dc * cache.tau * cache.i
        df = dc * (1.0 - cache.tau) * cache.c_tm
        dc_prev = dc * (1.0 - cache.tau) * cache.f_t
        ddelta = gaussian_grad(cache.p - cache.xp, params.lam, cache.tau) * dtau
        dpre_p = ddelta * tanh_grad(cache.p)
        dpre_x = -ddelta * tanh_grad(cache.xp)
        grads["pred_w"], grads["pred_b"], dh_prev_p = affine_grads(
            params.predict_map, cache.h_tm, dpre_p)
        grads["inp_w"], grads["inp_b"], dx_trust = affine_grads(
            params.input_map, cache.x, dpre_x)
        gate_map = params.base.gate_map
    else:
        di = dc * cache.u
        du = dc * cache.i
        df = dc * cache.c_tm
        dc_prev = dc * cache.f_t
        dh_prev_p = 0.0
        dx_trust = 0.0
        gate_map = params.gate_map

    dg = np.concatenate([
        di * sigmoid_grad(cache.i),
        df * sigmoid_grad(cache.f_t),
        do * sigmoid_grad(cache.o),
        du * tanh_grad(cache.u),
    ], axis=-1)
    z = np.concatenate([cache.x, cache.h_tm], axis=-1)
    grads["gate_w"], grads["gate_b"], dz = affine_grads(gate_map, z, dg)
    dx = dz[..., :-d] + dx_trust
    dh_prev = dz[..., -d:] + dh_prev_p
    return grads, dx, None, (dh_prev, dc_prev)


def _st_lstm_backward(params, cache: StepCache, grad_h, grad_c, trust: bool):
    d = cache.i.shape[-1]
    tc = np.tanh(cache.c_new)
    do = grad_h * tc
    dc = grad_c + grad_h * cache.o * tanh_grad(tc)

    grads = {}
    if trust:
        history = cache.f_s * cache.c_sp + cache.f_t * cache.c_tm
        dtau = dc * (cache.i * cache.u - history)
        keep = dc * (1.0 - cache.tau)
        di = dc * cache.tau * cache.u
        du = dc * cache.tau * cache.i
        df_s = keep * cache.c_sp
        df_t = keep * cache.c_tm
        dc_sp = keep * cache.f_s
        dc_tm = keep * cache.f_t
        ddelta = gaussian_grad(cache.p - cache.xp, params.lam, cache.tau) * dtau
        dpre_p = ddelta * tanh_grad(cache.p)
        dpre_x = -ddelta * tanh_grad(cache.xp)
        context = np.concatenate([cache.h_sp, cache.h_tm], axis=-1)
        grads["pred_w"], grads["pred_b"], dctx = affine_grads(
            params.predict_map, context, dpre_p)
        grads["inp_w"], grads["inp_b"], dx_trust = affine_grads(
            params.input_map, cache.x, dpre_x)
        dh_sp_extra = dctx[..., :d]
        dh_tm_extra = dctx[..., d:]
        gate_map = params.base.gate_map
    else:
        di = dc * cache.u
        du = dc * cache.i
        df_s = dc * cache.c_sp
        df_t = dc * cache.c_tm
        dc_sp = dc * cache.f_s
        dc_tm = dc * cache.f_t
        dh_sp_extra = 0.0
        dh_tm_extra = 0.0
        dx_trust = 0.0
        gate_map = params.gate_map

    dg = np.concatenate([
        di * sigmoid_grad(cache.i),
        df_s * sigmoid_grad(cache.f_s),
        df_t * sigmoid_grad(cache.f_t),
        do * sigmoid_grad(cache.o),
        du * tanh_grad(cache.u),
    ], axis=-1)
    z = np.concatenate([cache.x, cache.h_sp, cache.h_tm], axis=-1)
    grads["gate_w"], grads["gate_b"], dz = affine_grads(gate_map, z, dg)
    dx = dz[..., :-2 * d] + dx_trust
    dh_sp = dz[..., -2 * d:-d] + dh_sp_extra
    dh_tm = dz[..., -d:] + dh_tm_extra
    return grads, dx, (dh_sp, dc_sp), (dh_tm, dc_tm)


def _fusion_backward(params: FusionParams, cache: StepCache, grad_h, grad_c):
    d = params.cell_dim
    hdim = 2 * d
    tc = np.tanh(np.concatenate(cache.c_new, axis=-1))
    do = grad_h * tc
    dcat = grad_h * cache.o * tanh_grad(tc)
    dc = [grad_c[0] + dcat[..., :d], grad_c[1] + dcat[..., d:]]

    grads = {}
    context = np.concatenate([cache.h_sp, cache.h_tm], axis=-1)
    dctx = np.zeros_like(context)
    dxs = [None, None]
    dc_sp = [None, None]
    dc_tm = [None, None]
    for f in (0, 1):
        n = f + 1
        history = cache.f_s[f] * cache.c_sp[f] + cache.f_t[f] * cache.c_tm[f]
        dtau = dc[f] * (cache.i[f] * cache.u[f] - history)
        keep = dc[f] * (1.0 - cache.tau[f])
        di = dc[f] * cache.tau[f] * cache.u[f]
        du = dc[f] * cache.tau[f] * cache.i[f]
        df_s = keep * cache.c_sp[f]
        df_t = keep * cache.c_tm[f]
        dc_sp[f] = keep * cache.f_s[f]
        dc_tm[f] = keep * cache.f_t[f]
        ddelta = gaussian_grad(cache.p[f] - cache.xp[f], params.lam, cache.tau[f]) * dtau
        dpre_p = ddelta * tanh_grad(cache.p[f])
        dpre_x = -ddelta * tanh_grad(cache.xp[f])
        grads[f"pred{n}_w"], grads[f"pred{n}_b"], dctx_p = affine_grads(
            params.predict_maps[f], context, dpre_p)
        grads[f"inp{n}_w"], grads[f"inp{n}_b"], dx_trust = affine_grads(
            params.input_maps[f], cache.x[f], dpre_x)
        dg = np.concatenate([
            di * sigmoid_grad(cache.i[f]),
            df_s * sigmoid_grad(cache.f_s[f]),
            df_t * sigmoid_grad(cache.f_t[f]),
            du * tanh_grad(cache.u[f]),
        ], axis=-1)
        z = np.concatenate([cache.x[f], context], axis=-1)
        grads[f"gate{n}_w"], grads[f"gate{n}_b"], dz = affine_grads(
            params.gate_maps[f], z, dg)
        dim_f = cache.x[f].shape[-1]
        dxs[f] = dz[..., :dim_f] + dx_trust
        dctx += dz[..., dim_f:] + dctx_p

    dq_o = do * sigmoid_grad(cache.o)
    zo = np.concatenate([cache.x[0], cache.x[1], context], axis=-1)
    grads["out_w"], grads["out_b"], dzo = affine_grads(params.output_map, zo, dq_o)
    d1 = cache.x[0].shape[-1]
    d2 = cache.x[1].shape[-1]
    dxs[0] = dxs[0] + dzo[..., :d1]
    dxs[1] = dxs[1] + dzo[..., d1:d1 + d2]
    dctx += dzo[..., d1 + d2:]

    dh_sp = dctx[..., :hdim]
    dh_tm = dctx[..., hdim:]
    return (grads, (dxs[0], dxs[1]),
            (dh_sp, (dc_sp[0], dc_sp[1])), (dh_tm, (dc_tm[0], dc_tm[1])))


def cell_backward(kind: str, params, cache: StepCache, grad_h, grad_c=None):
    """Gradients of one cell step.

    Returns (param_grads, grad_x, grad_spatial_state, grad_temporal_state);
    state gradients are (dh, dc) pairs, None where the cell has no such
    context. `grad_c` defaults to zero (no incoming cell-state gradient).
    """
    if cache.kind != kind:
        raise ConfigError(f"cache was produced by {cache.kind!r}, not {kind!r}")
    if grad_c is None:
        grad_c = _zeros_like_c(cache.c_new)
    if kind == "lstm":
        return _lstm_backward(params, cache, grad_h, grad_c, trust=False)
    if kind == "lstm_trust":
        return _lstm_backward(params, cache, grad_h, grad_c, trust=True)
    if kind == "st_lstm":
        return _st_lstm_backward(params, cache, grad_h, grad_c, trust=False)
    if kind == "st_lstm_trust":
        return _st_lstm_backward(params, cache, grad_h, grad_c, trust=True)
    if kind == "fusion":
        return _fusion_backward(params, cache, grad_h, grad_c)
    raise ConfigError(f"unknown cell kind {kind!r}")


def cell_forward(kind: str, params, x, spatial_prev, temporal_prev):
    """Uniform dispatch used by the lattice; x is a pair for fusion cells."""
    if kind == "lstm":
        return lstm_forward(params, x, temporal_prev)
    if kind == "lstm_trust":
        return lstm_trust_forward(params, x, temporal_prev)
    if kind == "st_lstm":
        return st_lstm_forward(params, x, spatial_prev, temporal_prev)
    if kind == "st_lstm_trust":
        return trust_gate_forward(params, x, spatial_prev, temporal_prev)
    if kind == "fusion":
        return fusion_forward(params, x[0], x[1], spatial_prev, temporal_prev)
    raise ConfigError(f"unknown cell kind {kind!r}")
