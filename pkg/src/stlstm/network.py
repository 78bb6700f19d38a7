"""Stacked spatio-temporal lattice: full-sequence forward, loss, baselines.

A model is a stack of recurrent layers over a (spatial step, frame) grid.
Layer 1 consumes per-joint features in traversal order; each higher layer
consumes the hidden state of the layer below at the same grid position.
One shared softmax map classifies the top hidden state at every step, and
the sequence prediction averages the per-step distributions.

Spatial context flows from the previous spatial step within a frame;
with `last_to_first` enabled, the final spatial step of frame t-1 feeds
the first spatial step of frame t (both h and c), replacing the zero
boundary state. Temporal context at the first frame is zero.

For `architecture="lstm"` the grid degenerates to one spatial step per
frame whose input is the concatenation of all joints' features.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import cells, rng
from .cells import CellState
from .linalg import AffineMap, ConfigError, DimensionError, affine_apply, affine_grads

ARCHITECTURES = ("lstm", "st_lstm")
TRAVERSALS = ("chain", "double_chain", "tree")

MAGIC = b"STL1"
FORMAT_VERSION = 1


class SerializationError(ValueError):
    """Bad magic, version, checksum, or truncated model stream."""


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "st_lstm"
    traversal: str = "tree"
    trust_gate: bool = False
    fusion: bool = False
    layers: int = 2
    d: int = 128
    lam: float = 0.5
    frames: int = 20            # T, frames sampled per sequence
    class_count: int = 2
    last_to_first: bool = True
    input_dims: tuple = (3,)    # per-modality feature dims consumed by layer 1
    init_scale: float = 1.0     # multiplier on the 1/sqrt(fan_in) weight bound

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.traversal not in TRAVERSALS:
            raise ConfigError(f"unknown traversal {self.traversal!r}")
        if self.fusion and self.architecture != "st_lstm":
            raise ConfigError("fusion requires architecture=st_lstm")
        if self.class_count < 2:
            raise ConfigError(f"class_count must be >= 2, got {self.class_count}")
        if self.layers < 1 or self.d < 1 or self.frames < 1:
            raise ConfigError("layers, d and frames must be positive")
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.init_scale <= 0:
            raise ConfigError(f"init_scale must be positive, got {self.init_scale}")
        dims = tuple(int(v) for v in self.input_dims)
        object.__setattr__(self, "input_dims", dims)
        if self.fusion and len(dims) != 2:
            raise ConfigError("fusion models need exactly two input dims")
        if not self.fusion and len(dims) != 1:
            raise ConfigError("non-fusion models take exactly one input dim")


def layer_kind(config: ModelConfig, layer: int) -> str:
    if config.architecture == "lstm":
        return "lstm_trust" if config.trust_gate else "lstm"
    if config.fusion and layer == 0:
        return "fusion"
    return "st_lstm_trust" if config.trust_gate else "st_lstm"


def layer_hidden_dim(config: ModelConfig, layer: int) -> int:
    return 2 * config.d if layer_kind(config, layer) == "fusion" else config.d


def layer_input_dims(config: ModelConfig, layer: int) -> tuple:
    if layer == 0:
        return config.input_dims
    return (layer_hidden_dim(config, layer - 1),)


@dataclass
class Model:
    config: ModelConfig
    layer_params: list
    classifier: AffineMap

    def param_items(self):
        items = []
        for k, params in enumerate(self.layer_params):
            items += [(f"layer{k}.{name}", arr) for name, arr in params.param_items()]
        items += [("classifier.w", self.classifier.weight),
                  ("classifier.b", self.classifier.bias)]
        return items


def build_model(config: ModelConfig, seed: int) -> Model:
    layer_params = []
    scale = config.init_scale
    for k in range(config.layers):
        stm = rng.stream(seed, "init_layer", k)
        kind = layer_kind(config, k)
        dims = layer_input_dims(config, k)
        if kind == "fusion":
            params = cells.init_fusion(stm, dims, config.d, config.lam, scale)
        elif kind == "st_lstm_trust":
            params = cells.init_trust_gate(stm, dims[0], config.d, config.lam, scale)
        elif kind == "st_lstm":
            params = cells.init_st_lstm(stm, dims[0], config.d, scale)
        elif kind == "lstm_trust":
            params = cells.init_lstm_trust(stm, dims[0], config.d, config.lam, scale)
        else:
            params = cells.init_lstm(stm, dims[0], config.d, scale)
        layer_params.append(params)
    top = layer_hidden_dim(config, config.layers - 1)
    classifier = cells.init_affine(rng.stream(seed, "init_classifier"),
                                   config.class_count, top, scale)
    return Model(config, layer_params, classifier)


# ---------------------------------------------------------------------------
# sample preparation


@dataclass
class PreparedSample:
    """Per-step features, already in traversal order.

    `features` is (S, T, D) for one sample or (B, S, T, D) for a batch;
    `aux` matches when a second modality is present.
    """

    features: np.ndarray
    aux: np.ndarray | None = None
    labels: np.ndarray | None = None  # (B,) 1-based, or scalar for one sample

    @property
    def batched(self) -> bool:
        return self.features.ndim == 4


def prepare_sample(sequence, order_steps, frame_indices, config: ModelConfig) -> PreparedSample:
    """Gather a sequence's frames and joints into the lattice layout."""
    frames = np.asarray(frame_indices, dtype=np.int64)
    coords = sequence.coords[frames]  # (T, J, 3)
    if config.architecture == "lstm":
        feats = coords.reshape(len(frames), -1)[None, :, :]  # (1, T, J*3)
    else:
        joints = np.asarray(order_steps, dtype=np.int64) - 1
        feats = coords[:, joints, :].transpose(1, 0, 2)  # (S, T, 3)
    aux = None
    if config.fusion:
        if sequence.aux is None:
            raise DimensionError("fusion model needs sequences with aux features")
        joints = np.asarray(order_steps, dtype=np.int64) - 1
        aux = sequence.aux[frames][:, joints, :].transpose(1, 0, 2)
    label = None if sequence.label is None else np.int64(sequence.label)
    return PreparedSample(np.ascontiguousarray(feats),
                          None if aux is None else np.ascontiguousarray(aux),
                          label)


def stack_prepared(samples: list) -> PreparedSample:
    feats = np.stack([s.features for s in samples])
    aux = None
    if samples[0].aux is not None:
        aux = np.stack([s.aux for s in samples])
    labels = None
    if samples[0].labels is not None:
        labels = np.asarray([int(s.labels) for s in samples], dtype=np.int64)
    return PreparedSample(feats, aux, labels)


# ---------------------------------------------------------------------------
# lattice forward


@dataclass
class Lattice:
    """Cached states and per-step activation caches for one forward pass."""

    h: list                       # per layer: (B, S, T, hidden)
    c: list                       # per layer: (B, S, T, d) or pair for fusion
    caches: list                  # [layer][s][t] -> StepCache
    kinds: list = field(default_factory=list)

    @property
    def spatial_steps(self) -> int:
        return self.h[0].shape[1]

    @property
    def frames(self) -> int:
        return self.h[0].shape[2]

    def state(self, layer: int, s: int, t: int) -> CellState:
        c = self.c[layer]
        if isinstance(c, tuple):
            return CellState(self.h[layer][:, s, t], (c[0][:, s, t], c[1][:, s, t]))
        return CellState(self.h[layer][:, s, t], c[:, s, t])

    def cache(self, layer: int, s: int, t: int):
        return self.caches[layer][s][t]


def _spatial_source(s: int, t: int, spatial_steps: int, link: bool):
    """Where the spatial context of step (s, t) comes from, or None for zeros."""
    if s > 0:
        return (s - 1, t)
    if link and t > 0:
        return (spatial_steps - 1, t - 1)
    return None


def forward_pass(model: Model, sample: PreparedSample):
    """Run the full lattice; returns (per-step scores, Lattice).

    Scores are (S, T, class_count) for a single sample, (B, S, T, C) for a
    batch. The lattice always carries a batch axis internally.
    """
    cfg = model.config
    batched = sample.batched
    feats = sample.features if batched else sample.features[None]
    aux = None
    if cfg.fusion:
        aux = sample.aux if batched else sample.aux[None]
        if aux is None:
            raise DimensionError("fusion model needs aux features")
    B, S, T = feats.shape[0], feats.shape[1], feats.shape[2]
    if T != cfg.frames:
        raise DimensionError(f"sample has {T} frames, model expects {cfg.frames}")
    if feats.shape[3] != cfg.input_dims[0]:
        raise DimensionError(
            f"sample feature dim {feats.shape[3]}, model expects {cfg.input_dims[0]}"
        )

    link = cfg.last_to_first and cfg.architecture == "st_lstm"
    lattice = Lattice(h=[], c=[], caches=[], kinds=[])
    below_h = None
    for layer in range(cfg.layers):
        kind = layer_kind(cfg, layer)
        params = model.layer_params[layer]
        hdim = layer_hidden_dim(cfg, layer)
        fusion = kind == "fusion"
        H = np.empty((B, S, T, hdim))
        if fusion:
            C = (np.empty((B, S, T, cfg.d)), np.empty((B, S, T, cfg.d)))
        else:
            C = np.empty((B, S, T, cfg.d))
        caches = [[None] * T for _ in range(S)]
        zero = cells.zero_state(hdim, (B,), fusion=fusion)

        for t in range(T):
            for s in range(S):
                src = _spatial_source(s, t, S, link)
                if src is None:
                    sp = zero
                else:
                    ss, st = src
                    if fusion:
                        sp = CellState(H[:, ss, st], (C[0][:, ss, st], C[1][:, ss, st]))
                    else:
                        sp = CellState(H[:, ss, st], C[:, ss, st])
                if t > 0:
                    if fusion:
                        tm = CellState(H[:, s, t - 1], (C[0][:, s, t - 1], C[1][:, s, t - 1]))
                    else:
                        tm = CellState(H[:, s, t - 1], C[:, s, t - 1])
                else:
                    tm = zero
                if layer == 0:
                    x = (feats[:, s, t], aux[:, s, t]) if fusion else feats[:, s, t]
                else:
                    x = below_h[:, s, t]
                state, cache = cells.cell_forward(kind, params, x, sp, tm)
                H[:, s, t] = state.h
                if fusion:
                    C[0][:, s, t] = state.c[0]
                    C[1][:, s, t] = state.c[1]
                else:
                    C[:, s, t] = state.c
                caches[s][t] = cache

        lattice.h.append(H)
        lattice.c.append(C)
        lattice.caches.append(caches)
        lattice.kinds.append(kind)
        below_h = H

    top = lattice.h[-1]
    flat = top.reshape(-1, top.shape[-1])
    scores = affine_apply(model.classifier, flat).reshape(B, S, T, cfg.class_count)
    return (scores if batched else scores[0]), lattice


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def loss(per_step_scores: np.ndarray, label: int) -> float:
    """Summed negative log-likelihood of `label` over all lattice steps."""
    class_count = per_step_scores.shape[-1]
    if not 1 <= label <= class_count:
        raise ConfigError(f"label {label} outside [1, {class_count}]")
    logp = log_softmax(per_step_scores)
    return float(-logp[..., label - 1].sum())


def average_probabilities(per_step_scores: np.ndarray) -> np.ndarray:
    """Mean of the per-step softmax distributions over all (s, t) steps."""
    probs = softmax(per_step_scores)
    return probs.mean(axis=(-3, -2))


def predict(model: Model, sample: PreparedSample):
    """(label, class_probabilities); ties break to the lowest class index."""
    scores, _ = forward_pass(model, sample)
    probs = average_probabilities(scores)
    labels = np.argmax(probs, axis=-1) + 1
    if sample.batched:
        return labels, probs
    return int(labels), probs


# ---------------------------------------------------------------------------
# temporal-average baseline


@dataclass
class TemporalAverageModel:
    """Frame-order-blind baseline: logits = W2 tanh(W1 mean_t(features))."""

    hidden_map: AffineMap
    output_map: AffineMap

    @property
    def class_count(self) -> int:
        return self.output_map.out_dim

    def param_items(self):
        return [("hidden.w", self.hidden_map.weight), ("hidden.b", self.hidden_map.bias),
                ("output.w", self.output_map.weight), ("output.b", self.output_map.bias)]


def build_temporal_average(feature_dim: int, width: int, class_count: int,
                           seed: int) -> TemporalAverageModel:
    stm = rng.stream(seed, "init_temporal_average")
    return TemporalAverageModel(
        hidden_map=cells.init_affine(stm, width, feature_dim),
        output_map=cells.init_affine(stm, class_count, width),
    )


def mean_frame_feature(sequence) -> np.ndarray:
    if sequence.frame_count == 0:
        raise DimensionError("sequence has no frames")
    return sequence.coords.reshape(sequence.frame_count, -1).mean(axis=0)


def temporal_average_forward(model: TemporalAverageModel, sample) -> np.ndarray:
    """Class scores for one sequence (or a (B, F) feature matrix)."""
    feats = sample if isinstance(sample, np.ndarray) else mean_frame_feature(sample)
    hidden = np.tanh(affine_apply(model.hidden_map, feats))
    return affine_apply(model.output_map, hidden)


def temporal_average_backward(model: TemporalAverageModel, feats: np.ndarray,
                              dscores: np.ndarray) -> dict:
    hidden = np.tanh(affine_apply(model.hidden_map, feats))
    dw2, db2, dhid = affine_grads(model.output_map, hidden, dscores)
    dpre = dhid * (1.0 - hidden * hidden)
    dw1, db1, _ = affine_grads(model.hidden_map, feats, dpre)
    return {"hidden.w": dw1, "hidden.b": db1, "output.w": dw2, "output.b": db2}


# ---------------------------------------------------------------------------
# serialization

_ARCH_CODES = {name: i for i, name in enumerate(ARCHITECTURES)}
_TRAV_CODES = {name: i for i, name in enumerate(TRAVERSALS)}


def _encode_config(config: ModelConfig) -> bytes:
    head = struct.pack(
        "<BBBBB", _ARCH_CODES[config.architecture], _TRAV_CODES[config.traversal],
        int(config.trust_gate), int(config.fusion), int(config.last_to_first))
    head += struct.pack("<IIII", config.layers, config.d, config.frames, config.class_count)
    head += struct.pack("<I", len(config.input_dims))
    head += struct.pack(f"<{len(config.input_dims)}I", *config.input_dims)
    head += struct.pack("<dd", config.lam, config.init_scale)
    return head


def _decode_config(buf: bytes, offset: int):
    arch, trav, trust, fusion, link = struct.unpack_from("<BBBBB", buf, offset)
    offset += 5
    layers, d, frames, class_count = struct.unpack_from("<IIII", buf, offset)
    offset += 16
    (n_mod,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    dims = struct.unpack_from(f"<{n_mod}I", buf, offset)
    offset += 4 * n_mod
    lam, init_scale = struct.unpack_from("<dd", buf, offset)
    offset += 16
    config = ModelConfig(
        architecture=ARCHITECTURES[arch], traversal=TRAVERSALS[trav],
        trust_gate=bool(trust), fusion=bool(fusion), layers=layers, d=d,
        lam=lam, frames=frames, class_count=class_count,
        last_to_first=bool(link), input_dims=dims, init_scale=init_scale)
    return config, offset


def serialize_model(model: Model) -> bytes:
    body = MAGIC + struct.pack("<I", FORMAT_VERSION) + _encode_config(model.config)
    for _, arr in model.param_items():
        body += arr.astype("<f8").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def deserialize_model(data: bytes) -> Model:
    if len(data) < len(MAGIC) + 8:
        raise SerializationError("model stream truncated before header")
    if data[:4] != MAGIC:
        raise SerializationError(f"bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise SerializationError(f"unsupported format version {version}")
    body, trailer = data[:-4], data[-4:]
    (stored_crc,) = struct.unpack("<I", trailer)
    if zlib.crc32(body) != stored_crc:
        raise SerializationError("checksum mismatch (corrupt or truncated stream)")
    try:
        config, offset = _decode_config(data, 8)
    except struct.error as exc:
        raise SerializationError(f"model stream truncated in config block ({exc})") from exc
    model = build_model(config, seed=0)
    expected = sum(arr.size for _, arr in model.param_items()) * 8
    actual = len(body) - offset
    if actual != expected:
        raise DimensionError(
            f"tensor payload is {actual} bytes, config implies {expected}"
        )
    for _, arr in model.param_items():
        n = arr.size * 8
        arr[...] = np.frombuffer(data, dtype="<f8", count=arr.size, offset=offset).reshape(arr.shape)
        offset += n
    return model


def save_model(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())
