"""Training: lattice BPTT, SGD with momentum and decay, frame sampling.

The backward pass visits lattice steps in reverse raster order (frames
outer, spatial steps inner), which guarantees each step is processed only
after both its temporal successor (s, t+1) and spatial successor (s+1, t)
have contributed their state gradients; the last-to-first link routes the
first spatial step's context gradient back to the final step of the
previous frame. Per-step classification gradients are injected at every
step of the top layer, and each layer hands the gradient with respect to
its inputs down to the layer below.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .cells import cell_backward
from .linalg import ConfigError
from .network import (
    Lattice,
    Model,
    ModelConfig,
    PreparedSample,
    TemporalAverageModel,
    _spatial_source,
    average_probabilities,
    forward_pass,
    layer_kind,
    log_softmax,
    mean_frame_feature,
    prepare_sample,
    softmax,
    stack_prepared,
    temporal_average_backward,
    temporal_average_forward,
)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 50
    seed: int = 0
    reproducible: bool = True
    early_stop_fraction: float = 1.0   # evaluation-time truncation p
    clip_gradients: bool = False       # elementwise clip to [-5, 5] when set
    threads: int = 1
    stop_train_accuracy: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.early_stop_fraction <= 1.0:
            raise ConfigError(
                f"early_stop_fraction must be in (0, 1], got {self.early_stop_fraction}"
            )


CLIP_LIMIT = 5.0


@dataclass
class OptimizerState:
    buffers: dict
    learning_rate: float = 2e-3
    momentum: float = 0.9
    decay: float = 0.95
    epoch: int = 0

    @property
    def effective_lr(self) -> float:
        return self.learning_rate * self.decay**self.epoch


def init_optimizer(model, learning_rate: float = 2e-3, momentum: float = 0.9,
                   decay: float = 0.95) -> OptimizerState:
    # learning_rate = 0 is allowed: a documented no-op optimizer
    if learning_rate < 0:
        raise ConfigError(f"learning_rate must be >= 0, got {learning_rate}")
    buffers = {name: np.zeros_like(arr) for name, arr in model.param_items()}
    return OptimizerState(buffers, learning_rate, momentum, decay)


def sgd_update(model, gradients: dict, state: OptimizerState):
    """v <- momentum * v - lr_epoch * g;  theta <- theta + v (in place)."""
    lr = state.effective_lr
    for name, arr in model.param_items():
        g = gradients[name]
        if g.shape != arr.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter {arr.shape} ({name})")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in block {name}")
        v = state.buffers[name]
        v *= state.momentum
        v -= lr * g
        arr += v
    return model, state


def clip_gradients(gradients: dict, limit: float = CLIP_LIMIT) -> dict:
    return {k: np.clip(g, -limit, limit) for k, g in gradients.items()}


# ---------------------------------------------------------------------------
# frame sampling


def _slot_bounds(raw_length: int, frames: int, slot: int):
    lo = -((-slot * raw_length) // frames)          # ceil(slot * n / T)
    hi = -((-(slot + 1) * raw_length) // frames)    # ceil((slot+1) * n / T)
    return lo, hi


def sample_frames(raw_length: int, frames: int, stm: rng.Stream) -> list:
    """One random frame index from each of `frames` near-equal sub-sequences.

    Empty slots (raw_length < frames) repeat the nearest preceding pick, so
    the result always has exactly `frames` entries.
    """
    if raw_length < 1 or frames < 1:
        raise ConfigError("raw_length and frames must be >= 1")
    draws = stm.uniform(frames)
    out = []
    for slot in range(frames):
        lo, hi = _slot_bounds(raw_length, frames, slot)
        if hi > lo:
            out.append(lo + int(draws[slot] * (hi - lo)))
        else:
            out.append(out[-1])
    return out


def eval_frame_indices(raw_length: int, frames: int) -> list:
    """Deterministic evaluation sampling: the midpoint of each sub-sequence."""
    if raw_length < 1 or frames < 1:
        raise ConfigError("raw_length and frames must be >= 1")
    out = []
    for slot in range(frames):
        lo, hi = _slot_bounds(raw_length, frames, slot)
        out.append((lo + hi - 1) // 2 if hi > lo else out[-1])
    return out


def truncated_length(raw_length: int, p: float) -> int:
    return max(1, math.ceil(p * raw_length))


# ---------------------------------------------------------------------------
# backward over the lattice


def _add_state_grad(pending_dh, pending_dc, s: int, t: int, dh, dc):
    pending_dh[:, s, t] += dh
    if isinstance(pending_dc, tuple):
        pending_dc[0][:, s, t] += dc[0]
        pending_dc[1][:, s, t] += dc[1]
    else:
        pending_dc[:, s, t] += dc


def _slice_dc(pending_dc, s: int, t: int):
    if isinstance(pending_dc, tuple):
        return (pending_dc[0][:, s, t], pending_dc[1][:, s, t])
    return pending_dc[:, s, t]


def bptt_backward(model: Model, lattice: Lattice, per_step_scores: np.ndarray,
                  labels, check_schedule: bool = False) -> dict:
    """Gradients of the summed per-step NLL, over all parameters.

    For a batch, gradients are summed over the batch axis (callers divide
    by the batch size for the mean). `check_schedule` turns on counters
    asserting every step is consumed only after both successors.
    """
    cfg = model.config
    scores = per_step_scores if per_step_scores.ndim == 4 else per_step_scores[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    B, S, T, C = scores.shape
    if np.any(labels < 1) or np.any(labels > C):
        raise ConfigError(f"labels outside [1, {C}]")

    dscores = softmax(scores)
    onehot = np.zeros((B, C))
    onehot[np.arange(B), labels - 1] = 1.0
    dscores -= onehot[:, None, None, :]

    grads = {}
    top = lattice.h[-1]
    flat_top = top.reshape(-1, top.shape[-1])
    flat_ds = dscores.reshape(-1, C)
    grads["classifier.w"] = flat_ds.T @ flat_top
    grads["classifier.b"] = flat_ds.sum(axis=0)
    dh_grid = (flat_ds @ model.classifier.weight).reshape(B, S, T, top.shape[-1])

    link = cfg.last_to_first and cfg.architecture == "st_lstm"
    for layer in reversed(range(cfg.layers)):
        kind = layer_kind(cfg, layer)
        params = model.layer_params[layer]
        fusion = kind == "fusion"
        pending_dh = dh_grid
        if fusion:
            pending_dc = (np.zeros((B, S, T, cfg.d)), np.zeros((B, S, T, cfg.d)))
        else:
            pending_dc = np.zeros((B, S, T, cfg.d))
        below = None
        if layer > 0:
            below = np.empty_like(lattice.h[layer - 1])
        acc = None
        processed = np.zeros((S, T), dtype=bool) if check_schedule else None

        for t in reversed(range(T)):
            for s in reversed(range(S)):
                if check_schedule:
                    if t + 1 < T:
                        assert processed[s, t + 1], "temporal successor not yet processed"
                    if s + 1 < S:
                        assert processed[s + 1, t], "spatial successor not yet processed"
                    if link and s == S - 1 and t + 1 < T:
                        assert processed[0, t + 1], "link successor not yet processed"
                    processed[s, t] = True
                step_grads, dx, dsp, dtm = cell_backward(
                    kind, params, lattice.caches[layer][s][t],
                    pending_dh[:, s, t], _slice_dc(pending_dc, s, t))
                if acc is None:
                    acc = step_grads
                else:
                    for key, g in step_grads.items():
                        acc[key] += g
                if below is not None:
                    below[:, s, t] = dx
                if dsp is not None:
                    src = _spatial_source(s, t, S, link)
                    if src is not None:
                        _add_state_grad(pending_dh, pending_dc, src[0], src[1], *dsp)
                if t > 0:
                    _add_state_grad(pending_dh, pending_dc, s, t - 1, *dtm)

        for key, g in acc.items():
            grads[f"layer{layer}.{key}"] = g
        dh_grid = below
    return grads


def batch_loss_and_grads(model: Model, prepared: PreparedSample):
    """(summed loss, correct count, summed gradients) for one batch."""
    scores, lattice = forward_pass(model, prepared)
    labels = prepared.labels
    B = scores.shape[0]
    logp = log_softmax(scores)
    loss_sum = float(-logp[np.arange(B), :, :, labels - 1].sum())
    probs = average_probabilities(scores)
    correct = int(np.sum(np.argmax(probs, axis=-1) + 1 == labels))
    grads = bptt_backward(model, lattice, scores, labels)
    return loss_sum, correct, grads


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_block: dict
    worst_param: str

    def __str__(self):
        lines = [f"max relative error {self.max_rel_error:.3e} (worst: {self.worst_param})"]
        for name, err in sorted(self.per_block.items()):
            lines.append(f"  {name:24s} {err:.3e}")
        return "\n".join(lines)


def _sample_loss(model: Model, prepared: PreparedSample) -> float:
    scores, _ = forward_pass(model, prepared)
    scores = scores if scores.ndim == 4 else scores[None]
    labels = np.atleast_1d(np.asarray(prepared.labels, dtype=np.int64))
    logp = log_softmax(scores)
    return float(-logp[np.arange(scores.shape[0]), :, :, labels - 1].sum())


def gradient_check(model: Model, prepared: PreparedSample, epsilon: float = 1e-5,
                   corrupt_block: str | None = None) -> GradCheckReport:
    """Compare every analytic parameter gradient with central differences.

    Relative error is |a - n| / max(|a|, |n|, 1e-8). `corrupt_block` is a
    test hook that deliberately scales one analytic block so the check
    must fail.
    """
    scores, lattice = forward_pass(model, prepared)
    analytic = bptt_backward(model, lattice, scores, prepared.labels)
    if corrupt_block is not None:
        analytic[corrupt_block] = analytic[corrupt_block] * 1.5 + 1.0
    per_block = {}
    worst = ("", 0.0)
    for name, arr in model.param_items():
        flat = arr.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        block_max = 0.0
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + epsilon
            plus = _sample_loss(model, prepared)
            flat[k] = old - epsilon
            minus = _sample_loss(model, prepared)
            flat[k] = old
            numeric = (plus - minus) / (2.0 * epsilon)
            denom = max(abs(a_flat[k]), abs(numeric), 1e-8)
            rel = abs(a_flat[k] - numeric) / denom
            if rel > block_max:
                block_max = rel
            if rel > worst[1]:
                worst = (f"{name}[{k}]", rel)
        per_block[name] = block_max
    return GradCheckReport(worst[1], per_block, worst[0])


# ---------------------------------------------------------------------------
# training loops


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    learning_rate: float
    seconds: float


def _format_metrics(m: EpochMetrics) -> str:
    return (f"epoch={m.epoch} loss={m.loss:.6f} accuracy={m.accuracy:.4f} "
            f"lr={m.learning_rate:.6g} seconds={m.seconds:.2f}")


def _check_labels(sequences, class_count: int):
    for k, seq in enumerate(sequences):
        if seq.label is None or not 1 <= seq.label <= class_count:
            raise ConfigError(
                f"sequence {k} has label {seq.label}, model expects [1, {class_count}]"
            )


def _prepare_batch(model: Model, sequences, indices, order_steps, seed: int, epoch: int):
    prepared = []
    for idx in indices:
        seq = sequences[idx]
        stm = rng.stream(seed, "frames", epoch, int(idx))
        frames = sample_frames(seq.frame_count, model.config.frames, stm)
        prepared.append(prepare_sample(seq, order_steps, frames, model.config))
    return stack_prepared(prepared)


def train(model: Model, sequences, config: TrainConfig, opt: OptimizerState,
          order_steps=None, verbose: bool = False, metrics_sink=None):
    """SGD over shuffled minibatches with per-epoch frame resampling.

    Returns (model, [EpochMetrics...]). `metrics_sink` receives one
    formatted line per epoch (besides stdout when `verbose`).
    """
    sequences = list(sequences.sequences) if hasattr(sequences, "sequences") else list(sequences)
    if not sequences:
        raise ConfigError("training needs a non-empty dataset")
    _check_labels(sequences, model.config.class_count)
    if model.config.architecture == "st_lstm" and order_steps is None:
        raise ConfigError("st_lstm training needs a traversal order")
    n = len(sequences)
    metrics = []
    for epoch in range(config.epochs):
        started = time.perf_counter()
        perm = rng.stream(config.seed, "shuffle", epoch).permutation(n)
        total_loss = 0.0
        total_correct = 0
        for start in range(0, n, config.batch_size):
            batch_idx = perm[start:start + config.batch_size]
            if config.threads > 1 and len(batch_idx) > 1:
                loss_sum, correct, grads = _threaded_batch(
                    model, sequences, batch_idx, order_steps, config, epoch)
            else:
                prepared = _prepare_batch(model, sequences, batch_idx, order_steps,
                                          config.seed, epoch)
                loss_sum, correct, grads = batch_loss_and_grads(model, prepared)
            b = len(batch_idx)
            grads = {k: g / b for k, g in grads.items()}
            if config.clip_gradients:
                grads = clip_gradients(grads)
            sgd_update(model, grads, opt)
            total_loss += loss_sum
            total_correct += correct
        entry = EpochMetrics(epoch, total_loss / n, total_correct / n,
                             opt.effective_lr, time.perf_counter() - started)
        metrics.append(entry)
        if verbose:
            print(_format_metrics(entry))
        if metrics_sink is not None:
            metrics_sink(entry)
        opt.epoch += 1
        if (config.stop_train_accuracy is not None
                and entry.accuracy >= config.stop_train_accuracy):
            break
    return model, metrics


def _threaded_batch(model, sequences, batch_idx, order_steps, config, epoch):
    chunks = np.array_split(batch_idx, min(config.threads, len(batch_idx)))
    chunks = [c for c in chunks if len(c)]

    def run(chunk):
        prepared = _prepare_batch(model, sequences, chunk, order_steps,
                                  config.seed, epoch)
        return batch_loss_and_grads(model, prepared)

    loss_sum, correct, grads = 0.0, 0, None
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        if config.reproducible:
            results = list(pool.map(run, chunks))  # fixed reduction order
        else:
            results = [f.result() for f in as_completed([pool.submit(run, c) for c in chunks])]
    for part_loss, part_correct, part_grads in results:
        loss_sum += part_loss
        correct += part_correct
        if grads is None:
            grads = part_grads
        else:
            for key, g in part_grads.items():
                grads[key] += g
    return loss_sum, correct, grads


def evaluate(model, sequences, order_steps=None, p: float = 1.0,
             batch_size: int = 100):
    """Accuracy with deterministic frame selection over the first p portion.

    Returns (accuracy, per_class accuracy dict, predicted labels).
    """
    sequences = list(sequences.sequences) if hasattr(sequences, "sequences") else list(sequences)
    if not sequences:
        raise ConfigError("evaluation needs a non-empty dataset")
    predictions = np.zeros(len(sequences), dtype=np.int64)
    if isinstance(model, TemporalAverageModel):
        for k, seq in enumerate(sequences):
            keep = truncated_length(seq.frame_count, p)
            feats = seq.coords[:keep].reshape(keep, -1).mean(axis=0)
            scores = temporal_average_forward(model, feats)
            predictions[k] = int(np.argmax(softmax(scores))) + 1
    else:
        for start in range(0, len(sequences), batch_size):
            group = sequences[start:start + batch_size]
            prepared = []
            for seq in group:
                keep = truncated_length(seq.frame_count, p)
                frames = eval_frame_indices(keep, model.config.frames)
                prepared.append(prepare_sample(seq, order_steps, frames, model.config))
            batch = stack_prepared(prepared)
            scores, _ = forward_pass(model, batch)
            probs = average_probabilities(scores)
            predictions[start:start + len(group)] = np.argmax(probs, axis=-1) + 1

    truth = np.asarray([seq.label for seq in sequences], dtype=np.int64)
    accuracy = float(np.mean(predictions == truth))
    per_class = {}
    for cls in sorted(set(truth.tolist())):
        mask = truth == cls
        per_class[cls] = float(np.mean(predictions[mask] == cls))
    return accuracy, per_class, predictions


# ---------------------------------------------------------------------------
# temporal-average baseline training


def train_temporal_average(model: TemporalAverageModel, sequences,
                           config: TrainConfig, opt: OptimizerState,
                           verbose: bool = False):
    sequences = list(sequences.sequences) if hasattr(sequences, "sequences") else list(sequences)
    if not sequences:
        raise ConfigError("training needs a non-empty dataset")
    _check_labels(sequences, model.class_count)
    feats = np.stack([mean_frame_feature(seq) for seq in sequences])
    labels = np.asarray([seq.label for seq in sequences], dtype=np.int64)
    n = len(sequences)
    metrics = []
    for epoch in range(config.epochs):
        started = time.perf_counter()
        perm = rng.stream(config.seed, "shuffle", epoch).permutation(n)
        total_loss = 0.0
        total_correct = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            x = feats[idx]
            y = labels[idx]
            scores = temporal_average_forward(model, x)
            logp = log_softmax(scores)
            total_loss += float(-logp[np.arange(len(idx)), y - 1].sum())
            total_correct += int(np.sum(np.argmax(scores, axis=-1) + 1 == y))
            dscores = softmax(scores)
            dscores[np.arange(len(idx)), y - 1] -= 1.0
            grads = temporal_average_backward(model, x, dscores / len(idx))
            if config.clip_gradients:
                grads = clip_gradients(grads)
            sgd_update(model, grads, opt)
        entry = EpochMetrics(epoch, total_loss / n, total_correct / n,
                             opt.effective_lr, time.perf_counter() - started)
        metrics.append(entry)
        if verbose:
            print(_format_metrics(entry))
        opt.epoch += 1
        if (config.stop_train_accuracy is not None
                and entry.accuracy >= config.stop_train_accuracy):
            break
    return model, metrics
