"""Skeleton-sequence datasets: file I/O, synthetic generation, noise injection.

Datasets are stored as line-delimited JSON, one sequence per line:

    {"label": 2, "joints": 16, "frames": 40, "coords": [[[x,y,z], ...], ...],
     "aux": [[[...], ...], ...], "split": "train"}

`coords` is frames x joints x 3 in meters; `aux` (optional) is a second
per-joint feature modality; `split` (optional, default "train") tags
train/test membership. Floats are written with shortest round-trip repr,
so save/load is lossless and re-saving is byte-stable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .linalg import ConfigError
from .skeleton import SkeletonGraph, default_graph


class DataFormatError(ValueError):
    """Malformed dataset record; message carries the line number."""


@dataclass
class SkeletonSequence:
    coords: np.ndarray                 # (frames, joints, 3), meters
    label: int | None = None           # 1-based class index
    aux: np.ndarray | None = None      # (frames, joints, aux_dim)
    split: str = "train"

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[2] != 3:
            raise DataFormatError(
                f"coords must be (frames, joints, 3), got {self.coords.shape}"
            )
        if not np.all(np.isfinite(self.coords)):
            raise DataFormatError("coords contain non-finite values")
        if self.aux is not None:
            self.aux = np.asarray(self.aux, dtype=np.float64)
            if self.aux.ndim != 3 or self.aux.shape[:2] != self.coords.shape[:2]:
                raise DataFormatError(
                    f"aux shape {self.aux.shape} inconsistent with coords "
                    f"{self.coords.shape}"
                )

    @property
    def frame_count(self) -> int:
        return self.coords.shape[0]

    @property
    def joint_count(self) -> int:
        return self.coords.shape[1]

    @property
    def aux_dim(self) -> int:
        return 0 if self.aux is None else self.aux.shape[2]


@dataclass
class Dataset:
    sequences: list = field(default_factory=list)
    class_count: int = 0

    def __post_init__(self):
        if self.sequences:
            j = self.sequences[0].joint_count
            a = self.sequences[0].aux_dim
            for k, seq in enumerate(self.sequences):
                if seq.joint_count != j:
                    raise DataFormatError(
                        f"sequence {k} has {seq.joint_count} joints, expected {j}"
                    )
                if seq.aux_dim != a:
                    raise DataFormatError(
                        f"sequence {k} has aux dim {seq.aux_dim}, expected {a}"
                    )

    @property
    def joint_count(self) -> int:
        return self.sequences[0].joint_count if self.sequences else 0

    @property
    def aux_dim(self) -> int:
        return self.sequences[0].aux_dim if self.sequences else 0

    def subset(self, split: str) -> list:
        return [s for s in self.sequences if s.split == split]


def _nested_list(arr: np.ndarray):
    return arr.tolist()


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in dataset.sequences:
            record = {
                "label": seq.label,
                "joints": seq.joint_count,
                "frames": seq.frame_count,
                "coords": _nested_list(seq.coords),
            }
            if seq.aux is not None:
                record["aux"] = _nested_list(seq.aux)
            if seq.split != "train":
                record["split"] = seq.split
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_dataset(path) -> Dataset:
    sequences = []
    max_label = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {lineno}: invalid JSON ({exc})") from exc
            try:
                joints = int(record["joints"])
                frames = int(record["frames"])
                coords = record["coords"]
            except (KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"line {lineno}: missing or bad field ({exc})") from exc
            if len(coords) != frames:
                raise DataFormatError(
                    f"line {lineno}: {len(coords)} frames listed, header says {frames}"
                )
            for t, frame in enumerate(coords):
                if len(frame) != joints:
                    raise DataFormatError(
                        f"line {lineno}: frame {t} has {len(frame)} joints, "
                        f"header says {joints}"
                    )
            label = record.get("label")
            aux = record.get("aux")
            try:
                seq = SkeletonSequence(
                    coords=np.asarray(coords, dtype=np.float64),
                    label=None if label is None else int(label),
                    aux=None if aux is None else np.asarray(aux, dtype=np.float64),
                    split=record.get("split", "train"),
                )
            except (DataFormatError, ValueError) as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from exc
            if seq.label is not None:
                max_label = max(max_label, seq.label)
            sequences.append(seq)
    return Dataset(sequences, class_count=max_label)


@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale motion dataset: each class animates one limb of the tree.

    Classes cycle over limb/frequency pairs, so discriminating them needs
    both spatial (which subtree moves) and temporal (how fast) structure.
    Outliers displace single joint-frames by `outlier_magnitude` in a
    random direction, mimicking depth-sensor glitches.
    """

    joints: int = 16
    class_count: int = 4
    frames: int = 40
    train_per_class: int = 100
    test_per_class: int = 50
    base_frequency: float = 1.0       # limb oscillation cycles per sequence
    amplitude: float = 0.1            # meters
    noise_sigma: float = 0.0          # meters, i.i.d. Gaussian per coordinate
    outlier_prob: float = 0.0         # per joint-frame
    outlier_magnitude: float = 0.3    # meters
    with_aux: bool = False
    aux_dim: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise ConfigError(f"outlier_prob must be in [0,1], got {self.outlier_prob}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.joints < 2 or self.class_count < 1 or self.frames < 1:
            raise ConfigError("need joints >= 2, class_count >= 1, frames >= 1")


BASE_POSE_16 = np.array([
    [0.00, 0.25, 0.00],   # 1 torso / lower spine
    [0.00, 0.50, 0.00],   # 2 neck
    [0.00, 0.65, 0.00],   # 3 head
    [0.20, 0.45, 0.00],   # 4 left shoulder
    [0.30, 0.20, 0.00],   # 5 left elbow
    [0.35, 0.00, 0.00],   # 6 left hand
    [-0.20, 0.45, 0.00],  # 7 right shoulder
    [-0.30, 0.20, 0.00],  # 8 right elbow
    [-0.35, 0.00, 0.00],  # 9 right hand
    [0.00, 0.00, 0.00],   # 10 hip center
    [0.10, -0.10, 0.00],  # 11 left hip
    [0.10, -0.50, 0.00],  # 12 left knee
    [0.10, -0.90, 0.00],  # 13 left foot
    [-0.10, -0.10, 0.00], # 14 right hip
    [-0.10, -0.50, 0.00], # 15 right knee
    [-0.10, -0.90, 0.00], # 16 right foot
])


def base_pose(graph: SkeletonGraph, seed: int) -> np.ndarray:
    """Static rest pose: the standard figure for J=16, else a seeded layout."""
    if graph.joint_count == 16 and graph.edges == default_graph(16).edges:
        return BASE_POSE_16.copy()
    stm = rng.stream(seed, "pose")
    pose = np.zeros((graph.joint_count, 3))
    adj = graph.adjacency()
    seen = {graph.root}
    frontier = [graph.root]
    while frontier:
        u = frontier.pop(0)
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                pose[v - 1] = pose[u - 1] + 0.2 * stm.unit_vector(3)
                frontier.append(v)
    return pose


def limbs(graph: SkeletonGraph) -> list:
    """Short joint chains hanging off each leaf, candidate movable parts."""
    adj = graph.adjacency()
    parent = {graph.root: 0}
    frontier = [graph.root]
    while frontier:
        u = frontier.pop()
        for v in adj[u]:
            if v not in parent:
                parent[v] = u
                frontier.append(v)
    leaves = sorted(j for j in range(1, graph.joint_count + 1)
                    if j != graph.root and len(adj[j]) == 1)
    out = []
    for leaf in leaves:
        chain = [leaf]
        while len(chain) < 3 and parent[chain[-1]] != graph.root and parent[chain[-1]] != 0:
            chain.append(parent[chain[-1]])
        out.append(tuple(chain))
    return out


def class_pattern(spec: SyntheticSpec, graph: SkeletonGraph, cls: int) -> dict:
    """Per-joint sinusoid parameters (frequency, amplitude, phase, direction)."""
    parts = limbs(graph)
    used = max(1, min(len(parts), math.ceil(spec.class_count / 2)))
    limb = parts[cls % used]
    freq = spec.base_frequency * (1 + cls // used)
    stm = rng.stream(spec.seed, "pattern", cls)
    pattern = {}
    for joint in limb:
        direction = stm.unit_vector(3)
        phase = stm.uniform() * 2.0 * np.pi
        amp = spec.amplitude * (0.75 + 0.5 * stm.uniform())
        pattern[joint] = (freq, amp, phase, direction)
    return pattern


def _aux_map(spec: SyntheticSpec) -> np.ndarray:
    stm = rng.stream(spec.seed, "auxmap")
    return stm.normal(spec.aux_dim * 3).reshape(spec.aux_dim, 3)


def generate_synthetic(spec: SyntheticSpec, graph: SkeletonGraph | None = None) -> Dataset:
    """Deterministic function of the spec; same spec -> identical dataset."""
    if graph is None:
        graph = default_graph(spec.joints)
    if graph.joint_count != spec.joints:
        raise ConfigError(
            f"graph has {graph.joint_count} joints, spec says {spec.joints}"
        )
    pose = base_pose(graph, spec.seed)
    patterns = [class_pattern(spec, graph, c) for c in range(spec.class_count)]
    aux_map = _aux_map(spec) if spec.with_aux else None
    t_axis = np.arange(spec.frames) / spec.frames

    sequences = []
    for cls in range(spec.class_count):
        counts = (("train", spec.train_per_class), ("test", spec.test_per_class))
        sample_index = 0
        for split, count in counts:
            for _ in range(count):
                stm = rng.stream(spec.seed, "sample", cls, sample_index)
                coords = np.tile(pose, (spec.frames, 1, 1))
                for joint, (freq, amp, phase, direction) in patterns[cls].items():
                    wave = amp * np.sin(2 * np.pi * freq * t_axis + phase)
                    coords[:, joint - 1, :] += wave[:, None] * direction
                if spec.noise_sigma > 0:
                    noise = stm.normal(coords.size).reshape(coords.shape)
                    coords += spec.noise_sigma * noise
                if spec.outlier_prob > 0:
                    hits = stm.uniform(spec.frames * spec.joints) < spec.outlier_prob
                    for flat in np.nonzero(hits)[0]:
                        t, j = divmod(int(flat), spec.joints)
                        coords[t, j] += spec.outlier_magnitude * stm.unit_vector(3)
                aux = None
                if aux_map is not None:
                    vel = np.diff(coords, axis=0, prepend=coords[:1])
                    aux = vel @ aux_map.T
                    aux += 0.01 * stm.normal(aux.size).reshape(aux.shape)
                sequences.append(
                    SkeletonSequence(coords, label=cls + 1, aux=aux, split=split)
                )
                sample_index += 1
    return Dataset(sequences, class_count=spec.class_count)


def inject_noise(sequence: SkeletonSequence, joint: int,
                 magnitude_mean: float, stm: rng.Stream) -> SkeletonSequence:
    """Translate one joint per frame in a random direction, norm mean +/- 20%."""
    if not 1 <= joint <= sequence.joint_count:
        raise ConfigError(
            f"joint {joint} outside [1, {sequence.joint_count}]"
        )
    coords = sequence.coords.copy()
    if magnitude_mean != 0.0:
        for t in range(sequence.frame_count):
            direction = stm.unit_vector(3)
            norm = magnitude_mean * (0.8 + 0.4 * stm.uniform())
            coords[t, joint - 1] += norm * direction
    return replace(sequence, coords=coords)
