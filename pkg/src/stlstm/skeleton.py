"""Body-joint adjacency trees, spatial visiting orders, and pose rotation.

Joints are 1-based indices. A graph must be a connected tree; the three
visiting orders (chain, double chain, bidirectional tree traversal) turn
it into the spatial step sequence consumed by the lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from .linalg import ConfigError

if TYPE_CHECKING:  # pragma: no cover
    from .data import SkeletonSequence

NAMED_JOINT_KEYS = ("left_shoulder", "right_shoulder", "hip_center", "spine")


class GraphError(ValueError):
    """Graph is not a valid connected tree."""


class NormalizationError(ValueError):
    """Degenerate reference vectors; message names the frame."""


@dataclass(frozen=True)
class SkeletonGraph:
    joint_count: int
    edges: tuple
    root: int = 1
    named_joints: dict | None = None

    def __post_init__(self):
        j = self.joint_count
        if j < 1:
            raise GraphError(f"joint_count must be >= 1, got {j}")
        edges = tuple(tuple(sorted((int(a), int(b)))) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        if not 1 <= self.root <= j:
            raise GraphError(f"root {self.root} outside joints [1, {j}]")
        for a, b in edges:
            if not (1 <= a <= j and 1 <= b <= j):
                raise GraphError(f"edge ({a}, {b}) outside joints [1, {j}]")
            if a == b:
                raise GraphError(f"self-loop at joint {a}")
        if len(edges) != j - 1:
            raise GraphError(f"tree on {j} joints needs {j - 1} edges, got {len(edges)}")
        if len(set(edges)) != len(edges):
            raise GraphError("duplicate edge")
        # connectivity: J-1 distinct edges + all joints reachable => tree
        adj = self.adjacency()
        seen = {self.root}
        frontier = [self.root]
        while frontier:
            u = frontier.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    frontier.append(v)
        if len(seen) != j:
            raise GraphError(f"graph is disconnected: reached {len(seen)} of {j} joints")
        if self.named_joints is not None:
            for key, idx in self.named_joints.items():
                if not 1 <= idx <= j:
                    raise GraphError(f"named joint {key}={idx} outside [1, {j}]")

    def adjacency(self) -> dict:
        adj = {i: [] for i in range(1, self.joint_count + 1)}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        for nbrs in adj.values():
            nbrs.sort()
        return adj


@dataclass(frozen=True)
class TraversalOrder:
    steps: tuple
    kind: str

    def __len__(self):
        return len(self.steps)


def chain_order(joint_count: int) -> TraversalOrder:
    if joint_count < 1:
        raise ConfigError(f"chain order needs at least one joint, got {joint_count}")
    return TraversalOrder(tuple(range(1, joint_count + 1)), "chain")


def double_chain_order(joint_count: int) -> TraversalOrder:
    if joint_count < 1:
        raise ConfigError(f"double chain needs at least one joint, got {joint_count}")
    once = tuple(range(1, joint_count + 1))
    return TraversalOrder(once + once, "double_chain")


def tree_traversal(graph: SkeletonGraph) -> TraversalOrder:
    """Depth-first walk emitting the current joint on every visit.

    Children are visited in ascending index order; the walk re-emits a
    joint each time the traversal backtracks through it, so every edge is
    crossed exactly twice and the order starts and ends at the root.
    """
    adj = graph.adjacency()
    steps = [graph.root]
    stack = [(graph.root, 0, iter(adj[graph.root]))]
    while stack:
        node, parent, children = stack[-1]
        for child in children:
            if child != parent:
                steps.append(child)
                stack.append((child, node, iter(adj[child])))
                break
        else:
            stack.pop()
            if stack:
                steps.append(stack[-1][0])
    return TraversalOrder(tuple(steps), "tree")


def order_for(kind: str, graph: SkeletonGraph) -> TraversalOrder:
    if kind == "chain":
        return chain_order(graph.joint_count)
    if kind == "double_chain":
        return double_chain_order(graph.joint_count)
    if kind == "tree":
        return tree_traversal(graph)
    raise ConfigError(f"unknown traversal kind {kind!r}")


def default_16_joint_graph() -> SkeletonGraph:
    """Torso-rooted 16-joint human figure: head, two arms, two legs."""
    edges = (
        (1, 2), (2, 3),                    # torso -> neck -> head
        (2, 4), (4, 5), (5, 6),            # left arm
        (2, 7), (7, 8), (8, 9),            # right arm
        (1, 10),                           # torso -> hip
        (10, 11), (11, 12), (12, 13),      # left leg
        (10, 14), (14, 15), (15, 16),      # right leg
    )
    named = {"left_shoulder": 4, "right_shoulder": 7, "hip_center": 10, "spine": 1}
    return SkeletonGraph(16, edges, root=1, named_joints=named)


def default_graph(joint_count: int) -> SkeletonGraph:
    """The 16-joint figure when it fits, else a heap-shaped tree."""
    if joint_count == 16:
        return default_16_joint_graph()
    edges = tuple((i // 2, i) for i in range(2, joint_count + 1))
    return SkeletonGraph(joint_count, edges, root=1)


def parse_graph_file(text: str) -> SkeletonGraph:
    """Key-value lines (joints, root, named joints) plus 'a b' edge lines."""
    joint_count = None
    root = 1
    named = {}
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "joints":
                joint_count = int(value)
            elif key == "root":
                root = int(value)
            elif key in NAMED_JOINT_KEYS:
                named[key] = int(value)
            else:
                raise GraphError(f"line {lineno}: unknown key {key!r}")
        else:
            parts = line.split()
            if len(parts) != 2:
                raise GraphError(f"line {lineno}: expected 'a b' edge, got {raw!r}")
            edges.append((int(parts[0]), int(parts[1])))
    if joint_count is None:
        raise GraphError("graph file missing 'joints = N'")
    return SkeletonGraph(joint_count, tuple(edges), root, named or None)


def format_graph_file(graph: SkeletonGraph) -> str:
    lines = [f"joints = {graph.joint_count}", f"root = {graph.root}"]
    for key in NAMED_JOINT_KEYS:
        if graph.named_joints and key in graph.named_joints:
            lines.append(f"{key} = {graph.named_joints[key]}")
    lines.extend(f"{a} {b}" for a, b in graph.edges)
    return "\n".join(lines) + "\n"


def frame_rotation(coords: np.ndarray, named: dict, frame: int) -> np.ndarray:
    """Rotation aligning shoulders with +X and hip->spine into the +Y half-plane.

    The shoulder constraint is met exactly; hip->spine is then aligned as
    closely as the (generally non-orthogonal) body vectors allow, by
    orthonormalizing it against the shoulder axis.
    """
    ls = coords[named["left_shoulder"] - 1]
    rs = coords[named["right_shoulder"] - 1]
    hip = coords[named["hip_center"] - 1]
    spine = coords[named["spine"] - 1]
    v_sh = ls - rs
    n_sh = np.linalg.norm(v_sh)
    if n_sh < 1e-9:
        raise NormalizationError(f"frame {frame}: shoulder joints are coincident")
    e1 = v_sh / n_sh
    v_up = spine - hip
    w = v_up - (v_up @ e1) * e1
    n_up = np.linalg.norm(w)
    if n_up < 1e-9:
        raise NormalizationError(
            f"frame {frame}: hip->spine vector degenerate or parallel to shoulders"
        )
    e2 = w / n_up
    e3 = np.cross(e1, e2)
    return np.stack([e1, e2, e3])


def normalize_rotation(sequence: "SkeletonSequence", graph: SkeletonGraph) -> "SkeletonSequence":
    """Rigidly rotate every frame so all skeletons face the same direction."""
    if not graph.named_joints or any(k not in graph.named_joints for k in NAMED_JOINT_KEYS):
        raise NormalizationError(
            "graph must name left_shoulder, right_shoulder, hip_center and spine"
        )
    out = np.empty_like(sequence.coords)
    for t in range(sequence.coords.shape[0]):
        rot = frame_rotation(sequence.coords[t], graph.named_joints, t)
        out[t] = sequence.coords[t] @ rot.T
    return replace(sequence, coords=out)
