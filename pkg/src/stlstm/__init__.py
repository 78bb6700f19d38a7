"""Spatio-temporal LSTM for skeleton sequences.

Recurrent lattice over (joint traversal step, frame) with per-direction
forget gates, optional input-reliability gating, in-cell two-modality
fusion, and a from-scratch SGD trainer with exact analytic gradients.
"""

from .network import Model, ModelConfig, build_model, forward_pass, loss, predict
from .skeleton import SkeletonGraph, chain_order, double_chain_order, tree_traversal
from .training import OptimizerState, TrainConfig, gradient_check, train

__all__ = [
    "Model", "ModelConfig", "build_model", "forward_pass", "loss", "predict",
    "SkeletonGraph", "chain_order", "double_chain_order", "tree_traversal",
    "OptimizerState", "TrainConfig", "gradient_check", "train",
]
