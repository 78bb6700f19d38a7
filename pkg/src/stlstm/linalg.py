"""Dense affine maps and the elementwise nonlinearities used by every cell.

Vectors are 1-D float64 numpy arrays; all functions also accept a leading
batch axis (feature axis last). Storage is row-major dense; numpy carries
the arithmetic. There is no broadcasting across mismatched feature
dimensions: a mismatch is a hard `DimensionError`, never silent padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Feature-dimension contract violation; message names both dims."""


class ConfigError(ValueError):
    """Invalid configuration value (non-positive bandwidth, zero sizes...)."""


def as_vector(values) -> np.ndarray:
    out = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise ValueError("vector contains non-finite entries")
    return out


@dataclass(frozen=True)
class AffineMap:
    """x -> weight @ x + bias, weight (out_dim, in_dim), bias (out_dim,)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1:
            raise DimensionError(
                f"affine map needs 2-D weight and 1-D bias, got {w.shape} / {b.shape}"
            )
        if w.shape[0] != b.shape[0]:
            raise DimensionError(
                f"weight rows ({w.shape[0]}) != bias length ({b.shape[0]})"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("affine map entries must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def affine_apply(m: AffineMap, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.in_dim:
        raise DimensionError(
            f"affine input has dim {x.shape[-1]}, map expects {m.in_dim}"
        )
    return x @ m.weight.T + m.bias


def sigmoid(z: np.ndarray) -> np.ndarray:
    # exp may overflow to inf for very negative z; 1/(1+inf) -> 0 is the
    # correct limit, so the overflow is benign.
    z = np.asarray(z, dtype=np.float64)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def elementwise(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "tanh":
        return np.tanh(np.asarray(z, dtype=np.float64))
    raise ConfigError(f"unknown elementwise kind {kind!r}")


def gaussian_response(z: np.ndarray, lam: float) -> np.ndarray:
    """exp(-lam * z^2) entrywise; lam > 0 controls the bandwidth."""
    if lam <= 0:
        raise ConfigError(f"gaussian bandwidth must be positive, got {lam}")
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-lam * z * z)


# Analytic derivatives, expressed from the already-computed activations so
# the backward pass never re-evaluates the nonlinearity.

def sigmoid_grad(s: np.ndarray) -> np.ndarray:
    """sigma'(z) given s = sigma(z)."""
    return s * (1.0 - s)


def tanh_grad(y: np.ndarray) -> np.ndarray:
    """tanh'(z) given y = tanh(z)."""
    return 1.0 - y * y


def gaussian_grad(z: np.ndarray, lam: float, g: np.ndarray) -> np.ndarray:
    """d/dz exp(-lam z^2) given g = exp(-lam z^2)."""
    return -2.0 * lam * z * g


def affine_grads(m: AffineMap, x: np.ndarray, dout: np.ndarray):
    """Gradients of an affine application.

    Returns (d_weight, d_bias, d_input); batched inputs are summed over
    the batch axis for the parameter gradients.
    """
    x = np.asarray(x, dtype=np.float64)
    dout = np.asarray(dout, dtype=np.float64)
    if dout.ndim == 1:
        dw = np.outer(dout, x)
        db = dout.copy()
    else:
        flat_x = x.reshape(-1, x.shape[-1])
        flat_d = dout.reshape(-1, dout.shape[-1])
        dw = flat_d.T @ flat_x
        db = flat_d.sum(axis=0)
    dx = dout @ m.weight
    return dw, db, dx
