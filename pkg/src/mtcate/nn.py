"""Dense layers, dropout masks and the Adam update used by every network here."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, astensor, asum, matmul, mul, transpose


@dataclass
class DenseLayer:
    """Affine map: rows of the input are feature vectors, weights is (out, in)."""

    weights: Tensor
    bias: Tensor

    @property
    def in_dim(self) -> int:
        return self.weights.value.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.value.shape[0]


def init_dense(rng: np.random.Generator, n_out: int, n_in: int) -> DenseLayer:
    """Zero bias, weights uniform in +-sqrt(6/(fan_in+fan_out))."""
    bound = math.sqrt(6.0 / (n_in + n_out))
    w = rng.uniform(-bound, bound, size=(n_out, n_in))
    return DenseLayer(Tensor(w), Tensor(np.zeros(n_out)))


def dense_forward(layer: DenseLayer, x) -> Tensor:
    x = astensor(x)
    if x.value.ndim != 2:
        raise ValueError(f"expected 2-d input, got shape {x.value.shape}")
    if x.value.shape[1] != layer.in_dim:
        raise ValueError(
            f"input has {x.value.shape[1]} features, layer expects {layer.in_dim}"
        )
    return add(matmul(x, transpose(layer.weights)), layer.bias)


def dropout_mask(shape, rate: float, rng) -> np.ndarray:
    """Inverted-dropout mask: Bernoulli(1-rate) keep decisions scaled by 1/(1-rate).

    `rng` is an integer seed or a numpy Generator. The mask is a plain
    constant array, so applying it is just an elementwise multiply.
    """
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    keep = rng.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter array."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, param: np.ndarray, **kwargs) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), **kwargs)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """Bias-corrected Adam update, in place on `param`."""
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ValueError(
            f"shape mismatch: param {param.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    param -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param


def l2_penalty(weight_tensors) -> Tensor:
    """Sum of squared entries over a list of weight tensors (biases excluded by the caller)."""
    total = None
    for w in weight_tensors:
        term = asum(mul(w, w))
        total = term if total is None else add(total, term)
    if total is None:
        raise ValueError("no weights given")
    return total
