"""Minimal exact-gradient NN kernel: dilated 1-D convolutions, ReLU, softmax,
the two training losses (cross entropy + truncated MSE smoothing) and Adam.

All arrays are float64, shaped (T, channels) row-major. Every forward op has a
matching backward returning analytic gradients, verified against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-12


class DimensionError(ValueError):
    """Shape/channel mismatch between operands."""


def as_tensor2(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D (T, D) array, got shape {arr.shape}")
    return arr


@dataclass
class ConvKernel:
    """Weights of a dilated 1-D convolution: (kernel_size, in, out) + bias."""

    weights: np.ndarray  # (kernel_size, in_channels, out_channels)
    bias: np.ndarray     # (out_channels,)
    dilation: int = 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 3:
            raise DimensionError("conv weights must be (kernel_size, in, out)")
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")
        if self.weights.shape[0] % 2 == 0:
            raise ValueError("kernel_size must be odd for symmetric same-padding")
        if self.bias.shape != (self.weights.shape[2],):
            raise DimensionError("bias length must equal out_channels")

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[2]


def _padded(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((pad, pad), (0, 0)))


def conv1d_dilated(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Acausal 'same'-padded dilated convolution; output length equals input."""
    x = as_tensor2(x)
    if x.shape[1] != kernel.in_channels:
        raise DimensionError(
            f"input has {x.shape[1]} channels, kernel expects {kernel.in_channels}"
        )
    k, d = kernel.kernel_size, kernel.dilation
    pad = (k - 1) // 2 * d
    xp = _padded(x, pad)
    T = x.shape[0]
    out = np.tile(kernel.bias, (T, 1))
    for i in range(k):
        out += xp[i * d : i * d + T] @ kernel.weights[i]
    return out


def conv1d_backward(
    x: np.ndarray, kernel: ConvKernel, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (d_input, d_weights, d_bias) of conv1d_dilated."""
    x = as_tensor2(x)
    grad_out = as_tensor2(grad_out)
    k, d = kernel.kernel_size, kernel.dilation
    pad = (k - 1) // 2 * d
    T = x.shape[0]
    xp = _padded(x, pad)
    gw = np.empty_like(kernel.weights)
    gxp = np.zeros_like(xp)
    for i in range(k):
        sl = slice(i * d, i * d + T)
        gw[i] = xp[sl].T @ grad_out
        gxp[sl] += grad_out @ kernel.weights[i].T
    gb = grad_out.sum(axis=0)
    gx = gxp[pad : pad + T] if pad else gxp
    return gx, gw, gb


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is taken as 0
    return np.where(x > 0.0, grad_out, 0.0)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction; rows sum to 1 within 1e-9."""
    z = as_tensor2(logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given grad w.r.t. softmax output."""
    dot = (grad_probs * probs).sum(axis=1, keepdims=True)
    return probs * (grad_probs - dot)


def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    probs = as_tensor2(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != probs.shape[0]:
        raise DimensionError("labels length must equal number of probability rows")
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def cross_entropy_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """dLoss/dprobs for cross_entropy_loss."""
    probs = as_tensor2(probs)
    labels = np.asarray(labels, dtype=np.int64)
    T = probs.shape[0]
    g = np.zeros_like(probs)
    rows = np.arange(T)
    picked = probs[rows, labels]
    live = picked > PROB_FLOOR  # clamped entries have zero gradient
    g[rows[live], labels[live]] = -1.0 / (picked[live] * T)
    return g


@dataclass
class LossConfig:
    """Weight and truncation threshold of the temporal smoothing loss."""

    lambda_tmse: float = 0.15
    tau: float = 4.0

    def __post_init__(self):
        if self.lambda_tmse < 0:
            raise ValueError("lambda_tmse must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


def tmse_loss(probs: np.ndarray, config: LossConfig) -> float:
    """Truncated MSE on adjacent-timestep log-probability differences."""
    probs = as_tensor2(probs)
    T, J = probs.shape
    if T < 2:
        return 0.0
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    delta = np.minimum(np.abs(logp[1:] - logp[:-1]), config.tau)
    return float((delta**2).sum() / ((T - 1) * J))


def tmse_grad(probs: np.ndarray, config: LossConfig) -> np.ndarray:
    probs = as_tensor2(probs)
    T, J = probs.shape
    g = np.zeros_like(probs)
    if T < 2:
        return g
    clamped = np.maximum(probs, PROB_FLOOR)
    logp = np.log(clamped)
    diff = logp[1:] - logp[:-1]
    inside = np.abs(diff) < config.tau  # truncated region has zero gradient
    gdiff = np.where(inside, 2.0 * diff, 0.0) / ((T - 1) * J)
    glogp = np.zeros_like(probs)
    glogp[1:] += gdiff
    glogp[:-1] -= gdiff
    # d log(max(p, floor))/dp = 1/p where p above floor, else 0
    g = np.where(probs > PROB_FLOOR, glogp / clamped, 0.0)
    return g


@dataclass
class AdamState:
    """Bias-corrected Adam over a flat list of parameter arrays."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> None:
    """One in-place Adam update on every parameter array."""
    if len(params) != len(grads):
        raise DimensionError("params/grads list length mismatch")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise DimensionError(f"param shape {p.shape} != grad shape {g.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p -= state.lr * mhat / (np.sqrt(vhat) + state.epsilon)
