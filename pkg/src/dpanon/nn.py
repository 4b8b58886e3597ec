"""Small numpy building blocks: same-padding 1-D convolution, activations, Adam."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError

ACTIVATIONS = ("sigmoid", "linear", "tanh", "relu")


@dataclass
class ConvLayer:
    """Weights of one stride-1, same-padding 1-D convolution.

    kernel has shape (out_channels, in_channels, width); width must be odd.
    """

    kernel: np.ndarray
    bias: np.ndarray
    activation: str = "linear"

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kernel.ndim != 3 or self.kernel.shape[2] % 2 != 1:
            raise DataError(f"kernel must be (out, in, odd width), got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise DataError("bias length must equal out_channels")
        if self.activation not in ACTIVATIONS:
            raise DataError(f"unknown activation {self.activation!r}")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def width(self) -> int:
        return self.kernel.shape[2]

    @classmethod
    def init(cls, rng, in_ch: int, out_ch: int, width: int, activation: str) -> ConvLayer:
        bound = 1.0 / np.sqrt(in_ch * width)
        return cls(
            rng.uniform(-bound, bound, (out_ch, in_ch, width)),
            rng.uniform(-bound, bound, out_ch),
            activation,
        )

    def copy(self) -> ConvLayer:
        return ConvLayer(self.kernel.copy(), self.bias.copy(), self.activation)


def conv1d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (pre-activation output (out, K), input windows for the backward pass)."""
    pad = kernel.shape[2] // 2
    xp = np.pad(x, ((0, 0), (pad, pad)))
    win = sliding_window_view(xp, kernel.shape[2], axis=1)  # (in, K, width)
    out = np.tensordot(kernel, win, axes=([1, 2], [0, 2]))
    out += bias[:, None]
    return out, win


def conv1d_backward(g: np.ndarray, win: np.ndarray, kernel: np.ndarray):
    """Gradients (dx, dkernel, dbias) given upstream gradient g of shape (out, K)."""
    width = kernel.shape[2]
    pad = width // 2
    dkernel = np.tensordot(g, win, axes=([1], [1]))
    dbias = g.sum(axis=1)
    gp = np.pad(g, ((0, 0), (pad, pad)))
    gwin = sliding_window_view(gp, width, axis=1)
    dx = np.tensordot(kernel[:, :, ::-1], gwin, axes=([0, 2], [0, 2]))
    return dx, dkernel, dbias


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activate(a: np.ndarray, name: str) -> np.ndarray:
    if name == "sigmoid":
        return sigmoid(a)
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    return a


def activation_grad(y: np.ndarray, a: np.ndarray, name: str) -> np.ndarray:
    """Derivative of the activation, expressed through its output y (or input a)."""
    if name == "sigmoid":
        return y * (1.0 - y)
    if name == "tanh":
        return 1.0 - y * y
    if name == "relu":
        return (a > 0).astype(np.float64)
    return np.ones_like(y)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def dropout_mask(rng, shape, rate: float) -> np.ndarray | None:
    """Inverted-dropout multiplier, or None when dropout is off."""
    if rate <= 0:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


class Adam:
    """Adam with L2 weight decay added to the gradient (coupled, torch-style)."""

    def __init__(self, params: list[np.ndarray], lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
