"""Layers with explicit forward/backward passes over numpy arrays (NCHW).

Each functional op returns its output plus whatever the backward pass needs;
the layer classes wrap them with parameter storage and a forward cache.
"""

from __future__ import annotations

import math

import numpy as np

from egoaudio import kernels
from egoaudio.errors import ConfigError, LabelError, ShapeError


# --- functional ops ---------------------------------------------------------

def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, padding: int = 1, stride: int = 1) -> np.ndarray:
    if padding != 1 or stride != 1:
        raise ShapeError("only padding=1, stride=1 is supported")
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"expected NCHW input and Kx C x3x3 weights, got {x.shape} / {w.shape}")
    if x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"channel mismatch: input {x.shape}, weights {w.shape}, bias {b.shape}")
    return kernels.conv3x3_forward(x, w.astype(x.dtype, copy=False), b.astype(x.dtype, copy=False))


def conv2d_backward(x, w, grad_out):
    """Returns ``(grad_input, grad_weight, grad_bias)``."""
    return kernels.conv3x3_backward(x, w.astype(x.dtype, copy=False), grad_out.astype(x.dtype, copy=False))


def maxpool2d(x: np.ndarray, window: int = 2, stride: int = 2):
    """Returns ``(output, argmax)``; argmax holds the 0..3 offset inside each window."""
    if window != 2 or stride != 2:
        raise ShapeError("only 2x2 windows with stride 2 are supported")
    if x.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError(f"max pooling needs H, W >= 2, got {x.shape}")
    return kernels.maxpool2x2_forward(x)


def maxpool2d_backward(grad_out, argmax, input_shape):
    return kernels.maxpool2x2_backward(grad_out, argmax, input_shape[2], input_shape[3])


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def linear(x, w, b):
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"linear shape mismatch: x {x.shape}, W {w.shape}, b {b.shape}")
    return x @ w + b


def linear_backward(x, w, grad_out):
    return grad_out @ w.T, x.T @ grad_out, grad_out.sum(axis=0)


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None):
    """Inverted dropout. Returns ``(output, mask)``; mask is None when it is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def _pool_regions(size: int, out: int) -> list[tuple[int, int]]:
    return [(math.floor(i * size / out), math.ceil((i + 1) * size / out)) for i in range(out)]


def adaptive_avg_pool(x: np.ndarray, out_hw=(7, 7)) -> np.ndarray:
    n, c, h, w = x.shape
    rows, cols = _pool_regions(h, out_hw[0]), _pool_regions(w, out_hw[1])
    y = np.empty((n, c, out_hw[0], out_hw[1]), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            y[:, :, i, j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    return y


def adaptive_avg_pool_backward(grad_out: np.ndarray, input_shape) -> np.ndarray:
    n, c, h, w = input_shape
    oh, ow = grad_out.shape[2:]
    gx = np.zeros(input_shape, dtype=grad_out.dtype)
    for i, (r0, r1) in enumerate(_pool_regions(h, oh)):
        for j, (c0, c1) in enumerate(_pool_regions(w, ow)):
            area = (r1 - r0) * (c1 - c0)
            gx[:, :, r0:r1, c0:c1] += (grad_out[:, :, i, j] / area)[:, :, None, None]
    return gx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.intp)
    n, c = logits.shape
    if labels.shape != (n,):
        raise LabelError(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= c):
        raise LabelError(f"labels must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


# --- layers -----------------------------------------------------------------

class Layer:
    """Base layer: no parameters, identity-shaped bookkeeping."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def output_shape(self, shape):
        return shape


class Conv2d(Layer):
    def __init__(self, in_channels, out_channels, rng, dtype=np.float32):
        super().__init__()
        std = math.sqrt(2.0 / (in_channels * 9))
        self.params["weight"] = (rng.standard_normal((out_channels, in_channels, 3, 3)) * std).astype(dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)

    def forward(self, x, training=False):
        self._x = x
        return conv2d(x, self.params["weight"], self.params["bias"])

    def backward(self, grad):
        gx, gw, gb = conv2d_backward(self._x, self.params["weight"], grad)
        self.grads["weight"], self.grads["bias"] = gw, gb
        return gx

    def output_shape(self, shape):
        return (self.params["weight"].shape[0],) + tuple(shape[1:])


class ReLU(Layer):
    def forward(self, x, training=False):
        self._x = x
        return relu(x)

    def backward(self, grad):
        return relu_backward(self._x, grad)


class MaxPool2d(Layer):
    def forward(self, x, training=False):
        self._shape = x.shape
        y, self._argmax = maxpool2d(x)
        return y

    def backward(self, grad):
        return maxpool2d_backward(grad, self._argmax, self._shape)

    def output_shape(self, shape):
        c, h, w = shape
        if h < 2 or w < 2:
            raise ShapeError(f"feature map {h}x{w} too small to pool")
        return (c, h // 2, w // 2)


class AdaptiveAvgPool2d(Layer):
    def __init__(self, out_hw=(7, 7)):
        super().__init__()
        self.out_hw = tuple(out_hw)

    def forward(self, x, training=False):
        self._shape = x.shape
        return adaptive_avg_pool(x, self.out_hw)

    def backward(self, grad):
        return adaptive_avg_pool_backward(grad, self._shape)

    def output_shape(self, shape):
        return (shape[0],) + self.out_hw


class Flatten(Layer):
    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


class Linear(Layer):
    def __init__(self, in_features, out_features, rng, dtype=np.float32):
        super().__init__()
        std = math.sqrt(2.0 / in_features)
        self.params["weight"] = (rng.standard_normal((in_features, out_features)) * std).astype(dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def forward(self, x, training=False):
        self._x = x
        return linear(x, self.params["weight"], self.params["bias"])

    def backward(self, grad):
        gx, gw, gb = linear_backward(self._x, self.params["weight"], grad)
        self.grads["weight"], self.grads["bias"] = gw, gb
        return gx

    def output_shape(self, shape):
        return (self.params["weight"].shape[1],)


class Dropout(Layer):
    def __init__(self, rate, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def forward(self, x, training=False):
        y, self._mask = dropout(x, self.rate, training, self.rng)
        return y

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask
