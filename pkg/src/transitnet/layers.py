"""Layer kinds with hand-written forward and backward passes.

Layer objects work on batched, channels-last arrays: convolution and pooling
take ``(batch, length, channels)``, dense layers take ``(batch, features)``.
That layout turns every convolution into one large matrix product. The
module-level ``conv1d_forward``/``maxpool_forward`` helpers accept a single
``(channels, length)`` example for convenience.

Each parameterized layer exposes ``parameters()`` and ``gradients()`` as
ordered ``(name, array)`` pairs. ``backward`` writes gradients into those
arrays in place (it does not accumulate), so a model may bind them to views
of one flat vector.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ArgumentError, DimensionError, StateError
from .numerics import DTYPE, as_tensor

SAME = "same"
VALID = "valid"


class Conv1D:
    """1D cross-correlation (no kernel flip) with zero padding.

    ``weight`` has shape ``(out_channels, in_channels, kernel_size)``.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 5,
                 padding: str = SAME, weight=None, bias=None):
        if kernel_size < 1 or in_channels < 1 or out_channels < 1:
            raise ArgumentError("kernel_size and channel counts must be >= 1")
        if padding not in (SAME, VALID):
            raise ArgumentError(f"unknown padding {padding!r}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = padding
        shape = (out_channels, in_channels, kernel_size)
        self.weight = np.zeros(shape, DTYPE) if weight is None else as_tensor(weight)
        self.bias = np.zeros(out_channels, DTYPE) if bias is None else as_tensor(bias)
        if self.weight.shape != shape or self.bias.shape != (out_channels,):
            raise DimensionError(
                f"conv weight {self.weight.shape} / bias {self.bias.shape} "
                f"inconsistent with {in_channels}->{out_channels}, k={kernel_size}")
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self.needs_input_grad = True
        self._cols = None
        self._in_shape = None

    @property
    def pad(self) -> tuple[int, int]:
        if self.padding == VALID:
            return 0, 0
        left = (self.kernel_size - 1) // 2
        return left, self.kernel_size - 1 - left

    def output_length(self, length: int) -> int:
        if self.padding == SAME:
            return length
        return length - self.kernel_size + 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise DimensionError(
                f"conv expects (batch, length, {self.in_channels}), got {x.shape}")
        batch, length, channels = x.shape
        k = self.kernel_size
        if self.padding == VALID and length < k:
            raise DimensionError(f"length {length} shorter than kernel {k} under valid padding")
        left, right = self.pad
        if left or right:
            x = np.pad(x, ((0, 0), (left, right), (0, 0)))
        out_len = x.shape[1] - k + 1
        # (batch, out_len, channels, k) -> rows of (channel, tap) patches
        cols = sliding_window_view(x, k, axis=1).reshape(batch * out_len, channels * k)
        out = cols @ self.weight.reshape(self.out_channels, channels * k).T
        out += self.bias
        self._cols = cols
        self._in_shape = (batch, length, channels)
        return out.reshape(batch, out_len, self.out_channels)

    def backward(self, grad_out: np.ndarray) -> np.ndarray | None:
        if self._cols is None:
            raise StateError("Conv1D.backward called before forward")
        batch, length, channels = self._in_shape
        k = self.kernel_size
        out_len = self._cols.shape[0] // batch
        if grad_out.shape != (batch, out_len, self.out_channels):
            raise DimensionError(
                f"grad_out shape {grad_out.shape} does not match forward output "
                f"{(batch, out_len, self.out_channels)}")
        g = grad_out.reshape(batch * out_len, self.out_channels)
        wmat = self.weight.reshape(self.out_channels, channels * k)
        self.grad_weight[...] = (g.T @ self._cols).reshape(self.weight.shape)
        self.grad_bias[...] = g.sum(axis=0)
        if not self.needs_input_grad:
            return None
        gcols = (g @ wmat).reshape(batch, out_len, channels, k)
        left, _ = self.pad
        gx = np.zeros((batch, out_len + k - 1, channels), DTYPE)
        for j in range(k):
            gx[:, j:j + out_len, :] += gcols[:, :, :, j]
        return gx[:, left:left + length, :]

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def gradients(self):
        return [("weight", self.grad_weight), ("bias", self.grad_bias)]

    def fans(self) -> tuple[int, int]:
        return self.in_channels * self.kernel_size, self.out_channels * self.kernel_size

    def __repr__(self):
        return (f"Conv1D({self.in_channels}->{self.out_channels}, "
                f"k={self.kernel_size}, {self.padding})")


class MaxPool1D:
    """Valid-mode max pooling along the length axis; ties go to the lowest index."""

    def __init__(self, window: int, stride: int = 2):
        if not window >= stride >= 1:
            raise ArgumentError(f"need window >= stride >= 1, got {window}, {stride}")
        self.window = window
        self.stride = stride
        self._argmax = None
        self._in_shape = None

    def output_length(self, length: int) -> int:
        return (length - self.window) // self.stride + 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3:
            raise DimensionError(f"pool expects (batch, length, channels), got {x.shape}")
        length = x.shape[1]
        if length < self.window:
            raise DimensionError(f"length {length} shorter than pool window {self.window}")
        out_len = self.output_length(length)
        span = self.stride * (out_len - 1) + 1
        out = x[:, 0:span:self.stride, :].copy()
        for j in range(1, self.window):
            np.maximum(out, x[:, j:j + span:self.stride, :], out=out)
        # scan offsets high to low so the lowest matching index wins ties
        arg = np.full(out.shape, self.window - 1, np.int8)
        for j in range(self.window - 2, -1, -1):
            np.copyto(arg, j, where=x[:, j:j + span:self.stride, :] == out)
        self._argmax = arg
        self._in_shape = x.shape
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._argmax is None:
            raise StateError("MaxPool1D.backward called before forward")
        if grad_out.shape != self._argmax.shape:
            raise StateError(
                f"stale pool cache: grad_out {grad_out.shape} vs cached {self._argmax.shape}")
        out_len = grad_out.shape[1]
        span = self.stride * (out_len - 1) + 1
        gx = np.zeros(self._in_shape, DTYPE)
        for j in range(self.window):
            gx[:, j:j + span:self.stride, :] += np.where(self._argmax == j, grad_out, 0.0)
        return gx

    def parameters(self):
        return []

    def gradients(self):
        return []

    def __repr__(self):
        return f"MaxPool1D(window={self.window}, stride={self.stride})"


class Dense:
    """Affine map ``x @ weight + bias`` with ``weight`` of shape ``(in, out)``."""

    def __init__(self, in_size: int, out_size: int, weight=None, bias=None):
        if in_size < 1 or out_size < 1:
            raise ArgumentError("dense sizes must be >= 1")
        self.in_size = in_size
        self.out_size = out_size
        self.weight = np.zeros((in_size, out_size), DTYPE) if weight is None else as_tensor(weight)
        self.bias = np.zeros(out_size, DTYPE) if bias is None else as_tensor(bias)
        if self.weight.shape != (in_size, out_size) or self.bias.shape != (out_size,):
            raise DimensionError(
                f"dense weight {self.weight.shape} / bias {self.bias.shape} "
                f"inconsistent with {in_size}->{out_size}")
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_size:
            raise DimensionError(f"dense expects (batch, {self.in_size}), got {x.shape}")
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise StateError("Dense.backward called before forward")
        if grad_out.shape != (self._x.shape[0], self.out_size):
            raise DimensionError(f"grad_out shape {grad_out.shape} does not match forward output")
        self.grad_weight[...] = self._x.T @ grad_out
        self.grad_bias[...] = grad_out.sum(axis=0)
        return grad_out @ self.weight.T

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def gradients(self):
        return [("weight", self.grad_weight), ("bias", self.grad_bias)]

    def fans(self) -> tuple[int, int]:
        return self.in_size, self.out_size

    def __repr__(self):
        return f"Dense({self.in_size}->{self.out_size})"


class ReLU:
    """max(0, x); the derivative at exactly 0 is taken as 0."""

    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out):
        if self._mask is None:
            raise StateError("ReLU.backward called before forward")
        return np.where(self._mask, grad_out, 0.0)

    def parameters(self):
        return []

    def gradients(self):
        return []

    def __repr__(self):
        return "ReLU()"


class Sigmoid:
    def __init__(self):
        self._out = None

    def forward(self, x):
        self._out = expit(x)
        return self._out

    def backward(self, grad_out):
        if self._out is None:
            raise StateError("Sigmoid.backward called before forward")
        return grad_out * self._out * (1.0 - self._out)

    def parameters(self):
        return []

    def gradients(self):
        return []

    def __repr__(self):
        return "Sigmoid()"


class Dropout:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` while training."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ArgumentError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = float(rate)
        self.training = False
        self._mask = None

    def forward(self, x, rng: np.random.Generator | None = None):
        if not self.training or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ArgumentError("training-mode dropout needs a random generator")
        keep = rng.random(x.shape) >= self.rate
        self._mask = keep * (1.0 / (1.0 - self.rate))
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask

    def parameters(self):
        return []

    def gradients(self):
        return []

    def __repr__(self):
        return f"Dropout({self.rate})"


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    return expit(x)


def conv1d_forward(x, layer: Conv1D) -> np.ndarray:
    """Apply ``layer`` to one ``(in_channels, length)`` example."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] != layer.in_channels:
        raise DimensionError(
            f"expected ({layer.in_channels}, length) input, got {x.shape}")
    return layer.forward(x.T[None])[0].T.copy()


def conv1d_backward(grad_out, layer: Conv1D):
    """Backward for :func:`conv1d_forward`; returns ``(grad_x, grad_w, grad_b)``."""
    grad_out = as_tensor(grad_out)
    gx = layer.backward(grad_out.T[None])
    gx = None if gx is None else gx[0].T.copy()
    return gx, layer.grad_weight.copy(), layer.grad_bias.copy()


def maxpool_forward(x, layer: MaxPool1D) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim == 1:
        x = x[None]
    return layer.forward(x.T[None])[0].T.copy()


def maxpool_backward(grad_out, layer: MaxPool1D) -> np.ndarray:
    grad_out = as_tensor(grad_out)
    if grad_out.ndim == 1:
        grad_out = grad_out[None]
    return layer.backward(grad_out.T[None])[0].T.copy()


def dense_forward(x, layer: Dense) -> np.ndarray:
    return layer.forward(as_tensor(x))


def dense_backward(grad_out, layer: Dense):
    gx = layer.backward(as_tensor(grad_out))
    return gx, layer.grad_weight.copy(), layer.grad_bias.copy()


def dropout_apply(x, layer: Dropout, rng: np.random.Generator | None = None):
    return layer.forward(as_tensor(x), rng)
