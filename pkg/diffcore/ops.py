"""
Differentiable layer operations for single samples (no batch axis).

Feature maps are C×H×W, dense features are flat vectors. Convolution is
cross-correlation (no kernel flip) computed with a strided im2col view.
"""

from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from diffcore.tensor import Function, Tensor
from utils.errors import ShapeError

CE_PROBABILITY_FLOOR = 1e-12


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Conv2d(Function):
    def forward(self, x, w, b, stride=1, padding=0):
        self.stride, self.padding = stride, padding
        if padding:
            x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
        channels, height, width = x.shape
        out_channels, _, k, _ = w.shape
        out_h = (height - k) // stride + 1
        out_w = (width - k) // stride + 1

        windows = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :out_h, :out_w]
        cols = windows.transpose(1, 2, 0, 3, 4).reshape(out_h * out_w, channels * k * k)
        out = (cols @ w.reshape(out_channels, -1).T).T.reshape(out_channels, out_h, out_w)

        self.cols = cols
        self.padded_shape = x.shape
        self.weights = w
        self.out_hw = (out_h, out_w)
        return out + b[:, None, None]

    def backward(self, grad):
        w = self.weights
        out_channels, channels, k, _ = w.shape
        out_h, out_w = self.out_hw
        s, p = self.stride, self.padding

        g2 = grad.reshape(out_channels, out_h * out_w)
        dw = (g2 @ self.cols).reshape(w.shape)
        db = grad.sum(axis=(1, 2))

        dcols = (w.reshape(out_channels, -1).T @ g2).reshape(channels, k, k, out_h, out_w)
        dx = np.zeros(self.padded_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s] += dcols[:, i, j]
        if p:
            dx = dx[:, p:-p, p:-p]
        return dx, dw, db


def conv2d(input: Tensor, weights: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    if input.ndim != 3 or weights.ndim != 4:
        raise ShapeError(f"conv2d expects C×H×W input and O×C×K×K weights, got {input.shape} and {weights.shape}")
    out_channels, in_channels, k, k2 = weights.shape
    if in_channels != input.shape[0]:
        raise ShapeError(
            f"conv2d channel mismatch: input has {input.shape[0]} channels, weights expect {in_channels}"
        )
    if k != k2:
        raise ShapeError(f"conv2d needs square kernels, got {k}×{k2}")
    if bias.shape != (out_channels,):
        raise ShapeError(f"conv2d bias must have shape ({out_channels},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d stride must be >= 1 and padding >= 0, got {stride}/{padding}")
    _, height, width = input.shape
    if height + 2 * padding < k or width + 2 * padding < k:
        raise ShapeError(f"conv2d kernel {k} larger than padded input {input.shape}")
    return Conv2d.apply(input, weights, bias, stride=stride, padding=padding)


class MaxPool2d(Function):
    def forward(self, x, window):
        channels, height, width = x.shape
        out_h, out_w = height // window, width // window
        blocks = (
            x.reshape(channels, out_h, window, out_w, window)
            .transpose(0, 1, 3, 2, 4)
            .reshape(channels, out_h, out_w, window * window)
        )
        # argmax picks the first maximum in row-major window order
        self.index = blocks.argmax(axis=-1)
        self.window = window
        self.in_shape = x.shape
        return np.take_along_axis(blocks, self.index[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        channels, height, width = self.in_shape
        w = self.window
        out_h, out_w = height // w, width // w
        routed = np.zeros((channels, out_h, out_w, w * w), dtype=grad.dtype)
        np.put_along_axis(routed, self.index[..., None], grad[..., None], axis=-1)
        dx = routed.reshape(channels, out_h, out_w, w, w).transpose(0, 1, 3, 2, 4).reshape(self.in_shape)
        return (dx,)


def maxpool2d(input: Tensor, window: int) -> Tensor:
    if input.ndim != 3:
        raise ShapeError(f"maxpool2d expects C×H×W input, got {input.shape}")
    _, height, width = input.shape
    if window < 1 or height % window or width % window:
        raise ShapeError(f"maxpool2d window {window} does not divide extents {height}×{width}")
    return MaxPool2d.apply(input, window=window)


def global_maxpool(input: Tensor) -> Tensor:
    """C×H×W -> flat C vector of per-channel maxima (square maps only)"""
    _, height, width = input.shape
    if height != width:
        raise ShapeError(f"global max-pool needs a square map, got {height}×{width}")
    return flatten(maxpool2d(input, height))


class Upsample2x(Function):
    def forward(self, x):
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def backward(self, grad):
        channels, height, width = grad.shape
        return (grad.reshape(channels, height // 2, 2, width // 2, 2).sum(axis=(2, 4)),)


def upsample2x(input: Tensor) -> Tensor:
    if input.ndim != 3:
        raise ShapeError(f"upsample2x expects C×H×W input, got {input.shape}")
    return Upsample2x.apply(input)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, np.zeros_like(x))

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, x):
        e = np.exp(-np.abs(x))
        out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
        # keep probabilities strictly inside (0, 1) at the working precision
        info = np.finfo(x.dtype)
        self.out = np.clip(out, info.tiny, 1.0 - info.epsneg)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Softmax(Function):
    # evaluated in double precision so the distribution sums to 1 within 1e-9
    def forward(self, x):
        self.in_dtype = x.dtype
        shifted = np.exp(x.astype(np.float64) - x.max())
        self.out = shifted / shifted.sum()
        return self.out

    def backward(self, grad):
        grad = grad.astype(np.float64)
        return ((self.out * (grad - np.dot(grad, self.out))).astype(self.in_dtype),)


def activation(kind: str, input: Tensor) -> Tensor:
    if kind == "relu":
        return ReLU.apply(input)
    if kind == "sigmoid":
        return Sigmoid.apply(input)
    if kind == "softmax":
        if input.ndim != 1:
            raise ShapeError(f"softmax is defined on flat vectors only, got shape {input.shape}")
        return Softmax.apply(input)
    raise ValueError(f"unknown activation {kind!r}")


def relu(input: Tensor) -> Tensor:
    return activation("relu", input)


def sigmoid(input: Tensor) -> Tensor:
    return activation("sigmoid", input)


def softmax(input: Tensor) -> Tensor:
    return activation("softmax", input)


class ConcatChannels(Function):
    def forward(self, a, b):
        self.split = a.shape[0]
        return np.concatenate([a, b], axis=0)

    def backward(self, grad):
        return grad[:self.split], grad[self.split:]


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels spatial mismatch: {a.shape} vs {b.shape}")
    return ConcatChannels.apply(a, b)


class SliceChannels(Function):
    def forward(self, x, start, stop):
        self.in_shape, self.start, self.stop = x.shape, start, stop
        return x[start:stop].copy()

    def backward(self, grad):
        dx = np.zeros(self.in_shape, dtype=grad.dtype)
        dx[self.start:self.stop] = grad
        return (dx,)


def slice_channels(input: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= input.shape[0]:
        raise ShapeError(f"channel slice [{start}, {stop}) out of range for {input.shape}")
    return SliceChannels.apply(input, start=start, stop=stop)


class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return Add.apply(a, b)


class Scale(Function):
    def forward(self, x, factor):
        self.factor = factor
        return x * np.asarray(factor, dtype=x.dtype)

    def backward(self, grad):
        return (grad * np.asarray(self.factor, dtype=grad.dtype),)


def scale(input: Tensor, factor: float) -> Tensor:
    return Scale.apply(_as_tensor(input), factor=float(factor))


class SumAll(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad):
        return (np.broadcast_to(grad, self.in_shape).copy(),)


def sum_all(input: Tensor) -> Tensor:
    return SumAll.apply(_as_tensor(input))


class Reshape(Function):
    def forward(self, x, shape):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


def reshape(input: Tensor, shape: Tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != input.size:
        raise ShapeError(f"cannot reshape {input.shape} into {shape}")
    return Reshape.apply(input, shape=tuple(shape))


def flatten(input: Tensor) -> Tensor:
    return reshape(input, (input.size,))


class Dense(Function):
    def forward(self, x, w, b):
        self.x, self.w = x, w
        return w @ x + b

    def backward(self, grad):
        return self.w.T @ grad, np.outer(grad, self.x), grad


def dense(input: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    if input.ndim != 1:
        raise ShapeError(f"dense expects a flat input, got shape {input.shape}")
    if weights.ndim != 2 or weights.shape[1] != input.shape[0]:
        raise ShapeError(f"dense dimension mismatch: weights {weights.shape} vs input {input.shape}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"dense bias must have shape ({weights.shape[0]},), got {bias.shape}")
    return Dense.apply(input, weights, bias)


class SoftDiceLoss(Function):
    """
    1 - 2·Σ w·g·s / (Σ w·g + Σ w·s) over the probability map s
    """

    def forward(self, s, target, weights):
        self.target = target.astype(s.dtype, copy=False)
        self.weights = weights.astype(s.dtype, copy=False)
        wg = self.weights * self.target
        self.wg = wg
        overlap = np.sum(wg * s)
        denominator = np.sum(wg) + np.sum(self.weights * s)
        self.overlap, self.denominator = overlap, denominator
        if denominator == 0:
            # empty target and empty prediction agree perfectly
            return np.asarray(0.0, dtype=s.dtype)
        return np.asarray(1.0 - 2.0 * overlap / denominator, dtype=s.dtype)

    def backward(self, grad):
        if self.denominator == 0:
            return (np.zeros_like(self.weights) * grad,)
        d = self.denominator
        d_dice = 2.0 * self.wg / d - 2.0 * self.overlap * self.weights / (d * d)
        return (-grad * d_dice,)


def soft_dice_loss(probs: Tensor, target: np.ndarray, weights: Optional[np.ndarray] = None) -> Tensor:
    target = np.asarray(target)
    if target.shape != probs.shape[-2:] and target.shape != probs.shape:
        raise ShapeError(f"soft dice extent mismatch: target {target.shape} vs prediction {probs.shape}")
    target = np.broadcast_to(target, probs.shape)
    if weights is None:
        weights = np.ones(probs.shape, dtype=probs.dtype)
    weights = np.broadcast_to(np.asarray(weights), probs.shape)
    return SoftDiceLoss.apply(probs, target=target, weights=weights)


class NegativeLogLikelihood(Function):
    def forward(self, p, index):
        self.index = index
        self.p = p
        self.floored = float(p[index]) < CE_PROBABILITY_FLOOR
        self.clamped = max(float(p[index]), CE_PROBABILITY_FLOOR)
        return np.asarray(-np.log(self.clamped), dtype=p.dtype)

    def backward(self, grad):
        dp = np.zeros_like(self.p)
        # the floor is a constant, so no gradient flows while it is active
        if not self.floored:
            dp[self.index] = -grad / self.clamped
        return (dp,)


def negative_log_likelihood(probs: Tensor, index: int) -> Tensor:
    if probs.ndim != 1:
        raise ShapeError(f"class probabilities must be a flat vector, got {probs.shape}")
    if not 0 <= index < probs.shape[0]:
        raise ValueError(f"class index {index} outside [0, {probs.shape[0]})")
    return NegativeLogLikelihood.apply(probs, index=int(index))
