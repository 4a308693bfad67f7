"""Micro layer zoo: linear, conv via im2col, activations, pooling, loss.

Layers hold float32 parameters as plain arrays (the optimizer updates them in
place) and stash whatever the backward needs in a per-step context. GEMM
layers expose their input as the canonical (B, L, I) view the backward
strategies operate on; when the active strategy compresses activations at
forward time, only the compressed form is kept and the raw view is dropped.
"""
from __future__ import annotations

import numpy as np

from ..backprop import BackwardStrategy, acbp_compress, strategy_backward
from ..quantize import RngState
from ..tensor import DTYPE, Tensor


def _he_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(DTYPE)


class GemmLayer:
    """Shared machinery for layers whose backward is the strategy dispatch."""

    def __init__(self):
        self.w: np.ndarray | None = None
        self.b: np.ndarray | None = None
        self.grad_w: np.ndarray | None = None
        self.grad_b: np.ndarray | None = None
        self.strategy_override: str | None = None
        self.calib_sink = None  # callable fed the (B, L, O) upstream gradient
        self._ctx = None

    def parameters(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out

    def gradients(self):
        out = [self.grad_w]
        if self.b is not None:
            out.append(self.grad_b)
        return out

    def _store_forward(self, x3: np.ndarray, strategy: BackwardStrategy | None,
                       rng: RngState | None):
        if strategy is not None and strategy.uses_compressed_activation:
            self._ctx = acbp_compress(
                Tensor(x3), strategy.plan,
                bits=strategy.grad_weight_path.bits or 8,
                rng=None if rng is None else rng.split(0),
                pad_small_axes=strategy.pad_small_axes)
        else:
            self._ctx = Tensor(x3)

    def _strategy_backward(self, gy3: np.ndarray, strategy: BackwardStrategy,
                           rng: RngState | None, B: int):
        if self._ctx is None:
            raise RuntimeError("backward called before forward")
        if self.calib_sink is not None:
            self.calib_sink(gy3)
        gp = strategy_backward(self._ctx, Tensor(self.w), Tensor(gy3), strategy,
                               rng=None if rng is None else rng.split(1))
        self.grad_w = gp.grad_weight.data
        if self.b is not None:
            self.grad_b = (gy3.sum(axis=(0, 1), dtype=np.float64) / B).astype(DTYPE)
        self._ctx = None
        return gp.grad_input.data


class Linear(GemmLayer):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.w = _he_init(rng, in_features, (out_features, in_features))
        self.b = np.zeros(out_features, dtype=DTYPE) if bias else None

    def forward(self, x: np.ndarray, strategy=None, rng=None, train=True) -> np.ndarray:
        y = x @ self.w.T
        if self.b is not None:
            y = y + self.b
        if train:
            self._store_forward(x[:, None, :], strategy, rng)
        return y

    def backward(self, gy: np.ndarray, strategy: BackwardStrategy, rng=None) -> np.ndarray:
        B = gy.shape[0]
        gx3 = self._strategy_backward(gy[:, None, :], strategy, rng, B)
        return gx3[:, 0, :]


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """(B, C, H, W) -> (B, Ho*Wo, C*kh*kw) patches plus the output extent."""
    B, C, H, W = x.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((B, C, kh, kw, Ho, Wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(B, Ho * Wo, C * kh * kw), (Ho, Wo)


def col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add inverse of im2col."""
    B, C, H, W = x_shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    c6 = cols.reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += c6[:, :, i, j]
    if pad == 0:
        return xp
    return np.ascontiguousarray(xp[:, :, pad:pad + H, pad:pad + W])


class Conv2d(GemmLayer):
    """Convolution lowered to a matmul: L = Ho*Wo, I = C_in*kh*kw."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 stride: int = 1, pad: int = 1, bias: bool = True,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel, self.stride, self.pad = kernel, stride, pad
        fan_in = in_channels * kernel * kernel
        self.w = _he_init(rng, fan_in, (out_channels, fan_in))
        self.b = np.zeros(out_channels, dtype=DTYPE) if bias else None
        self._x_shape = None
        self._out_hw = None

    def forward(self, x: np.ndarray, strategy=None, rng=None, train=True) -> np.ndarray:
        B = x.shape[0]
        cols, (Ho, Wo) = im2col(x, self.kernel, self.kernel, self.stride, self.pad)
        y = cols.reshape(-1, cols.shape[-1]) @ self.w.T
        if self.b is not None:
            y = y + self.b
        self._x_shape = x.shape
        self._out_hw = (Ho, Wo)
        if train:
            self._store_forward(cols, strategy, rng)
        return y.reshape(B, Ho, Wo, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, gy: np.ndarray, strategy: BackwardStrategy, rng=None) -> np.ndarray:
        B = gy.shape[0]
        Ho, Wo = self._out_hw
        gy3 = np.ascontiguousarray(gy.transpose(0, 2, 3, 1).reshape(B, Ho * Wo, -1))
        gcols = self._strategy_backward(gy3, strategy, rng, B)
        return col2im(gcols, self._x_shape, self.kernel, self.kernel, self.stride, self.pad)


class ReLU:
    def __init__(self):
        self._mask = None

    def parameters(self):
        return []

    def forward(self, x, train=True):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, gy):
        return gy * self._mask


class Tanh:
    def __init__(self):
        self._y = None

    def parameters(self):
        return []

    def forward(self, x, train=True):
        y = np.tanh(x)
        if train:
            self._y = y
        return y

    def backward(self, gy):
        return gy * (1 - self._y * self._y)


class MaxPool2d:
    """2x2, stride 2; gradient routes to the first argmax on ties."""

    def __init__(self):
        self._idx = None
        self._shape = None

    def parameters(self):
        return []

    def forward(self, x, train=True):
        B, C, H, W = x.shape
        xr = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        flat = np.ascontiguousarray(xr).reshape(B, C, H // 2, W // 2, 4)
        idx = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        if train:
            self._idx = idx
            self._shape = (B, C, H, W)
        return y

    def backward(self, gy):
        B, C, H, W = self._shape
        flat = np.zeros((B, C, H // 2, W // 2, 4), dtype=gy.dtype)
        np.put_along_axis(flat, self._idx[..., None], gy[..., None], axis=-1)
        xr = flat.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return np.ascontiguousarray(xr).reshape(B, C, H, W)


class Flatten:
    def __init__(self):
        self._shape = None

    def parameters(self):
        return []

    def forward(self, x, train=True):
        if train:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gy):
        return gy.reshape(self._shape)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and the per-sample logit gradient (no 1/B factor:
    the layer backward applies the batch mean on the weight path)."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = float(-np.log(np.clip(p[np.arange(n), labels], 1e-30, None)).mean())
    grad = p.astype(DTYPE)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad
