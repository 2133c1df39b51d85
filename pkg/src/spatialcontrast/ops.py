"""Layer kernels on NHWC tensors.

Convolution and pooling go through a strided window view (im2col); the
matrix products run in the storage dtype so float32 training uses the fast
BLAS path. Batch statistics and the softmax loss accumulate in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, StateError
from .tensor import Function, Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
DEFAULT_LEAKY_SLOPE = 0.1


def _out_size(n: int, k: int, stride: int, pad: int = 0) -> int:
    return (n + 2 * pad - k) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """View of shape (N, H', W', C, kh, kw) over an NHWC array."""
    v = sliding_window_view(x, (kh, kw), axis=(1, 2))
    return v[:, ::stride, ::stride]


def _col2im(dcols: np.ndarray, padded_shape, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # dcols: (N, H', W', kh, kw, C)
    dx = np.zeros(padded_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[:, :, :, i, j, :]
    return dx


# -- conv2d ---------------------------------------------------------------


class Conv2d(Function):
    def forward(self, x, w, b, stride=1, padding=0):
        if x.ndim != 4 or w.ndim != 4:
            raise DimensionError(f"conv2d expects NHWC input and (kH,kW,Cin,Cout) weight, got {x.shape} and {w.shape}")
        n, h, wd, cin = x.shape
        kh, kw, wcin, cout = w.shape
        if wcin != cin:
            raise DimensionError(f"conv2d channel mismatch: input axis 3 has {cin}, weight axis 2 has {wcin}")
        if b.shape != (cout,):
            raise DimensionError(f"conv2d bias shape {b.shape} does not match Cout={cout}")
        if stride < 1 or padding < 0:
            raise DimensionError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
        if kh > h + 2 * padding or kw > wd + 2 * padding:
            raise DimensionError(
                f"conv2d kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{wd + 2 * padding} (axes 1, 2)"
            )
        if padding:
            x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
        ho, wo = _out_size(h, kh, stride, padding), _out_size(wd, kw, stride, padding)
        # (N,H',W',C,kh,kw) -> (N,H',W',kh,kw,C), contiguous rows for the GEMM
        cols = _windows(x, kh, kw, stride).transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
        out = cols @ w.reshape(kh * kw * cin, cout) + b
        self.cols, self.w, self.geom = cols, w, (x.shape, kh, kw, stride, padding, ho, wo)
        return out.reshape(n, ho, wo, cout)

    def backward(self, g):
        padded_shape, kh, kw, stride, padding, ho, wo = self.geom
        n, cin, cout = padded_shape[0], padded_shape[3], self.w.shape[3]
        g2 = g.reshape(-1, cout)
        dw = (self.cols.T @ g2).reshape(self.w.shape)
        db = g2.sum(axis=0)
        dx = None
        if self.inputs[0].requires_grad:
            dcols = (g2 @ self.w.reshape(-1, cout).T).reshape(n, ho, wo, kh, kw, cin)
            dx = _col2im(dcols, padded_shape, kh, kw, stride, ho, wo)
            if padding:
                dx = dx[:, padding:-padding, padding:-padding, :]
        return dx, dw, db


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip) of an NHWC input with a (kH,kW,Cin,Cout) filter bank."""
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding)


# -- max pooling ----------------------------------------------------------


class MaxPool2d(Function):
    def forward(self, x, window=2, stride=2):
        if x.ndim != 4:
            raise DimensionError(f"maxpool2d expects NHWC input, got shape {x.shape}")
        if window < 1 or stride < 1:
            raise DimensionError(f"maxpool2d needs positive window and stride, got {window}, {stride}")
        n, h, w, c = x.shape
        if window > h or window > w:
            raise DimensionError(f"maxpool2d window {window} exceeds input spatial extent {h}x{w} (axes 1, 2)")
        ho, wo = _out_size(h, window, stride), _out_size(w, window, stride)
        win = _windows(x, window, window, stride).reshape(n, ho, wo, c, window * window)
        # argmax returns the first maximum in row-major window order
        idx = win.argmax(axis=-1)
        self.idx, self.geom = idx, (x.shape, window, stride, ho, wo)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, g):
        shape, k, stride, ho, wo = self.geom
        dx = np.zeros(shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                hit = self.idx == i * k + j
                if hit.any():
                    dx[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += np.where(hit, g, 0)
        return dx


def maxpool2d(x: Tensor, window: int, stride: int) -> Tensor:
    return MaxPool2d.apply(x, window=window, stride=stride)


# -- batch normalization --------------------------------------------------


@dataclass
class BatchNormState:
    """Running per-channel moments, updated in training mode."""

    channels: int
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS
    mean: np.ndarray | None = None
    var: np.ndarray | None = None
    steps: int = 0

    def reset(self) -> None:
        self.mean = self.var = None
        self.steps = 0


class BatchNorm(Function):
    def forward(self, x, gamma, beta, state: BatchNormState, train: bool):
        c = x.shape[-1]
        if gamma.shape != (c,) or beta.shape != (c,):
            raise DimensionError(
                f"batchnorm gamma/beta shapes {gamma.shape}/{beta.shape} do not match channel extent {c}"
            )
        axes = tuple(range(x.ndim - 1))
        if train:
            x64 = x.astype(np.float64)
            mean = x64.mean(axis=axes)
            var = x64.var(axis=axes)
            m = state.momentum
            # running moments are stored as float32 so checkpoints round-trip exactly
            if state.mean is None:
                state.mean, state.var = mean.astype(np.float32), var.astype(np.float32)
            else:
                state.mean = ((1 - m) * state.mean + m * mean).astype(np.float32)
                state.var = ((1 - m) * state.var + m * var).astype(np.float32)
            state.steps += 1
        else:
            if state.mean is None:
                raise StateError("batchnorm in eval mode before any training step: running moments are uninitialized")
            mean, var = state.mean, state.var
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x - mean) * inv_std
        self.xhat, self.inv_std, self.gamma, self.train, self.axes = xhat, inv_std, gamma, train, axes
        return (gamma * xhat + beta).astype(x.dtype)

    def backward(self, g):
        axes = self.axes
        g64 = g.astype(np.float64)
        dgamma = (g64 * self.xhat).sum(axis=axes)
        dbeta = g64.sum(axis=axes)
        dxhat = g64 * self.gamma
        if self.train:
            m = g.size // g.shape[-1]
            dx = (self.inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - self.xhat * (dxhat * self.xhat).sum(axis=axes))
        else:
            dx = dxhat * self.inv_std
        dt = self.inputs[0].dtype
        return dx.astype(dt), dgamma.astype(self.inputs[1].dtype), dbeta.astype(self.inputs[2].dtype)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, train: bool = True) -> Tensor:
    """Per-channel normalization over every axis but the last.

    Training mode normalizes with the batch moments and folds them into
    ``state`` with momentum ``state.momentum``; eval mode uses the stored
    running moments.
    """
    return BatchNorm.apply(x, gamma, beta, state=state, train=train)


# -- activations ----------------------------------------------------------


class LeakyReLU(Function):
    def forward(self, x, slope=0.0):
        if not 0.0 <= slope < 1.0:
            raise DimensionError(f"leaky_relu slope must lie in [0, 1), got {slope}")
        # x == 0 takes the negative-side slope
        self.scale = np.where(x > 0, 1.0, slope).astype(x.dtype)
        return x * self.scale

    def backward(self, g):
        return g * self.scale


def leaky_relu(x: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    return LeakyReLU.apply(x, slope=slope)


def relu(x: Tensor) -> Tensor:
    return LeakyReLU.apply(x, slope=0.0)


# -- affine / pooling / dropout -------------------------------------------


class Affine(Function):
    def forward(self, x, w, b):
        if x.ndim != 2 or w.ndim != 2:
            raise DimensionError(f"affine expects (N,D) input and (D,K) weight, got {x.shape} and {w.shape}")
        if x.shape[1] != w.shape[0]:
            raise DimensionError(f"affine inner dimension mismatch: input axis 1 has {x.shape[1]}, weight axis 0 has {w.shape[0]}")
        if b.shape != (w.shape[1],):
            raise DimensionError(f"affine bias shape {b.shape} does not match K={w.shape[1]}")
        self.x, self.w = x, w
        return x @ w + b

    def backward(self, g):
        return g @ self.w.T, self.x.T @ g, g.sum(axis=0)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return Affine.apply(x, weight, bias)


class Dropout(Function):
    def forward(self, x, p, rng):
        self.mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
        return x * self.mask

    def backward(self, g):
        return g * self.mask


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise DimensionError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise StateError("dropout in training mode needs an explicit rng stream")
    return Dropout.apply(x, p=p, rng=rng)


class GlobalAvgPool(Function):
    def forward(self, x):
        if x.ndim != 4:
            raise DimensionError(f"global_avg_pool expects NHWC input, got shape {x.shape}")
        self.shape = x.shape
        return x.mean(axis=(1, 2), dtype=np.float64).astype(x.dtype)

    def backward(self, g):
        n, h, w, c = self.shape
        return np.broadcast_to(g[:, None, None, :] / (h * w), self.shape).astype(g.dtype)


def global_avg_pool(x: Tensor) -> Tensor:
    return GlobalAvgPool.apply(x)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the batch axis (row-major: H, then W, then C)."""
    return x.reshape(x.shape[0], -1)


# -- softmax cross-entropy ------------------------------------------------


class LogSoftmaxCrossEntropy(Function):
    def forward(self, logits, labels):
        if logits.ndim != 2:
            raise DimensionError(f"cross-entropy expects (N,K) logits, got {logits.shape}")
        labels = np.asarray(labels, dtype=np.int64)
        n, k = logits.shape
        if labels.shape != (n,):
            raise DimensionError(f"labels shape {labels.shape} does not match batch size {n}")
        if n == 0:
            raise DimensionError("cross-entropy over an empty batch")
        if labels.min() < 0 or labels.max() >= k:
            raise DimensionError(f"label out of range [0, {k}): min {labels.min()}, max {labels.max()}")
        z = logits.astype(np.float64)
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        self.p, self.labels = np.exp(logp), labels
        return np.asarray(-logp[np.arange(n), labels].mean())

    def backward(self, g):
        n = self.p.shape[0]
        d = self.p.copy()
        d[np.arange(n), self.labels] -= 1.0
        return (d * (float(g) / n)).astype(self.inputs[0].dtype)


def log_softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true class; returns a float64 scalar."""
    return LogSoftmaxCrossEntropy.apply(logits, labels=labels)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
