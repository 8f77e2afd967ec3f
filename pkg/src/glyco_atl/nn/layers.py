"""Differentiable layers for the 1-D convolutional forecaster.

Exactly the layer set the model needs: valid (no padding, stride 1)
1-D convolution with cross-correlation semantics, ReLU, per-channel batch
normalization, inverted dropout, a dense affine map, and the gradient
reversal layer used for adversarial domain training.

Conventions:
  - activations are float64 arrays shaped (batch, channels, length),
    except Affine which takes (batch, features);
  - forward caches whatever backward needs; backward returns the gradient
    w.r.t. the layer input and stores parameter gradients on the layer;
  - layers that need randomness (dropout) receive a Generator explicitly,
    so a layer instance holds no RNG state of its own.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    """Common parameter bookkeeping; concrete layers override forward/backward."""

    def parameters(self) -> dict[str, np.ndarray]:
        return {}

    def gradients(self) -> dict[str, np.ndarray]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def zero_grad(self):
        for g in self.gradients().values():
            g.fill(0.0)


def _uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv1d(Layer):
    """Valid cross-correlation, stride 1: out[b,o,t] = sum_{i,k} x[b,i,t+k] w[o,i,k] + b[o]."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.weight = _uniform_fan_in(rng, (out_channels, in_channels, kernel_size),
                                      in_channels * kernel_size)
        self.bias = np.zeros(out_channels)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cache = None

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def gradients(self):
        return {"weight": self.grad_weight, "bias": self.grad_bias}

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        batch, channels, length = x.shape
        if channels != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {channels}")
        if self.kernel_size > length:
            raise ValueError(f"kernel {self.kernel_size} longer than input {length}")
        out_length = length - self.kernel_size + 1
        # im2col: (B, L_out, C_in*K) rows against (C_out, C_in*K) kernels
        windows = sliding_window_view(x, self.kernel_size, axis=2)  # (B, C_in, L_out, K)
        cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(
            batch * out_length, channels * self.kernel_size)
        flat_w = self.weight.reshape(self.out_channels, -1)
        out = (cols @ flat_w.T).reshape(batch, out_length, self.out_channels)
        out = out.transpose(0, 2, 1) + self.bias[None, :, None]
        self._cache = (cols, x.shape)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        cols, (batch, channels, length) = self._cache
        out_length = length - self.kernel_size + 1
        g = np.ascontiguousarray(grad_out.transpose(0, 2, 1)).reshape(
            batch * out_length, self.out_channels)
        self.grad_bias += g.sum(axis=0)
        self.grad_weight += (g.T @ cols).reshape(self.weight.shape)
        # full correlation of grad_out with the flipped kernel gives grad_in
        pad = self.kernel_size - 1
        g_pad = np.zeros((batch, self.out_channels, out_length + 2 * pad))
        g_pad[:, :, pad:pad + out_length] = grad_out
        g_windows = sliding_window_view(g_pad, self.kernel_size, axis=2)  # (B, C_out, L, K)
        g_cols = np.ascontiguousarray(g_windows.transpose(0, 2, 1, 3)).reshape(
            batch * length, self.out_channels * self.kernel_size)
        w_flip = np.ascontiguousarray(
            self.weight[:, :, ::-1].transpose(1, 0, 2)).reshape(channels, -1)
        grad_in = (g_cols @ w_flip.T).reshape(batch, length, channels).transpose(0, 2, 1)
        return grad_in


class Affine(Layer):
    """Dense map on (batch, features): y = x W^T + b."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = _uniform_fan_in(rng, (out_features, in_features), in_features)
        self.bias = np.zeros(out_features)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cache = None

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def gradients(self):
        return {"weight": self.grad_weight, "bias": self.grad_bias}

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        self._cache = x
        return x @ self.weight.T + self.bias

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x = self._cache
        self.grad_weight += grad_out.T @ x
        self.grad_bias += grad_out.sum(axis=0)
        return grad_out @ self.weight


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad_out, 0.0)


class BatchNorm1d(Layer):
    """Per-channel normalization over (batch, length).

    Train mode normalizes with the biased batch statistics and updates the
    running estimates by an exponential moving average; eval mode applies
    the running estimates, making it a deterministic pure function.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.grad_gamma = np.zeros_like(self.gamma)
        self.grad_beta = np.zeros_like(self.beta)
        self._cache = None

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def gradients(self):
        return {"gamma": self.grad_gamma, "beta": self.grad_beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        if train:
            if x.shape[0] < 2:
                raise ValueError("batchnorm needs batch >= 2 in train mode")
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean[None, :, None]) * inv_std[None, :, None]
        self._cache = (x_hat, inv_std, train)
        return self.gamma[None, :, None] * x_hat + self.beta[None, :, None]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x_hat, inv_std, train = self._cache
        self.grad_gamma += (grad_out * x_hat).sum(axis=(0, 2))
        self.grad_beta += grad_out.sum(axis=(0, 2))
        g_hat = grad_out * self.gamma[None, :, None]
        if not train:
            return g_hat * inv_std[None, :, None]
        mean_g = g_hat.mean(axis=(0, 2), keepdims=True)
        mean_gx = (g_hat * x_hat).mean(axis=(0, 2), keepdims=True)
        return inv_std[None, :, None] * (g_hat - mean_g - x_hat * mean_gx)


class Dropout(Layer):
    """Inverted dropout: zero with probability p in train mode, rescale survivors."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("train-mode dropout requires a random generator")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return grad_out
        return grad_out * self._mask


class GradientReversal(Layer):
    """Identity forward; backward multiplies the upstream gradient by -weight.

    Placing it between the feature extractor and the domain classifier makes
    the extractor ascend the domain loss the classifier descends, with the
    weight balancing that adversarial pull. Weight 0 detaches the classifier.
    """

    def __init__(self, weight: float):
        if weight < 0:
            raise ValueError("reversal weight must be >= 0")
        self.weight = float(weight)

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return -self.weight * grad_out
