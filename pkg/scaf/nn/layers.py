"""Layers with explicit forward/backward passes.

Every layer caches what its backward pass needs during ``forward`` and returns
the gradient with respect to its input from ``backward``. Parameter gradients
land in ``layer.grads`` under the same names as ``layer.params``.

Sequence layers use the channels-last layout (batch, length, channels).
"""

from typing import Dict, Optional

import numpy as np

from scaf.errors import DimensionError, RangeError


class Layer:
    """Base layer: no parameters, no state."""

    # names of params that receive L2 weight decay
    decayed: tuple = ()

    def __init__(self) -> None:
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        # non-trainable state saved with the model (batch-norm running stats)
        self.buffers: Dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> str:
        return type(self).__name__


def he_uniform(rng: np.random.Generator, fan_in: int, shape: tuple) -> np.ndarray:
    """U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)); target std sqrt(2 / fan_in)."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Dense(Layer):
    decayed = ("W",)

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: Optional[np.random.Generator] = None,
        zero_init: bool = False,
    ) -> None:
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise RangeError(f"dense layer sizes must be >= 1, got {in_features}x{out_features}")
        if zero_init or rng is None:
            w = np.zeros((in_features, out_features))
        else:
            w = he_uniform(rng, in_features, (in_features, out_features))
        self.params = {"W": w, "b": np.zeros(out_features)}
        self._x: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self.grads["W"] = self._x.T @ grad_out
        self.grads["b"] = grad_out.sum(axis=0)
        return grad_out @ self.params["W"].T

    def describe(self) -> str:
        i, o = self.params["W"].shape
        return f"Dense({i}->{o})"


class BatchNorm1d(Layer):
    """Batch normalization over the batch axis of (batch, features) input.

    Training uses the biased batch variance; running statistics follow
    ``running = momentum * running + (1 - momentum) * batch``.
    """

    def __init__(self, features: int, momentum: float = 0.9, eps: float = 1e-5) -> None:
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params = {"gamma": np.ones(features), "beta": np.zeros(features)}
        self.buffers = {"running_mean": np.zeros(features), "running_var": np.ones(features)}
        self._xhat: Optional[np.ndarray] = None
        self._inv_std: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if training:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * inv_std
            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mu
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var
            self._xhat, self._inv_std = xhat, inv_std
        else:
            inv_std = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            xhat = (x - self.buffers["running_mean"]) * inv_std
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        xhat, inv_std = self._xhat, self._inv_std
        b = grad_out.shape[0]
        self.grads["gamma"] = (grad_out * xhat).sum(axis=0)
        self.grads["beta"] = grad_out.sum(axis=0)
        dxhat = grad_out * self.params["gamma"]
        return (inv_std / b) * (
            b * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )

    def describe(self) -> str:
        return f"BatchNorm({self.params['gamma'].size})"


class ReLU(Layer):
    def __init__(self) -> None:
        super().__init__()
        self._mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad_out, 0.0)


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1 / (1 - rate) at train time.

    Setting ``fixed_mask`` (already scaled) replaces the random draw, which is
    what gradient checks need.
    """

    def __init__(self, rate: float, rng: Optional[np.random.Generator] = None) -> None:
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise RangeError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng()
        self.fixed_mask: Optional[np.ndarray] = None
        self._mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if self.fixed_mask is not None:
            mask = self.fixed_mask
        else:
            mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._mask = mask
        return x * mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out if self._mask is None else grad_out * self._mask

    def describe(self) -> str:
        return f"Dropout({self.rate:g})"


class AddChannel(Layer):
    """(batch, length) -> (batch, length, 1)."""

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        return x[:, :, None]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out[:, :, 0]


class Conv1D(Layer):
    """Valid (unpadded) stride-1 convolution, output length L - K + 1.

    Kernel layout is (K, in_channels, filters); ``out[b, l, f] = sum_k x[b, l + k, :] @ W[k, :, f] + b[f]``.
    """

    decayed = ("W",)

    def __init__(
        self,
        in_channels: int,
        filters: int,
        kernel_size: int,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        super().__init__()
        if kernel_size < 1 or filters < 1 or in_channels < 1:
            raise RangeError("conv layer sizes must be >= 1")
        shape = (kernel_size, in_channels, filters)
        w = np.zeros(shape) if rng is None else he_uniform(rng, kernel_size * in_channels, shape)
        self.params = {"W": w, "b": np.zeros(filters)}
        self._x: Optional[np.ndarray] = None

    @property
    def kernel_size(self) -> int:
        return int(self.params["W"].shape[0])

    def output_length(self, length: int) -> int:
        return length - self.kernel_size + 1

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.params["W"].shape[1]:
            raise DimensionError(f"conv expects (B, L, {self.params['W'].shape[1]}) input, got {x.shape}")
        k_size = self.kernel_size
        out_len = self.output_length(x.shape[1])
        if out_len < 1:
            raise DimensionError(f"input length {x.shape[1]} shorter than kernel {k_size}")
        self._x = x
        w = self.params["W"]
        out = np.zeros((x.shape[0], out_len, w.shape[2]))
        for k in range(k_size):
            out += x[:, k : k + out_len, :] @ w[k]
        return out + self.params["b"]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x, w = self._x, self.params["W"]
        out_len = grad_out.shape[1]
        c, f = w.shape[1], w.shape[2]
        g2 = grad_out.reshape(-1, f)
        dw = np.empty_like(w)
        dx = np.zeros_like(x)
        for k in range(self.kernel_size):
            dw[k] = x[:, k : k + out_len, :].reshape(-1, c).T @ g2
            dx[:, k : k + out_len, :] += grad_out @ w[k].T
        self.grads["W"] = dw
        self.grads["b"] = grad_out.sum(axis=(0, 1))
        return dx

    def describe(self) -> str:
        k, c, f = self.params["W"].shape
        return f"Conv1D({c}->{f}, k={k})"


class MaxPool1D(Layer):
    """Non-overlapping max pooling; the trailing remainder is dropped. Ties go to the first maximum."""

    def __init__(self, pool_size: int) -> None:
        super().__init__()
        if pool_size < 1:
            raise RangeError(f"pool size must be >= 1, got {pool_size}")
        self.pool_size = pool_size
        self._shape: Optional[tuple] = None
        self._argmax: Optional[np.ndarray] = None

    def output_length(self, length: int) -> int:
        return length // self.pool_size

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        b, length, c = x.shape
        out_len = self.output_length(length)
        if out_len < 1:
            raise DimensionError(f"input length {length} shorter than pool size {self.pool_size}")
        windows = x[:, : out_len * self.pool_size, :].reshape(b, out_len, self.pool_size, c)
        self._shape = x.shape
        self._argmax = windows.argmax(axis=2)
        return np.take_along_axis(windows, self._argmax[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        b, length, c = self._shape
        out_len = grad_out.shape[1]
        windows = np.zeros((b, out_len, self.pool_size, c))
        np.put_along_axis(windows, self._argmax[:, :, None, :], grad_out[:, :, None, :], axis=2)
        dx = np.zeros(self._shape)
        dx[:, : out_len * self.pool_size, :] = windows.reshape(b, out_len * self.pool_size, c)
        return dx

    def describe(self) -> str:
        return f"MaxPool1D({self.pool_size})"


class Flatten(Layer):
    def __init__(self) -> None:
        super().__init__()
        self._shape: Optional[tuple] = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._shape)


##### Softmax / cross-entropy #####

# floor applied to the label probability inside the loss
PROB_CLAMP = 1e-12


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean of -ln p[label] over the batch, with p clamped at PROB_CLAMP."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise DimensionError(f"{probs.shape} probabilities for {labels.shape[0]} labels")
    picked = probs[np.arange(labels.shape[0]), labels]
    return float(-np.log(np.maximum(picked, PROB_CLAMP)).mean())


def softmax_cross_entropy_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the logits."""
    grad = probs.copy()
    grad[np.arange(labels.shape[0]), labels] -= 1.0
    return grad / labels.shape[0]
