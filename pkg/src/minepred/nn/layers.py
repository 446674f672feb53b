"""Layers with hand-written backward passes (NHWC tensors).

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``grads`` (same order as ``params``).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


class Layer:
    params: list
    grads: list

    def __init__(self):
        self.params = []
        self.grads = []
        self._cache = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def _require_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a preceding forward pass")
        return self._cache

    def zero_grad(self):
        self.grads = [np.zeros_like(p) for p in self.params]


class Conv2d(Layer):
    """Square-kernel convolution via im2col; weights are ``(k, k, c_in, c_out)``."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 2, padding: int = 1, dtype=np.float32):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.params = [np.zeros((kernel, kernel, c_in, c_out), dtype=dtype), np.zeros(c_out, dtype=dtype)]
        self.zero_grad()
        self.needs_input_grad = True

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x):
        n, h, w, c = x.shape
        if c != self.c_in:
            raise ValueError(f"conv expects {self.c_in} input channels, got {c}")
        k, s, p = self.kernel, self.stride, self.padding
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        ho, wo = self.output_hw(h, w)
        st = xp.strides
        windows = as_strided(xp, (n, ho, wo, k, k, c), (st[0], s * st[1], s * st[2], st[1], st[2], st[3]), writeable=False)
        cols = windows.reshape(n * ho * wo, k * k * c)
        weight, bias = self.params
        out = cols @ weight.reshape(k * k * c, self.c_out) + bias
        self._cache = (cols, x.shape, xp.shape)
        return out.reshape(n, ho, wo, self.c_out)

    def backward(self, grad):
        cols, x_shape, xp_shape = self._require_cache()
        k, s, p = self.kernel, self.stride, self.padding
        weight = self.params[0]
        n, ho, wo, _ = grad.shape
        g2 = grad.reshape(-1, self.c_out)
        self.grads[0] += (cols.T @ g2).reshape(weight.shape)
        self.grads[1] += g2.sum(axis=0)
        if not self.needs_input_grad:
            return None
        dcols = (g2 @ weight.reshape(-1, self.c_out).T).reshape(n, ho, wo, k, k, self.c_in)
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i : i + s * ho : s, j : j + s * wo : s, :] += dcols[:, :, :, i, j, :]
        if p:
            dxp = dxp[:, p:-p, p:-p, :]
        return dxp


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, grad):
        return grad * self._require_cache()


class GlobalAvgPool(Layer):
    def forward(self, x):
        self._cache = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, grad):
        n, h, w, c = self._require_cache()
        return np.broadcast_to(grad[:, None, None, :] / (h * w), (n, h, w, c)).astype(grad.dtype)


class Linear(Layer):
    def __init__(self, n_in: int, n_out: int, dtype=np.float32):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params = [np.zeros((n_in, n_out), dtype=dtype), np.zeros(n_out, dtype=dtype)]
        self.zero_grad()

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"linear layer expects {self.n_in} features, got {x.shape[-1]}")
        self._cache = x
        return x @ self.params[0] + self.params[1]

    def backward(self, grad):
        x = self._require_cache()
        self.grads[0] += x.T @ grad
        self.grads[1] += grad.sum(axis=0)
        return grad @ self.params[0].T


def softmax(logits, axis: int = -1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def he_uniform(rng, shape, fan_in: int, dtype=np.float32):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
