"""Layers for the window CNN: forward/backward on NCHW numpy arrays.

Each layer caches what its backward pass needs during a training-mode
forward. Gradients accumulate into ``layer.grads`` (same keys as
``layer.params``) and are reset by :meth:`Layer.zero_grad`.
"""
from __future__ import annotations

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def init(self, in_shape, rng, dtype):
        """Create parameters for a per-sample input shape; return the output shape."""
        return in_shape

    def zero_grad(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called without a training-mode forward")
        return self._cache

    def astype(self, dtype):
        for d in (self.params, self.buffers, self.grads):
            for k in d:
                d[k] = d[k].astype(dtype)
        return self


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero padding 1 (spatial size preserved)."""
    kind = "conv3x3"

    def __init__(self, filters):
        super().__init__()
        self.filters = int(filters)

    def init(self, in_shape, rng, dtype):
        if len(in_shape) != 3:
            raise ShapeError(f"conv3x3 expects (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        bound = 1.0 / 9.0
        self.params["weight"] = rng.uniform(-bound, bound, (self.filters, c, 3, 3)).astype(dtype)
        self.params["bias"] = np.zeros(self.filters, dtype=dtype)
        self.zero_grad()
        return (self.filters, h, w)

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        wt = self.params["weight"]
        if c != wt.shape[1]:
            raise ShapeError(f"conv3x3: expected {wt.shape[1]} input channels, got {c}")
        cols = kernels.im2col3x3(np.ascontiguousarray(x))
        out = cols @ wt.reshape(self.filters, -1).T + self.params["bias"]
        if train:
            self._cache = (cols, x.shape)
        return np.ascontiguousarray(out.reshape(n, h, w, self.filters).transpose(0, 3, 1, 2))

    def backward(self, dout):
        cols, (n, c, h, w) = self._cached()
        d = dout.transpose(0, 2, 3, 1).reshape(-1, self.filters)
        wt = self.params["weight"]
        self.grads["weight"] += (d.T @ cols).reshape(wt.shape)
        self.grads["bias"] += d.sum(axis=0)
        dcols = np.ascontiguousarray(d @ wt.reshape(self.filters, -1))
        return kernels.col2im3x3(dcols, n, c, h, w)


class Dense(Layer):
    kind = "dense"

    def __init__(self, units):
        super().__init__()
        self.units = int(units)

    def init(self, in_shape, rng, dtype):
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects a flat input, got {in_shape}")
        fan_in = in_shape[0]
        bound = 1.0 / fan_in
        self.params["weight"] = rng.uniform(-bound, bound, (fan_in, self.units)).astype(dtype)
        self.params["bias"] = np.zeros(self.units, dtype=dtype)
        self.zero_grad()
        return (self.units,)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.params["weight"].shape[0]:
            raise ShapeError(f"dense: expected (N, {self.params['weight'].shape[0]}), got {x.shape}")
        if train:
            self._cache = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dout):
        x = self._cached()
        self.grads["weight"] += x.T @ dout
        self.grads["bias"] += dout.sum(axis=0)
        return dout @ self.params["weight"].T


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        if train:
            self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        return dout * self._cached()


class MaxPool2(Layer):
    """2x2 max pooling with stride 2; odd sizes round up so no dimension vanishes."""
    kind = "maxpool2"

    def init(self, in_shape, rng, dtype):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool2 expects (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        return (c, (h + 1) // 2, (w + 1) // 2)

    def forward(self, x, train=False):
        if x.ndim != 4:
            raise ShapeError(f"maxpool2: expected 4-d input, got {x.shape}")
        out, idx = kernels.maxpool2_forward(np.ascontiguousarray(x))
        if train:
            self._cache = (idx, x.shape)
        return out

    def backward(self, dout):
        idx, shape = self._cached()
        return kernels.maxpool2_backward(np.ascontiguousarray(dout), idx, shape)


class BatchNorm(Layer):
    """Batch normalisation over channels (4-d input) or features (2-d input)."""
    kind = "batchnorm"

    def __init__(self, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps

    def init(self, in_shape, rng, dtype):
        c = in_shape[0]
        self.params["gamma"] = np.ones(c, dtype=dtype)
        self.params["beta"] = np.zeros(c, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(c, dtype=dtype)
        self.buffers["running_var"] = np.ones(c, dtype=dtype)
        self.zero_grad()
        return in_shape

    def _axes(self, x):
        return (0, 2, 3) if x.ndim == 4 else (0,)

    def _bshape(self, x):
        return (1, -1, 1, 1) if x.ndim == 4 else (1, -1)

    def forward(self, x, train=False):
        axes, bs = self._axes(x), self._bshape(x)
        if x.shape[1] != self.params["gamma"].shape[0]:
            raise ShapeError(f"batchnorm: expected {self.params['gamma'].shape[0]} channels, got {x.shape[1]}")
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // x.shape[1]
            unbiased = var * (m / max(m - 1, 1))
            mom = self.momentum
            self.buffers["running_mean"] = ((1 - mom) * self.buffers["running_mean"] + mom * mean).astype(x.dtype)
            self.buffers["running_var"] = ((1 - mom) * self.buffers["running_var"] + mom * unbiased).astype(x.dtype)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bs)) * inv.reshape(bs)
        if train:
            self._cache = (xhat, inv)
        return xhat * self.params["gamma"].reshape(bs) + self.params["beta"].reshape(bs)

    def backward(self, dout):
        xhat, inv = self._cached()
        axes, bs = self._axes(dout), self._bshape(dout)
        m = dout.size // dout.shape[1]
        self.grads["gamma"] += (dout * xhat).sum(axis=axes)
        self.grads["beta"] += dout.sum(axis=axes)
        dxhat = dout * self.params["gamma"].reshape(bs)
        return (inv.reshape(bs) / m) * (
            m * dxhat - dxhat.sum(axis=axes).reshape(bs) - xhat * (dxhat * xhat).sum(axis=axes).reshape(bs)
        )


class Flatten(Layer):
    kind = "flatten"

    def init(self, in_shape, rng, dtype):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._cached())


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, train=False):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        if train:
            self._cache = p
        return p

    def backward(self, dout):
        p = self._cached()
        return p * (dout - (dout * p).sum(axis=1, keepdims=True))


def log_softmax(x):
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def build_layer(desc: str) -> Layer:
    """``"conv3x3:32"`` -> Conv3x3(32), ``"relu"`` -> ReLU(), ..."""
    name, _, arg = desc.partition(":")
    if name == "conv3x3":
        return Conv3x3(int(arg))
    if name == "dense":
        return Dense(int(arg))
    simple = {"relu": ReLU, "maxpool2": MaxPool2, "batchnorm": BatchNorm,
              "flatten": Flatten, "softmax": Softmax}
    if name not in simple or arg:
        raise ValueError(f"unknown layer descriptor {desc!r}")
    return simple[name]()
