"""Layers with explicit forward/backward passes.

Each layer keeps what its backward pass needs from the most recent forward
call. Trainable arrays live in ``params`` with matching entries in ``grads``;
non-trainable buffers (batch-norm running statistics) live in ``buffers``.
"""
from __future__ import annotations

import numpy as np

from . import functional as F


class Layer:
    kind = "layer"
    #: counted by the "weight layer" tally used to name architectures
    is_weight_layer = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def spec(self) -> dict:
        return {"kind": self.kind}

    def children(self) -> list["Layer"]:
        return []

    def astype(self, dtype) -> "Layer":
        for store in (self.params, self.buffers):
            for k, v in store.items():
                store[k] = v.astype(dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        for child in self.children():
            child.astype(dtype)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "kind")
        return f"{type(self).__name__}({args})"


def _kaiming(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class Conv2D(Layer):
    kind = "conv2d"
    is_weight_layer = True

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, stride: int = 1,
                 padding: str = "same", bias: bool = True, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding, self.bias = kernel, stride, padding, bias
        self.params["w"] = _kaiming(rng, (kernel, kernel, in_channels, out_channels),
                                    kernel * kernel * in_channels)
        if bias:
            self.params["b"] = np.zeros(out_channels, dtype=np.float32)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._x = None

    def forward(self, x, training=False):
        self._x = x
        return F.conv2d_forward(x, self.params["w"], self.params.get("b"), self.stride, self.padding)

    def backward(self, dout):
        dx, dw, db = F.conv2d_backward(dout, self._x, self.params["w"], self.stride,
                                       self.padding, need_bias=self.bias)
        self.grads["w"][...] = dw
        if self.bias:
            self.grads["b"][...] = db
        return dx

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.in_channels:
            raise ValueError(f"{self!r} got {c} input channels")
        ho = F.conv_output_size(h, self.kernel, self.stride, self.padding)[0]
        wo = F.conv_output_size(w, self.kernel, self.stride, self.padding)[0]
        return (ho, wo, self.out_channels)

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel": self.kernel, "stride": self.stride, "padding": self.padding, "bias": self.bias}


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def forward(self, x, training=False):
        out, self._idx, self._hw = F.maxpool2d_forward(x)
        return out

    def backward(self, dout):
        return F.maxpool2d_backward(dout, self._idx, self._hw)

    def output_shape(self, in_shape):
        h, w, c = in_shape
        return ((h + 1) // 2, (w + 1) // 2, c)


class BatchNorm(Layer):
    """Batch normalization over every axis but the last (channel) one.

    Running statistics follow ``running = momentum * running + (1 - momentum)
    * batch`` and use the unbiased batch variance.
    """

    kind = "batchnorm"

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=np.float32)
        self.params["beta"] = np.zeros(channels, dtype=np.float32)
        self.buffers["running_mean"] = np.zeros(channels, dtype=np.float32)
        self.buffers["running_var"] = np.ones(channels, dtype=np.float32)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x, training=False):
        axes = tuple(range(x.ndim - 1))
        gamma, beta = self.params["gamma"], self.params["beta"]
        if training:
            m = x.size // x.shape[-1]
            if x.shape[0] < 2:
                raise ValueError("batch norm in training mode needs a batch of at least 2")
            mean = x.mean(axis=axes)
            xc = x - mean
            var = np.mean(xc * xc, axis=axes)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = xc * inv_std
            mom = self.momentum
            self.buffers["running_mean"] = (mom * self.buffers["running_mean"]
                                            + (1 - mom) * mean).astype(self.buffers["running_mean"].dtype)
            self.buffers["running_var"] = (mom * self.buffers["running_var"]
                                           + (1 - mom) * var * m / (m - 1)).astype(self.buffers["running_var"].dtype)
            self._cache = (xhat, inv_std, axes)
        else:
            inv_std = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            xhat = (x - self.buffers["running_mean"]) * inv_std
            self._cache = (xhat, inv_std, None)
        return (xhat * gamma + beta).astype(x.dtype, copy=False)

    def backward(self, dout):
        xhat, inv_std, axes = self._cache
        gamma = self.params["gamma"]
        red = tuple(range(dout.ndim - 1))
        self.grads["beta"][...] = dout.sum(axis=red)
        self.grads["gamma"][...] = (dout * xhat).sum(axis=red)
        dxhat = dout * gamma
        if axes is None:
            return dxhat * inv_std
        m = dout.size // dout.shape[-1]
        return (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes)
                                - xhat * (dxhat * xhat).sum(axis=axes))

    def spec(self):
        return {"kind": self.kind, "channels": self.channels, "momentum": self.momentum, "eps": self.eps}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout):
        n, h, w, c = self._shape
        return np.broadcast_to(dout[:, None, None, :] / (h * w), self._shape).copy()

    def output_shape(self, in_shape):
        return (in_shape[-1],)


class Dense(Layer):
    kind = "dense"
    is_weight_layer = True

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        self.params["w"] = _kaiming(rng, (in_features, out_features), in_features)
        self.params["b"] = np.zeros(out_features, dtype=np.float32)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x, training=False):
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout):
        self.grads["w"][...] = self._x.T @ dout
        self.grads["b"][...] = dout.sum(axis=0)
        return dout @ self.params["w"].T

    def output_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise ValueError(f"{self!r} got input shape {in_shape}")
        return (self.out_features,)

    def spec(self):
        return {"kind": self.kind, "in_features": self.in_features, "out_features": self.out_features}


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training=False):
        self._p = F.softmax(x)
        return self._p

    def backward(self, dout):
        p = self._p
        return p * (dout - (dout * p).sum(axis=-1, keepdims=True))


class ResidualBlock(Layer):
    """``relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))``.

    The shortcut is the identity unless the block changes resolution or
    width, in which case it is a strided 1x1 convolution followed by batch
    norm. Branch convolutions carry no bias since batch norm follows them.
    """

    kind = "residual_block"

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels, self.stride = in_channels, out_channels, stride
        self.branch = [
            Conv2D(in_channels, out_channels, 3, stride, "same", bias=False, rng=rng),
            BatchNorm(out_channels),
            ReLU(),
            Conv2D(out_channels, out_channels, 3, 1, "same", bias=False, rng=rng),
            BatchNorm(out_channels),
        ]
        if stride != 1 or in_channels != out_channels:
            self.shortcut = [Conv2D(in_channels, out_channels, 1, stride, "valid", bias=False, rng=rng),
                             BatchNorm(out_channels)]
        else:
            self.shortcut = []
        self.out_relu = ReLU()

    def children(self):
        return self.branch + self.shortcut + [self.out_relu]

    def forward(self, x, training=False):
        h = x
        for layer in self.branch:
            h = layer.forward(h, training)
        s = x
        for layer in self.shortcut:
            s = layer.forward(s, training)
        return self.out_relu.forward(h + s, training)

    def backward(self, dout):
        d = self.out_relu.backward(dout)
        dh = d
        for layer in reversed(self.branch):
            dh = layer.backward(dh)
        ds = d
        for layer in reversed(self.shortcut):
            ds = layer.backward(ds)
        return dh + ds

    def output_shape(self, in_shape):
        shape = in_shape
        for layer in self.branch:
            shape = layer.output_shape(shape)
        return shape

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "stride": self.stride}


LAYER_KINDS = {cls.kind: cls for cls in
               (Conv2D, MaxPool2D, BatchNorm, ReLU, Flatten, GlobalAvgPool, Dense, Softmax, ResidualBlock)}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    cls = LAYER_KINDS.get(spec.pop("kind", None))
    if cls is None:
        raise ValueError(f"unknown layer spec {spec!r}")
    return cls(**spec)
