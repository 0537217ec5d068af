"""Layer kinds with explicit forward and backward passes.

Every layer works on numpy arrays laid out as (batch, ...). ``forward``
returns the output together with whatever the matching ``backward`` needs;
``backward`` returns the gradient with respect to the input and a dict of
parameter gradients keyed like ``params``.
"""
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError

KINDS = ("conv2d", "batchnorm2d", "relu", "maxpool2d", "dropout", "linear", "softmax")


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


class Layer:
    kind = None

    def __init__(self):
        self.params = {}
        self.buffers = {}

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def init_params(self, in_shape, rng, dtype):
        """Allocate parameters for a per-sample input shape ``in_shape``."""

    def forward(self, x, train, rng):
        raise NotImplementedError

    def backward(self, dout, cache):
        raise NotImplementedError

    def hyperparameters(self):
        return {}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.hyperparameters().items())
        return f"{type(self).__name__}({args})"


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=0):
        super().__init__()
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = _pair(kernel_size)
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        if min(self.kernel_size) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise ConfigurationError(f"bad conv hyperparameters: {self!r}")

    def hyperparameters(self):
        return dict(in_channels=self.in_channels, out_channels=self.out_channels,
                    kernel_size=self.kernel_size, stride=self.stride, padding=self.padding)

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ConfigurationError(f"{self!r} cannot take input of shape {tuple(in_shape)}")
        _, h, w = in_shape
        (kh, kw), (sh, sw), (ph, pw) = self.kernel_size, self.stride, self.padding
        ho = (h + 2 * ph - kh) // sh + 1
        wo = (w + 2 * pw - kw) // sw + 1
        if ho < 1 or wo < 1:
            raise ConfigurationError(f"{self!r} produces empty output from {tuple(in_shape)}")
        return (self.out_channels, ho, wo)

    def init_params(self, in_shape, rng, dtype):
        kh, kw = self.kernel_size
        fan_in = self.in_channels * kh * kw
        bound = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, (self.out_channels, self.in_channels, kh, kw))
        self.params = {"weight": w.astype(dtype), "bias": np.zeros(self.out_channels, dtype)}

    def forward(self, x, train, rng):
        (kh, kw), (sh, sw), (ph, pw) = self.kernel_size, self.stride, self.padding
        n = x.shape[0]
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        ho, wo = win.shape[2], win.shape[3]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
        w = self.params["weight"].reshape(self.out_channels, -1)
        out = cols @ w.T + self.params["bias"]
        out = out.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), (x.shape, xp.shape, cols)

    def backward(self, dout, cache):
        x_shape, xp_shape, cols = cache
        (kh, kw), (sh, sw), (ph, pw) = self.kernel_size, self.stride, self.padding
        n, f, ho, wo = dout.shape
        dmat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
        w = self.params["weight"]
        grads = {
            "weight": (dmat.T @ cols).reshape(w.shape),
            "bias": dmat.sum(axis=0),
        }
        dcols = (dmat @ w.reshape(f, -1)).reshape(n, ho, wo, self.in_channels, kh, kw)
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += dcols[..., i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, ph:ph + x_shape[2], pw:pw + x_shape[3]]
        return np.ascontiguousarray(dx), grads


class BatchNorm2d(Layer):
    kind = "batchnorm2d"

    def __init__(self, num_features, eps=1e-5, momentum=0.1):
        super().__init__()
        self.num_features = int(num_features)
        self.eps = float(eps)
        self.momentum = float(momentum)
        if self.eps <= 0:
            raise ConfigurationError("batchnorm eps must be > 0")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigurationError("batchnorm momentum must lie in [0, 1]")

    def hyperparameters(self):
        return dict(num_features=self.num_features, eps=self.eps, momentum=self.momentum)

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.num_features:
            raise ConfigurationError(f"{self!r} cannot take input of shape {tuple(in_shape)}")
        return tuple(in_shape)

    def init_params(self, in_shape, rng, dtype):
        c = self.num_features
        self.params = {"gamma": np.ones(c, dtype), "beta": np.zeros(c, dtype)}
        self.buffers = {"running_mean": np.zeros(c, dtype), "running_var": np.ones(c, dtype)}

    def forward(self, x, train, rng):
        gamma = self.params["gamma"][None, :, None, None]
        beta = self.params["beta"][None, :, None, None]
        if not train:
            mean = self.buffers["running_mean"][None, :, None, None]
            var = self.buffers["running_var"][None, :, None, None]
            return (x - mean) / np.sqrt(var + self.eps) * gamma + beta, None
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=(0, 2, 3))
        xc = x - mean[None, :, None, None]
        var = (xc * xc).mean(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv_std[None, :, None, None]
        mom = self.momentum
        unbiased = var * (m / max(m - 1, 1))
        self.buffers["running_mean"] = ((1 - mom) * self.buffers["running_mean"] + mom * mean).astype(x.dtype)
        self.buffers["running_var"] = ((1 - mom) * self.buffers["running_var"] + mom * unbiased).astype(x.dtype)
        return xhat * gamma + beta, (xhat, inv_std, mean, var)

    def backward(self, dout, cache):
        if cache is None:
            raise ValueError("batchnorm backward needs a train-mode forward")
        xhat, inv_std, _, _ = cache
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        grads = {
            "gamma": (dout * xhat).sum(axis=(0, 2, 3)),
            "beta": dout.sum(axis=(0, 2, 3)),
        }
        dxhat = dout * self.params["gamma"][None, :, None, None]
        s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        dx = (inv_std[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)
        return dx, grads


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train, rng):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, cache):
        return dout * cache, {}


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, kernel_size=2, stride=None):
        super().__init__()
        self.kernel_size = _pair(kernel_size)
        self.stride = _pair(stride) if stride is not None else self.kernel_size

    def hyperparameters(self):
        return dict(kernel_size=self.kernel_size, stride=self.stride)

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ConfigurationError(f"{self!r} cannot take input of shape {tuple(in_shape)}")
        c, h, w = in_shape
        (kh, kw), (sh, sw) = self.kernel_size, self.stride
        ho, wo = (h - kh) // sh + 1, (w - kw) // sw + 1
        if ho < 1 or wo < 1:
            raise ConfigurationError(f"{self!r} produces empty output from {tuple(in_shape)}")
        return (c, ho, wo)

    def forward(self, x, train, rng):
        (kh, kw), (sh, sw) = self.kernel_size, self.stride
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        n, c, ho, wo = win.shape[:4]
        flat = win.reshape(n, c, ho, wo, kh * kw)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return out, (x.shape, arg)

    def backward(self, dout, cache):
        x_shape, arg = cache
        (kh, kw), (sh, sw) = self.kernel_size, self.stride
        n, c, ho, wo = dout.shape
        dx = np.zeros(x_shape, dtype=dout.dtype)
        rows = (np.arange(ho) * sh)[None, None, :, None] + arg // kw
        cols = (np.arange(wo) * sw)[None, None, None, :] + arg % kw
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        if sh >= kh and sw >= kw:
            dx[ni, ci, rows, cols] = dout
        else:
            # overlapping windows may pick the same input cell
            np.add.at(dx, (ni, ci, rows, cols), dout)
        return dx, {}


class Dropout(Layer):
    """Inverted dropout: scales kept units by 1/(1-p) so eval is identity."""

    kind = "dropout"

    def __init__(self, p=0.5):
        super().__init__()
        self.p = float(p)
        if not 0.0 <= self.p < 1.0:
            raise ConfigurationError(f"dropout p must lie in [0, 1), got {p}")

    def hyperparameters(self):
        return dict(p=self.p)

    def forward(self, x, train, rng):
        if not train or self.p == 0.0:
            return x, None
        mask = (rng.random(x.shape) >= self.p).astype(x.dtype) / x.dtype.type(1.0 - self.p)
        return x * mask, mask

    def backward(self, dout, cache):
        if cache is None:
            return dout, {}
        return dout * cache, {}


class Linear(Layer):
    """Fully connected layer; inputs with more than one axis are flattened."""

    kind = "linear"

    def __init__(self, in_features, out_features):
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)

    def hyperparameters(self):
        return dict(in_features=self.in_features, out_features=self.out_features)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.in_features:
            raise ConfigurationError(
                f"{self!r} expects {self.in_features} features, input shape {tuple(in_shape)} "
                f"has {int(np.prod(in_shape))}")
        return (self.out_features,)

    def init_params(self, in_shape, rng, dtype):
        bound = math.sqrt(6.0 / self.in_features)
        w = rng.uniform(-bound, bound, (self.out_features, self.in_features))
        self.params = {"weight": w.astype(dtype), "bias": np.zeros(self.out_features, dtype)}

    def forward(self, x, train, rng):
        a = x.reshape(x.shape[0], -1)
        return a @ self.params["weight"].T + self.params["bias"], (x.shape, a)

    def backward(self, dout, cache):
        x_shape, a = cache
        grads = {"weight": dout.T @ a, "bias": dout.sum(axis=0)}
        dx = (dout @ self.params["weight"]).reshape(x_shape)
        return dx, grads


class Softmax(Layer):
    kind = "softmax"

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ConfigurationError(f"softmax expects flat features, got {tuple(in_shape)}")
        return tuple(in_shape)

    def forward(self, x, train, rng):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        return p, p

    def backward(self, dout, cache):
        p = cache
        return p * (dout - (dout * p).sum(axis=1, keepdims=True)), {}


_BY_KIND = {cls.kind: cls for cls in (Conv2d, BatchNorm2d, ReLU, MaxPool2d, Dropout, Linear, Softmax)}


def make_layer(kind, **hyper):
    """Build a layer from its kind name and hyperparameters."""
    try:
        cls = _BY_KIND[kind]
    except KeyError:
        raise ConfigurationError(f"unknown layer kind {kind!r}; expected one of {KINDS}") from None
    return cls(**hyper)
