"""Layer forward/backward implementations for the NCHW engine.

Each layer instance references parameter/gradient/buffer dicts owned by the
network's parameter store, so several instances can share one parameter set
(weight sharing). Caches for backward live on the instance and are dropped
after use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

BN_MOMENTUM = 0.9  # fraction of the old running statistic kept per update
BN_EPS = 1e-5


@dataclass
class FwdCtx:
    """Per-forward-pass switches: mode, statistics updates, dropout RNG."""

    training: bool = False
    update_stats: bool = False
    rng: np.random.Generator | None = None


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


class LayerBase:
    def forward(self, xs: list[np.ndarray], ctx: FwdCtx) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> list[np.ndarray]:
        raise NotImplementedError


class Conv2D(LayerBase):
    """'same'-padded convolution: output spatial dims are ceil(in/stride)."""

    def __init__(self, params: dict, grads: dict, kernel: int, stride: int):
        self.params = params
        self.grads = grads
        self.kernel = kernel
        self.stride = stride
        self._cache = None

    @staticmethod
    def init_params(
        in_channels: int, filters: int, kernel: int,
        rng: np.random.Generator, dtype,
    ) -> dict[str, np.ndarray]:
        fan_in = in_channels * kernel * kernel
        std = math.sqrt(2.0 / fan_in)
        return {
            "weight": (rng.normal(0.0, std, (filters, in_channels, kernel, kernel))
                       .astype(dtype)),
            "bias": np.zeros(filters, dtype=dtype),
        }

    def forward(self, xs, ctx):
        (x,) = xs
        b, c, h, w = x.shape
        k, s = self.kernel, self.stride
        oh, ow = _ceil_div(h, s), _ceil_div(w, s)
        ph = max((oh - 1) * s + k - h, 0)
        pw = max((ow - 1) * s + k - w, 0)
        pt, pl = ph // 2, pw // 2
        xp = np.pad(x, ((0, 0), (0, 0), (pt, ph - pt), (pl, pw - pl)))
        xp = np.ascontiguousarray(xp)
        cols = kernels.im2col(xp, k, k, s, s, oh, ow)
        wmat = self.params["weight"].reshape(self.params["weight"].shape[0], -1)
        out = wmat @ cols + self.params["bias"][:, None]
        y = out.reshape(-1, b, oh, ow).transpose(1, 0, 2, 3)
        # Cache the padded input, not the cols: im2col is cheap to redo and
        # the cols matrix is kernel^2 times larger.
        self._cache = (xp, x.shape, (pt, pl), (oh, ow))
        return np.ascontiguousarray(y)

    def backward(self, g):
        xp, x_shape, (pt, pl), (oh, ow) = self._cache
        self._cache = None
        b, c, h, w = x_shape
        k, s = self.kernel, self.stride
        f = self.params["weight"].shape[0]
        cols = kernels.im2col(xp, k, k, s, s, oh, ow)
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, -1)
        self.grads["weight"] += (gmat @ cols.T).reshape(self.params["weight"].shape)
        self.grads["bias"] += gmat.sum(axis=1)
        wmat = self.params["weight"].reshape(f, -1)
        dcols = np.ascontiguousarray(wmat.T @ gmat)
        dxp = kernels.col2im(dcols, b, c, xp.shape[2], xp.shape[3],
                             k, k, s, s, oh, ow)
        return [dxp[:, :, pt : pt + h, pl : pl + w]]


class BatchNorm2D(LayerBase):
    """Per-channel batch normalization with shared running statistics."""

    def __init__(self, params: dict, grads: dict, buffers: dict):
        self.params = params
        self.grads = grads
        self.buffers = buffers
        self._cache = None

    @staticmethod
    def init_params(channels: int, dtype) -> dict[str, np.ndarray]:
        return {
            "gamma": np.ones(channels, dtype=dtype),
            "beta": np.zeros(channels, dtype=dtype),
        }

    @staticmethod
    def init_buffers(channels: int, dtype) -> dict[str, np.ndarray]:
        return {
            "running_mean": np.zeros(channels, dtype=dtype),
            "running_var": np.ones(channels, dtype=dtype),
        }

    def forward(self, xs, ctx):
        (x,) = xs
        c = x.shape[1]
        gamma = self.params["gamma"].reshape(1, c, 1, 1)
        beta = self.params["beta"].reshape(1, c, 1, 1)
        if ctx.training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            if ctx.update_stats:
                m = x.dtype.type(BN_MOMENTUM)
                one_m = x.dtype.type(1.0 - BN_MOMENTUM)
                self.buffers["running_mean"] *= m
                self.buffers["running_mean"] += one_m * mean
                self.buffers["running_var"] *= m
                self.buffers["running_var"] += one_m * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + x.dtype.type(BN_EPS))
        xhat = (x - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
        y = gamma * xhat + beta
        if ctx.training:
            self._cache = (xhat, inv_std, gamma)
        return y.astype(x.dtype, copy=False)

    def backward(self, g):
        xhat, inv_std, gamma = self._cache
        self._cache = None
        b, c, h, w = g.shape
        n = b * h * w
        sum_axes = (0, 2, 3)
        self.grads["gamma"] += (g * xhat).sum(axis=sum_axes)
        self.grads["beta"] += g.sum(axis=sum_axes)
        dxhat = g * gamma
        s1 = dxhat.sum(axis=sum_axes).reshape(1, c, 1, 1)
        s2 = (dxhat * xhat).sum(axis=sum_axes).reshape(1, c, 1, 1)
        dx = (dxhat - s1 / n - xhat * (s2 / n)) * inv_std.reshape(1, c, 1, 1)
        return [dx.astype(g.dtype, copy=False)]


class ReLU(LayerBase):
    def __init__(self):
        self._mask = None

    def forward(self, xs, ctx):
        (x,) = xs
        mask = x > 0
        if ctx.training:
            self._mask = mask
        return np.where(mask, x, x.dtype.type(0.0))

    def backward(self, g):
        mask = self._mask
        self._mask = None
        return [np.where(mask, g, g.dtype.type(0.0))]


class MaxPool2D(LayerBase):
    """Ceil-mode pooling; edge windows are clipped, never padded."""

    def __init__(self, kernel: int, stride: int):
        self.kernel = kernel
        self.stride = stride
        self._cache = None

    @staticmethod
    def out_dim(d: int, kernel: int, stride: int) -> int:
        return max(_ceil_div(d - kernel, stride) + 1, 1)

    def forward(self, xs, ctx):
        (x,) = xs
        b, c, h, w = x.shape
        k, s = self.kernel, self.stride
        oh = self.out_dim(h, k, s)
        ow = self.out_dim(w, k, s)
        x = np.ascontiguousarray(x)
        y, idx = kernels.maxpool_forward(x, k, k, s, s, oh, ow)
        if ctx.training:
            self._cache = (idx, h, w)
        return y

    def backward(self, g):
        idx, h, w = self._cache
        self._cache = None
        k, s = self.kernel, self.stride
        return [kernels.maxpool_backward(np.ascontiguousarray(g), idx, h, w,
                                         k, k, s, s)]


class Dense(LayerBase):
    def __init__(self, params: dict, grads: dict):
        self.params = params
        self.grads = grads
        self._cache = None

    @staticmethod
    def init_params(
        in_features: int, nodes: int, rng: np.random.Generator, dtype
    ) -> dict[str, np.ndarray]:
        std = math.sqrt(2.0 / in_features)
        return {
            "weight": rng.normal(0.0, std, (nodes, in_features)).astype(dtype),
            "bias": np.zeros(nodes, dtype=dtype),
        }

    def forward(self, xs, ctx):
        (x,) = xs
        if ctx.training:
            self._cache = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, g):
        x = self._cache
        self._cache = None
        self.grads["weight"] += g.T @ x
        self.grads["bias"] += g.sum(axis=0)
        return [g @ self.params["weight"]]


class Dropout(LayerBase):
    """Inverted dropout; inert outside training mode."""

    def __init__(self, rate: float):
        self.rate = rate
        self._mask = None

    def forward(self, xs, ctx):
        (x,) = xs
        if not ctx.training:
            return x
        if ctx.rng is None:
            raise RuntimeError("training-mode dropout needs a forward RNG")
        keep = 1.0 - self.rate
        mask = (ctx.rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
        self._mask = mask
        return x * mask

    def backward(self, g):
        mask = self._mask
        self._mask = None
        return [g * mask]


class Sigmoid(LayerBase):
    def __init__(self):
        self._y = None

    def forward(self, xs, ctx):
        (x,) = xs
        # Overflow-free form; outputs stay in the open interval (0, 1)
        # even for saturating inputs.
        z = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(
            x.dtype, copy=False
        )
        lo = np.nextafter(x.dtype.type(0), x.dtype.type(1))
        hi = np.nextafter(x.dtype.type(1), x.dtype.type(0))
        y = np.clip(y, lo, hi)
        if ctx.training:
            self._y = y
        return y

    def backward(self, g):
        y = self._y
        self._y = None
        return [g * y * (1.0 - y)]


class Flatten(LayerBase):
    def __init__(self):
        self._shape = None

    def forward(self, xs, ctx):
        (x,) = xs
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        shape = self._shape
        self._shape = None
        return [g.reshape(shape)]


class AddSkip(LayerBase):
    """Residual add of (main, skip).

    The skip input is subsampled by `stride` and adjusted to the main
    path's channel count: zero-padded when narrower, cropped when wider.
    The output always has the main path's shape.
    """

    def __init__(self, stride: int = 1):
        self.stride = stride
        self._cache = None

    def forward(self, xs, ctx):
        main, skip = xs
        s = self.stride
        sk = skip[:, :, ::s, ::s] if s > 1 else skip
        if sk.shape[0] != main.shape[0] or sk.shape[2:] != main.shape[2:]:
            raise ValueError(
                f"skip shape {sk.shape} does not align with main {main.shape}"
            )
        cc = min(sk.shape[1], main.shape[1])
        y = main.copy()
        y[:, :cc] += sk[:, :cc]
        self._cache = (skip.shape, cc)
        return y

    def backward(self, g):
        skip_shape, cc = self._cache
        self._cache = None
        s = self.stride
        g_skip = np.zeros(skip_shape, dtype=g.dtype)
        g_skip[:, :cc, ::s, ::s] = g[:, :cc]
        return [g, g_skip]


class Concat(LayerBase):
    """Channel-dimension concatenation."""

    def __init__(self):
        self._splits = None

    def forward(self, xs, ctx):
        self._splits = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1)

    def backward(self, g):
        splits = self._splits
        self._splits = None
        out = []
        start = 0
        for c in splits:
            out.append(np.ascontiguousarray(g[:, start : start + c]))
            start += c
        return out
