"""Layers with explicit forward/backward passes, built on numpy.

Convolution uses patch-matrix expansion (im2col) followed by a matrix
multiply; the same expansion drives both backward directions.  Batches
are processed in fixed-size chunks and per-chunk results are combined in
chunk order, so outputs and gradients are bit-identical no matter how
many worker threads execute the chunks.

Training arithmetic is float32; layers can be built with dtype=float64
for finite-difference gradient checks.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..tucker import ConvSpec

# Chunk size is a constant, never derived from the thread count: chunk
# boundaries define the float reduction order.
CONV_CHUNK = 64


class Layer:
    """Named computation node with parameter and gradient dicts."""

    kind = "?"

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def flops(self, in_shape: tuple) -> int:
        """Per-sample forward FLOPs (multiply-accumulate counted as 2)."""
        return 0

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def config(self) -> tuple:
        """Structural constants needed to rebuild the layer from disk."""
        return ()

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


def _im2col(x, kh, kw, stride, pad, out_h, out_w):
    n, c, h, w = x.shape
    if pad:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad : pad + h, pad : pad + w] = x
    else:
        xp = x
    col = np.empty((n, c, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            col[:, :, i, j] = xp[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride]
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(n * out_h * out_w, c * kh * kw)


def _col2im(col, x_shape, kh, kw, stride, pad, out_h, out_w):
    n, c, h, w = x_shape
    col = col.reshape(n, out_h, out_w, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=col.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += col[:, :, i, j]
    if pad:
        return xp[:, :, pad : pad + h, pad : pad + w].copy()
    return xp


def _chunks(n: int):
    return [slice(i, min(i + CONV_CHUNK, n)) for i in range(0, n, CONV_CHUNK)]


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, name, spec: ConvSpec, rng=None, dtype=np.float32):
        super().__init__(name)
        self.spec = spec
        self.dtype = dtype
        shape = (spec.c_out, spec.c_in, spec.kh, spec.kw)
        if rng is None:
            weight = np.zeros(shape, dtype=dtype)
        else:
            fan_in = spec.c_in * spec.kh * spec.kw
            weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
        self.params["weight"] = weight
        if spec.has_bias:
            self.params["bias"] = np.zeros(spec.c_out, dtype=dtype)
        self.executor = None  # shared pool installed by the model
        self._cols = None
        self._x_shape = None

    @classmethod
    def from_weights(cls, name, spec: ConvSpec, weight, bias=None, dtype=np.float32):
        layer = cls(name, spec, rng=None, dtype=dtype)
        if weight.shape != layer.params["weight"].shape:
            raise ShapeError(f"weight shape {weight.shape} mismatches {spec}")
        layer.params["weight"] = np.asarray(weight, dtype=dtype).copy()
        if spec.has_bias:
            if bias is None:
                raise ShapeError(f"{name}: spec declares a bias but none was given")
            layer.params["bias"] = np.asarray(bias, dtype=dtype).copy()
        return layer

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.spec.c_in:
            raise ShapeError(f"{self.name}: expected {self.spec.c_in} channels, got {c}")
        oh, ow = self.spec.out_hw((h, w))
        return (self.spec.c_out, oh, ow)

    def flops(self, in_shape):
        _, oh, ow = self.out_shape(in_shape)
        return 2 * self.spec.c_out * self.spec.c_in * self.spec.kh * self.spec.kw * oh * ow

    def config(self):
        s = self.spec
        return (s.c_in, s.c_out, s.kh, s.kw, s.stride, s.padding, int(s.has_bias))

    def _run(self, jobs):
        if self.executor is not None and len(jobs) > 1:
            return list(self.executor.map(lambda f: f(), jobs))
        return [f() for f in jobs]

    def forward(self, x, training=False):
        s = self.spec
        n, c, h, w = x.shape
        if c != s.c_in:
            raise ShapeError(f"{self.name}: expected {s.c_in} channels, got {c}")
        oh, ow = s.out_hw((h, w))
        w_mat = self.params["weight"].reshape(s.c_out, -1)
        bias = self.params.get("bias")

        def job(sl):
            def run():
                col = _im2col(x[sl], s.kh, s.kw, s.stride, s.padding, oh, ow)
                out = col @ w_mat.T
                if bias is not None:
                    out += bias
                nn = sl.stop - sl.start
                return col, out.reshape(nn, oh, ow, s.c_out).transpose(0, 3, 1, 2)
            return run

        results = self._run([job(sl) for sl in _chunks(n)])
        if training:
            self._cols = [r[0] for r in results]
            self._x_shape = x.shape
        return np.concatenate([r[1] for r in results], axis=0)

    def backward(self, grad):
        s = self.spec
        n, _, oh, ow = grad.shape
        w_mat = self.params["weight"].reshape(s.c_out, -1)
        slices = _chunks(n)

        def job(i, sl):
            def run():
                gm = grad[sl].transpose(0, 2, 3, 1).reshape(-1, s.c_out)
                gw = gm.T @ self._cols[i]
                gcol = gm @ w_mat
                shape = (sl.stop - sl.start,) + self._x_shape[1:]
                gx = _col2im(gcol, shape, s.kh, s.kw, s.stride, s.padding, oh, ow)
                return gw, gm.sum(axis=0), gx
            return run

        results = self._run([job(i, sl) for i, sl in enumerate(slices)])
        gw = results[0][0]
        gb = results[0][1]
        for r in results[1:]:  # fixed chunk order keeps the reduction exact
            gw = gw + r[0]
            gb = gb + r[1]
        self.grads["weight"] = gw.reshape(self.params["weight"].shape)
        if "bias" in self.params:
            self.grads["bias"] = gb
        self._cols = None
        return np.concatenate([r[2] for r in results], axis=0)


class BatchNorm2d(Layer):
    kind = "batchnorm"

    EPS = 1e-5
    MOMENTUM = 0.9  # weight of the previous running statistic

    def __init__(self, name, channels: int, dtype=np.float32):
        super().__init__(name)
        self.channels = channels
        self.dtype = dtype
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self._cache = None

    def config(self):
        return (self.channels,)

    def forward(self, x, training=False):
        if x.shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got {x.shape[1]}")
        gamma = self.params["gamma"][None, :, None, None]
        beta = self.params["beta"][None, :, None, None]
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            invstd = 1.0 / np.sqrt(var + self.EPS)
            xhat = (x - mean[None, :, None, None]) * invstd[None, :, None, None]
            self.buffers["running_mean"] = (
                self.MOMENTUM * self.buffers["running_mean"] + (1 - self.MOMENTUM) * mean
            ).astype(self.dtype)
            self.buffers["running_var"] = (
                self.MOMENTUM * self.buffers["running_var"] + (1 - self.MOMENTUM) * var
            ).astype(self.dtype)
            self._cache = (xhat, invstd)
            return gamma * xhat + beta
        mean = self.buffers["running_mean"][None, :, None, None]
        invstd = 1.0 / np.sqrt(self.buffers["running_var"][None, :, None, None] + self.EPS)
        return gamma * (x - mean) * invstd + beta

    def backward(self, grad):
        if self._cache is None:
            raise ShapeError(f"{self.name}: backward before training-mode forward")
        xhat, invstd = self._cache
        self.grads["gamma"] = np.sum(grad * xhat, axis=(0, 2, 3))
        self.grads["beta"] = np.sum(grad, axis=(0, 2, 3))
        dxhat = grad * self.params["gamma"][None, :, None, None]
        mean_d = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        dx = invstd[None, :, None, None] * (dxhat - mean_d - xhat * mean_dx)
        self._cache = None
        return dx.astype(grad.dtype)


class ReLU(Layer):
    kind = "relu"

    def __init__(self, name):
        super().__init__(name)
        self._mask = None

    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0)


class _Pool2x2(Layer):
    """Common plumbing for 2x2 stride-2 pooling; odd trailing rows/cols
    are dropped (floor semantics)."""

    def __init__(self, name):
        super().__init__(name)
        self._cache = None

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if h < 2 or w < 2:
            raise ShapeError(f"{self.name}: spatial size {h}x{w} too small to pool")
        return (c, h // 2, w // 2)

    @staticmethod
    def _windows(x):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        r = x[:, :, : h2 * 2, : w2 * 2].reshape(n, c, h2, 2, w2, 2)
        return r.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)

    def _scatter(self, win_grad, x_shape):
        n, c, h, w = x_shape
        h2, w2 = h // 2, w // 2
        g = win_grad.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        out = np.zeros(x_shape, dtype=win_grad.dtype)
        out[:, :, : h2 * 2, : w2 * 2] = g.reshape(n, c, h2 * 2, w2 * 2)
        return out


class MaxPool2d(_Pool2x2):
    kind = "maxpool"

    def forward(self, x, training=False):
        win = self._windows(x)
        idx = win.argmax(axis=-1)
        self._cache = (idx, x.shape)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        idx, x_shape = self._cache
        win_grad = np.zeros(idx.shape + (4,), dtype=grad.dtype)
        np.put_along_axis(win_grad, idx[..., None], grad[..., None], axis=-1)
        return self._scatter(win_grad, x_shape)


class AvgPool2d(_Pool2x2):
    kind = "avgpool"

    def forward(self, x, training=False):
        self._cache = x.shape
        return self._windows(x).mean(axis=-1)

    def backward(self, grad):
        win_grad = np.repeat(grad[..., None] * 0.25, 4, axis=-1)
        return self._scatter(win_grad, self._cache)


class Linear(Layer):
    """Fully connected layer; 4-D inputs are flattened internally so the
    classifier head does not need a separate flatten node."""

    kind = "linear"

    def __init__(self, name, in_features: int, out_features: int, rng=None, dtype=np.float32):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        if rng is None:
            weight = np.zeros((out_features, in_features), dtype=dtype)
        else:
            weight = rng.normal(0.0, np.sqrt(2.0 / in_features), size=(out_features, in_features)).astype(dtype)
        self.params["weight"] = weight
        self.params["bias"] = np.zeros(out_features, dtype=dtype)
        self._x = None
        self._x_shape = None

    def config(self):
        return (self.in_features, self.out_features)

    def out_shape(self, in_shape):
        flat = int(np.prod(in_shape))
        if flat != self.in_features:
            raise ShapeError(f"{self.name}: expected {self.in_features} features, got {flat}")
        return (self.out_features,)

    def flops(self, in_shape):
        return 2 * self.in_features * self.out_features

    def forward(self, x, training=False):
        self._x_shape = x.shape
        x2 = x.reshape(x.shape[0], -1)
        if x2.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: expected {self.in_features} features, got {x2.shape[1]}")
        self._x = x2 if training else None
        return x2 @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        self.grads["weight"] = grad.T @ self._x
        self.grads["bias"] = grad.sum(axis=0)
        gx = grad @ self.params["weight"]
        return gx.reshape(self._x_shape)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient wrt logits."""
    if logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"{logits.shape[0]} logits vs {labels.shape[0]} labels")
    z = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(z)
    p = expz / expz.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    nll = -(z[np.arange(n), labels] - np.log(expz.sum(axis=1)))
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return float(nll.mean()), (grad / n).astype(logits.dtype)
