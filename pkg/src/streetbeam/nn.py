"""Minimal numpy neural-network layers with hand-rolled backpropagation.

Parameters and running statistics live in flat dicts keyed by dot-joined
paths ("sem.0.W"), which keeps checkpointing and finite-difference
gradient checking trivial. All layers are dtype-preserving so the same
graph can run in float32 for training and float64 for gradient checks.
"""

import numpy as np

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1


def _sub(d, prefix):
    p = prefix + "."
    return {k[len(p):]: v for k, v in d.items() if k.startswith(p)}


def _ns(d, prefix):
    return {f"{prefix}.{k}": v for k, v in d.items()}


def fan_in_uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Dense:
    def __init__(self, n_in, n_out):
        self.n_in, self.n_out = n_in, n_out

    def init(self, rng, dtype):
        return {
            "W": fan_in_uniform(rng, (self.n_out, self.n_in), self.n_in, dtype),
            "b": np.zeros(self.n_out, dtype=dtype),
        }, {}

    def forward(self, x, p, s, training, rng):
        return x @ p["W"].T + p["b"], x

    def backward(self, dy, cache, p):
        x = cache
        return dy @ p["W"], {"W": dy.T @ x, "b": dy.sum(axis=0)}


class ReLU:
    def init(self, rng, dtype):
        return {}, {}

    def forward(self, x, p, s, training, rng):
        y = np.maximum(x, 0)
        return y, (x > 0)

    def backward(self, dy, cache, p):
        return dy * cache, {}


class BatchNorm:
    """Batch normalization over the batch (and spatial dims for 4-D input)."""

    def __init__(self, num_features):
        self.num_features = num_features

    def init(self, rng, dtype):
        c = self.num_features
        params = {"gamma": np.ones(c, dtype=dtype), "beta": np.zeros(c, dtype=dtype)}
        state = {"running_mean": np.zeros(c, dtype=dtype),
                 "running_var": np.ones(c, dtype=dtype)}
        return params, state

    @staticmethod
    def _axes(x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    @staticmethod
    def _shape(x):
        return (1, -1) if x.ndim == 2 else (1, -1, 1, 1)

    def forward(self, x, p, s, training, rng):
        axes, shp = self._axes(x), self._shape(x)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            # running stats updated in place so shared state dicts stay in sync
            s["running_mean"] *= 1 - _BN_MOMENTUM
            s["running_mean"] += (_BN_MOMENTUM * mean).astype(s["running_mean"].dtype)
            s["running_var"] *= 1 - _BN_MOMENTUM
            s["running_var"] += (_BN_MOMENTUM * var).astype(s["running_var"].dtype)
        else:
            mean, var = s["running_mean"], s["running_var"]
        inv_std = 1.0 / np.sqrt(var + _BN_EPS)
        xhat = (x - mean.reshape(shp)) * inv_std.reshape(shp)
        y = p["gamma"].reshape(shp) * xhat + p["beta"].reshape(shp)
        return y, (xhat, inv_std, training)

    def backward(self, dy, cache, p):
        xhat, inv_std, training = cache
        axes, shp = self._axes(dy), self._shape(dy)
        dgamma = (dy * xhat).sum(axis=axes)
        dbeta = dy.sum(axis=axes)
        dxhat = dy * p["gamma"].reshape(shp)
        if training:
            m = dy.size // dy.shape[1] if dy.ndim == 4 else dy.shape[0]
            dx = (inv_std.reshape(shp) / m) * (
                m * dxhat
                - dxhat.sum(axis=axes).reshape(shp)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(shp)
            )
        else:
            dx = dxhat * inv_std.reshape(shp)
        return dx, {"gamma": dgamma, "beta": dbeta}


def _im2col(xp, k, stride, oh, ow):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols


class Conv2d:
    def __init__(self, c_in, c_out, kernel=3, stride=1, pad=1):
        self.c_in, self.c_out = c_in, c_out
        self.k, self.stride, self.pad = kernel, stride, pad

    def init(self, rng, dtype):
        fan_in = self.c_in * self.k * self.k
        return {
            "W": fan_in_uniform(rng, (self.c_out, self.c_in, self.k, self.k), fan_in, dtype),
            "b": np.zeros(self.c_out, dtype=dtype),
        }, {}

    def out_hw(self, h, w):
        return ((h + 2 * self.pad - self.k) // self.stride + 1,
                (w + 2 * self.pad - self.k) // self.stride + 1)

    def forward(self, x, p, s, training, rng):
        n, c, h, w = x.shape
        oh, ow = self.out_hw(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad,) * 2, (self.pad,) * 2))
        cols = _im2col(xp, self.k, self.stride, oh, ow)
        y = np.einsum("ncijhw,ocij->nohw", cols, p["W"], optimize=True) \
            + p["b"].reshape(1, -1, 1, 1)
        return y, (cols, x.shape)

    def backward(self, dy, cache, p):
        cols, x_shape = cache
        n, c, h, w = x_shape
        oh, ow = dy.shape[2:]
        dW = np.einsum("nohw,ncijhw->ocij", dy, cols, optimize=True)
        db = dy.sum(axis=(0, 2, 3))
        dcols = np.einsum("nohw,ocij->ncijhw", dy, p["W"], optimize=True)
        dxp = np.zeros((n, c, h + 2 * self.pad, w + 2 * self.pad), dtype=dy.dtype)
        for i in range(self.k):
            for j in range(self.k):
                dxp[:, :, i:i + self.stride * oh:self.stride,
                    j:j + self.stride * ow:self.stride] += dcols[:, :, i, j]
        dx = dxp[:, :, self.pad:self.pad + h, self.pad:self.pad + w]
        return dx, {"W": dW, "b": db}


class AvgPool:
    """Average pooling; padded positions count in the divisor (k*k)."""

    def __init__(self, kernel=3, stride=2, pad=1):
        self.k, self.stride, self.pad = kernel, stride, pad

    def init(self, rng, dtype):
        return {}, {}

    def out_hw(self, h, w):
        return ((h + 2 * self.pad - self.k) // self.stride + 1,
                (w + 2 * self.pad - self.k) // self.stride + 1)

    def forward(self, x, p, s, training, rng):
        n, c, h, w = x.shape
        oh, ow = self.out_hw(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad,) * 2, (self.pad,) * 2))
        cols = _im2col(xp, self.k, self.stride, oh, ow)
        return cols.mean(axis=(2, 3)), (x.shape, oh, ow)

    def backward(self, dy, cache, p):
        x_shape, oh, ow = cache
        n, c, h, w = x_shape
        share = dy / (self.k * self.k)
        dxp = np.zeros((n, c, h + 2 * self.pad, w + 2 * self.pad), dtype=dy.dtype)
        for i in range(self.k):
            for j in range(self.k):
                dxp[:, :, i:i + self.stride * oh:self.stride,
                    j:j + self.stride * ow:self.stride] += share
        return dxp[:, :, self.pad:self.pad + h, self.pad:self.pad + w], {}


class Dropout:
    def __init__(self, rate):
        self.rate = rate

    def init(self, rng, dtype):
        return {}, {}

    def forward(self, x, p, s, training, rng):
        if not training or self.rate == 0:
            return x, None
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep) / keep
        mask = mask.astype(x.dtype)
        return x * mask, mask

    def backward(self, dy, cache, p):
        if cache is None:
            return dy, {}
        return dy * cache, {}


class Flatten:
    def init(self, rng, dtype):
        return {}, {}

    def forward(self, x, p, s, training, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, p):
        return dy.reshape(cache), {}


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def init(self, rng, dtype):
        params, state = {}, {}
        for i, layer in enumerate(self.layers):
            p, s = layer.init(rng, dtype)
            params.update(_ns(p, str(i)))
            state.update(_ns(s, str(i)))
        return params, state

    def forward(self, x, params, state, training, rng):
        caches = []
        for i, layer in enumerate(self.layers):
            x, c = layer.forward(x, _sub(params, str(i)), _sub(state, str(i)), training, rng)
            caches.append(c)
        return x, caches

    def backward(self, dy, caches, params):
        grads = {}
        for i in reversed(range(len(self.layers))):
            dy, g = self.layers[i].backward(dy, caches[i], _sub(params, str(i)))
            grads.update(_ns(g, str(i)))
        return dy, grads


class ResidualBlock:
    """conv-bn-relu-conv-bn plus a shortcut, then relu.

    The shortcut is the identity when shapes match, else a strided 1x1
    projection convolution.
    """

    def __init__(self, c_in, c_out, stride=1):
        self.conv1 = Conv2d(c_in, c_out, 3, stride, 1)
        self.bn1 = BatchNorm(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, 1, 1)
        self.bn2 = BatchNorm(c_out)
        self.proj = Conv2d(c_in, c_out, 1, stride, 0) if (stride != 1 or c_in != c_out) else None
        self._children = {"conv1": self.conv1, "bn1": self.bn1,
                          "conv2": self.conv2, "bn2": self.bn2}
        if self.proj is not None:
            self._children["proj"] = self.proj

    def init(self, rng, dtype):
        params, state = {}, {}
        for name, layer in self._children.items():
            p, s = layer.init(rng, dtype)
            params.update(_ns(p, name))
            state.update(_ns(s, name))
        return params, state

    def out_hw(self, h, w):
        return self.conv1.out_hw(h, w)

    def forward(self, x, params, state, training, rng):
        def run(name, layer, inp):
            return layer.forward(inp, _sub(params, name), _sub(state, name), training, rng)

        y1, c1 = run("conv1", self.conv1, x)
        y2, c2 = run("bn1", self.bn1, y1)
        relu1_mask = y2 > 0
        y3 = np.maximum(y2, 0)
        y4, c4 = run("conv2", self.conv2, y3)
        y5, c5 = run("bn2", self.bn2, y4)
        if self.proj is not None:
            sc, cp = run("proj", self.proj, x)
        else:
            sc, cp = x, None
        pre = y5 + sc
        out_mask = pre > 0
        return np.maximum(pre, 0), (c1, c2, relu1_mask, c4, c5, cp, out_mask)

    def backward(self, dy, cache, params):
        c1, c2, relu1_mask, c4, c5, cp, out_mask = cache
        grads = {}
        dpre = dy * out_mask
        d5, g5 = self.bn2.backward(dpre, c5, _sub(params, "bn2"))
        grads.update(_ns(g5, "bn2"))
        d4, g4 = self.conv2.backward(d5, c4, _sub(params, "conv2"))
        grads.update(_ns(g4, "conv2"))
        d3 = d4 * relu1_mask
        d2, g2 = self.bn1.backward(d3, c2, _sub(params, "bn1"))
        grads.update(_ns(g2, "bn1"))
        dx, g1 = self.conv1.backward(d2, c1, _sub(params, "conv1"))
        grads.update(_ns(g1, "conv1"))
        if self.proj is not None:
            dsc, gp = self.proj.backward(dpre, cp, _sub(params, "proj"))
            grads.update(_ns(gp, "proj"))
            dx = dx + dsc
        else:
            dx = dx + dpre
        return dx, grads


class Adam:
    """Adaptive-moment optimizer over a flat parameter dict."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        b1t = 1 - self.beta1 ** self.t
        b2t = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[k] -= (self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)).astype(params[k].dtype)
