"""Parameters and the small set of layers the models are built from.

Every layer exposes ``params()``, ``out_shape(in_shape)`` and
``flops(in_shape)``. Shapes exclude the batch axis. FLOPs are per sample
with one multiply-accumulate counted as two FLOPs and bias adds counted.
"""

import zlib

import numpy as np

from . import autodiff as ad
from .errors import ShapeError


class Parameter:
    """Named tensor with a trainable flag and Adam moment slots."""

    def __init__(self, name, data, trainable=True):
        self.name = name
        self.value = ad.Tensor(np.array(data, dtype=ad.default_dtype()), name=name)
        self.adam_m = np.zeros_like(self.value.data)
        self.adam_v = np.zeros_like(self.value.data)
        self.step_count = 0
        self.trainable = trainable

    @property
    def trainable(self):
        return self._trainable

    @trainable.setter
    def trainable(self, flag):
        self._trainable = bool(flag)
        self.value.requires_grad = self._trainable
        if not self._trainable:
            self.value.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.data.size

    @property
    def grad(self):
        return self.value.grad

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def param_rng(seed, name):
    """RNG keyed by (seed, parameter name), independent of build order."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def uniform_param(name, shape, fan_in, seed):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Parameter(name, param_rng(seed, name).uniform(-bound, bound, size=shape))


def const_param(name, shape, value=0.0):
    return Parameter(name, np.full(shape, value, dtype=np.float64))


def _prod(shape):
    return int(np.prod(shape, dtype=np.int64))


class Layer:
    """Base class; stateless layers need only ``__call__`` and ``out_shape``."""

    def params(self):
        return []

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def flops(self, in_shape):
        return 0

    def param_count(self):
        return sum(p.size for p in self.params())


class Dense(Layer):
    def __init__(self, name, n_in, n_out, seed=0, bias=True):
        self.name, self.n_in, self.n_out = name, n_in, n_out
        self.w = uniform_param(f"{name}.w", (n_in, n_out), n_in, seed)
        self.b = const_param(f"{name}.b", (n_out,)) if bias else None

    def params(self):
        return [self.w] if self.b is None else [self.w, self.b]

    def __call__(self, x):
        return ad.dense(x, self.w.value, None if self.b is None else self.b.value)

    def out_shape(self, in_shape):
        if in_shape[-1] != self.n_in:
            raise ShapeError(f"{self.name}: expects width {self.n_in}, got {tuple(in_shape)}",
                             in_shape)
        return tuple(in_shape[:-1]) + (self.n_out,)

    def flops(self, in_shape):
        rows = _prod(in_shape[:-1])
        per_row = 2 * self.n_in * self.n_out + (self.n_out if self.b is not None else 0)
        return rows * per_row


def _check_chw(name, in_shape, channels):
    if len(in_shape) != 3 or in_shape[0] != channels:
        raise ShapeError(f"{name}: expects ({channels}, H, W), got {tuple(in_shape)}", in_shape)


class Conv2d(Layer):
    def __init__(self, name, c_in, c_out, k, stride=1, padding=0, seed=0, bias=True):
        self.name = name
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.padding = stride, padding
        self.w = uniform_param(f"{name}.w", (c_out, c_in, k, k), c_in * k * k, seed)
        self.b = const_param(f"{name}.b", (c_out,)) if bias else None

    def params(self):
        return [self.w] if self.b is None else [self.w, self.b]

    def __call__(self, x):
        return ad.conv2d(x, self.w.value, None if self.b is None else self.b.value,
                         stride=self.stride, padding=self.padding)

    def out_shape(self, in_shape):
        _check_chw(self.name, in_shape, self.c_in)
        out = []
        for size in in_shape[1:]:
            span = size + 2 * self.padding - self.k
            if span < 0 or span % self.stride:
                raise ShapeError(f"{self.name}: non-integer output size for input "
                                 f"{tuple(in_shape)}", in_shape)
            out.append(span // self.stride + 1)
        return (self.c_out, *out)

    def flops(self, in_shape):
        _, ho, wo = self.out_shape(in_shape)
        macs = self.k * self.k * self.c_in * self.c_out * ho * wo
        return 2 * macs + (self.c_out * ho * wo if self.b is not None else 0)


class Deconv2d(Layer):
    def __init__(self, name, c_in, c_out, k, stride=1, padding=0, seed=0, bias=True):
        self.name = name
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.padding = stride, padding
        self.w = uniform_param(f"{name}.w", (c_in, c_out, k, k), c_in * k * k, seed)
        self.b = const_param(f"{name}.b", (c_out,)) if bias else None

    def params(self):
        return [self.w] if self.b is None else [self.w, self.b]

    def __call__(self, x):
        return ad.deconv2d(x, self.w.value, None if self.b is None else self.b.value,
                           stride=self.stride, padding=self.padding)

    def out_shape(self, in_shape):
        _check_chw(self.name, in_shape, self.c_in)
        out = [(s - 1) * self.stride - 2 * self.padding + self.k for s in in_shape[1:]]
        if min(out) <= 0:
            raise ShapeError(f"{self.name}: empty output for input {tuple(in_shape)}", in_shape)
        return (self.c_out, *out)

    def flops(self, in_shape):
        _, h, w = in_shape
        _, ho, wo = self.out_shape(in_shape)
        macs = self.k * self.k * self.c_in * self.c_out * h * w
        return 2 * macs + (self.c_out * ho * wo if self.b is not None else 0)


class LayerNorm(Layer):
    """Normalises over the trailing ``norm_shape`` axes jointly."""

    FLOPS_PER_ELEMENT = 7

    def __init__(self, name, norm_shape, eps=1e-5):
        self.name = name
        self.norm_shape = tuple(norm_shape)
        self.eps = eps
        n = _prod(self.norm_shape)
        self.gain = const_param(f"{name}.gain", (n,), 1.0)
        self.bias = const_param(f"{name}.bias", (n,), 0.0)

    def params(self):
        return [self.gain, self.bias]

    def __call__(self, x):
        k = len(self.norm_shape)
        if tuple(x.shape[-k:]) != self.norm_shape:
            raise ShapeError(f"{self.name}: expects trailing {self.norm_shape}, got {x.shape}",
                             x.shape, self.norm_shape)
        if k == 1:
            return ad.layer_norm(x, self.gain.value, self.bias.value, self.eps)
        lead = x.shape[:-k]
        flat = ad.reshape(x, lead + (self.gain.shape[0],))
        y = ad.layer_norm(flat, self.gain.value, self.bias.value, self.eps)
        return ad.reshape(y, x.shape)

    def flops(self, in_shape):
        return self.FLOPS_PER_ELEMENT * _prod(in_shape)


class ReLU(Layer):
    def __call__(self, x):
        return ad.relu(x)

    def flops(self, in_shape):
        return _prod(in_shape)


class Embedding(Layer):
    def __init__(self, name, vocab, dim, seed=0):
        self.name, self.vocab, self.dim = name, vocab, dim
        self.table = Parameter(f"{name}.table",
                               param_rng(seed, f"{name}.table").normal(0.0, 0.1, (vocab, dim)))

    def params(self):
        return [self.table]

    def __call__(self, ids):
        return ad.embedding_lookup(self.table.value, ids)

    def out_shape(self, in_shape):
        return tuple(in_shape) + (self.dim,)


class LSTM(Layer):
    """Sequence LSTM from zero state: (T, X) -> (T, H)."""

    def __init__(self, name, n_in, hidden, seed=0):
        self.name, self.n_in, self.hidden = name, n_in, hidden
        self.w = uniform_param(f"{name}.w", (n_in + hidden, 4 * hidden), hidden, seed)
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0  # forget gate starts open
        self.b = Parameter(f"{name}.b", bias)

    def params(self):
        return [self.w, self.b]

    def __call__(self, x):
        return ad.lstm_sequence(x, self.w.value, self.b.value)

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[1] != self.n_in:
            raise ShapeError(f"{self.name}: expects (T, {self.n_in}), got {tuple(in_shape)}",
                             in_shape)
        return (in_shape[0], self.hidden)

    @staticmethod
    def step_flops(n_in, hidden):
        # gate matmul + gate bias + 3 sigmoid + 2 tanh + c update (3) + h product (1)
        return 2 * 4 * hidden * (hidden + n_in) + 4 * hidden + 5 * hidden + 4 * hidden

    def flops(self, in_shape):
        return in_shape[0] * self.step_flops(self.n_in, self.hidden)


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def out_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.out_shape(in_shape)
        return tuple(in_shape)

    def flops(self, in_shape):
        total = 0
        for layer in self.layers:
            total += layer.flops(in_shape)
            in_shape = layer.out_shape(in_shape)
        return total
