"""Chain blocks, adapters, and the sleep/dream connections that fuse them
with a shared autoencoder bundle.

A sleep block computes ``g(h) + post(encode(pre(h)))``; a dream block
computes ``g(h) + post(reconstruct(pre(h)))`` and also returns the
reconstruction (the "dream") for the parallel branch. ``pre`` brings the
block input to the bundle's input contract and ``post`` brings the bundle
output back to the chain block's output shape. Post-adapters carry no bias,
so a bundle that outputs zeros leaves the chain output untouched.
"""

import math

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .layers import (LSTM, Conv2d, Deconv2d, Dense, Layer, LayerNorm, Parameter, ReLU,
                     Sequential, param_rng)


class Identity(Layer):
    def __call__(self, x):
        return x


class Flatten(Layer):
    def __call__(self, x):
        return ad.reshape(x, (x.shape[0], -1))

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Unflatten(Layer):
    def __init__(self, shape):
        self.shape = tuple(shape)

    def __call__(self, x):
        return ad.reshape(x, (x.shape[0],) + self.shape)

    def out_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot unflatten {tuple(in_shape)} into {self.shape}",
                             in_shape, self.shape)
        return self.shape


class RepeatSteps(Layer):
    """(H,) -> (T, H)."""

    def __init__(self, steps):
        self.steps = steps

    def __call__(self, x):
        return ad.repeat_steps(x, self.steps)

    def out_shape(self, in_shape):
        return (self.steps,) + tuple(in_shape)


class Quantizer(Layer):
    """Hidden sequence (T, H) -> token ids (T,) via argmax of softmax(h @ proj).

    The ids carry no graph edges, so no gradient reaches the hidden states or
    ``proj`` through this path.
    """

    def __init__(self, name, width, vocab, seed=0):
        self.name, self.width, self.vocab = name, width, vocab
        bound = 1.0 / math.sqrt(width)
        self.proj = Parameter(f"{name}.proj",
                              param_rng(seed, f"{name}.proj").uniform(-bound, bound,
                                                                      (width, vocab)))

    def params(self):
        return [self.proj]

    def __call__(self, hidden):
        return quantize_sequence(hidden, self.proj)

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[1] != self.width:
            raise ShapeError(f"{self.name}: expects (T, {self.width}), got {tuple(in_shape)}",
                             in_shape)
        return (in_shape[0],)

    def flops(self, in_shape):
        steps = in_shape[0]
        # projection, softmax (exp, sum, divide), argmax comparisons
        return steps * (2 * self.width * self.vocab + 3 * self.vocab + self.vocab)


def quantize_sequence(hidden, proj):
    """Per-position token ids, shape (B, T), all in ``[0, V)``."""
    proj = proj.value if isinstance(proj, Parameter) else proj
    probs = ad.softmax(ad.dense(hidden, proj), axis=-1)
    return ad.argmax(probs, axis=-1)


# ---------------------------------------------------------------------------
# chain blocks


class ChainBlock(Layer):
    """``layers`` x (conv -> norm -> relu) for images, (lstm -> norm) for text."""

    def __init__(self, name, task, in_shape, width, layers=1, kernel=3, norm=True, seed=0):
        self.name, self.task = name, task
        self.in_shape = tuple(in_shape)
        seq = []
        shape = self.in_shape
        for i in range(1, layers + 1):
            if task == "visual":
                if kernel % 2 == 0:
                    raise ConfigError(f"{name}: chain kernel must be odd, got {kernel}")
                seq.append(Conv2d(f"{name}.conv{i}", shape[0], width, kernel, 1, kernel // 2,
                                  seed=seed))
                shape = seq[-1].out_shape(shape)
                if norm:
                    seq.append(LayerNorm(f"{name}.norm{i}", shape))
                seq.append(ReLU())
            elif task == "textual":
                seq.append(LSTM(f"{name}.lstm{i}", shape[-1], width, seed=seed))
                shape = seq[-1].out_shape(shape)
                if norm:
                    seq.append(LayerNorm(f"{name}.norm{i}", (width,)))
            else:
                raise ConfigError(f"unknown task {task!r}")
        self.seq = Sequential(seq)
        self.out = tuple(shape)

    def params(self):
        return self.seq.params()

    def __call__(self, h):
        if tuple(h.shape[1:]) != self.in_shape:
            raise ShapeError(f"{self.name}: expects input {self.in_shape}, got {h.shape[1:]}",
                             h.shape, self.in_shape)
        return self.seq(h)

    def out_shape(self, in_shape=None):
        if in_shape is not None and tuple(in_shape) != self.in_shape:
            raise ShapeError(f"{self.name}: expects input {self.in_shape}, got {tuple(in_shape)}",
                             in_shape, self.in_shape)
        return self.out

    def flops(self, in_shape=None):
        return self.seq.flops(self.in_shape)


def chain_forward(block, h):
    return block(h)


# ---------------------------------------------------------------------------
# adapters


def _square(shape, what):
    if shape[1] != shape[2]:
        raise ShapeError(f"{what}: adapters need square feature maps, got {tuple(shape)}", shape)
    return shape[1]


def make_pre_adapter(name, task, in_shape, bundle, seed=0):
    """Map block inputs onto ``bundle.input_shape``."""
    in_shape, target = tuple(in_shape), tuple(bundle.input_shape)
    if task == "textual":
        if len(target) != 1 or target[0] != in_shape[0]:
            raise ShapeError(f"{name}: bundle expects {target} ids, block has {in_shape[0]} steps",
                             in_shape, target)
        return Quantizer(f"{name}.quant", in_shape[1], bundle.vocab, seed=seed)
    if in_shape == target:
        return Identity()
    size, tsize = _square(in_shape, name), _square(target, name)
    layers = []
    stride = max(1, math.ceil(tsize / size))
    shape = in_shape
    if stride > 1:
        layers.append(Deconv2d(f"{name}.deconv", in_shape[0], in_shape[0], stride, stride, 0,
                               seed=seed))
        shape = layers[-1].out_shape(shape)
    # crop to the exact size with a valid-mode kernel while projecting channels
    layers.append(Conv2d(f"{name}.conv", shape[0], target[0], shape[1] - tsize + 1, 1, 0,
                         seed=seed))
    adapter = Sequential(layers)
    if adapter.out_shape(in_shape) != target:
        raise ShapeError(f"{name}: synthesized adapter yields {adapter.out_shape(in_shape)}, "
                         f"bundle expects {target}", in_shape, target)
    return adapter


def make_post_adapter(name, task, source_shape, out_shape, seed=0):
    """Map a bundle output (latent vector or reconstruction) onto
    ``out_shape``; bias-free so zero maps to zero."""
    source_shape, out_shape = tuple(source_shape), tuple(out_shape)
    if source_shape == out_shape:
        return Identity()
    if len(source_shape) == 1:
        if task == "textual":
            return Sequential([Dense(f"{name}.dense", source_shape[0], out_shape[1],
                                     seed=seed, bias=False),
                               RepeatSteps(out_shape[0])])
        return Sequential([Dense(f"{name}.dense", source_shape[0], int(np.prod(out_shape)),
                                 seed=seed, bias=False),
                           Unflatten(out_shape)])
    if task == "textual":
        if source_shape[0] != out_shape[0]:
            raise ShapeError(f"{name}: {source_shape} vs {out_shape} step mismatch",
                             source_shape, out_shape)
        return Dense(f"{name}.dense", source_shape[1], out_shape[1], seed=seed, bias=False)
    size, osize = _square(source_shape, name), _square(out_shape, name)
    if size < osize:
        raise ShapeError(f"{name}: cannot downscale {source_shape} to larger {out_shape}",
                         source_shape, out_shape)
    stride = size // osize
    kernel = size - (osize - 1) * stride
    adapter = Sequential([
        Conv2d(f"{name}.conv", source_shape[0], out_shape[0], kernel, stride, 0,
               seed=seed, bias=False),
        Conv2d(f"{name}.proj", out_shape[0], out_shape[0], 1, 1, 0, seed=seed, bias=False),
    ])
    if adapter.out_shape(source_shape) != out_shape:
        raise ShapeError(f"{name}: synthesized adapter yields {adapter.out_shape(source_shape)}, "
                         f"block expects {out_shape}", source_shape, out_shape)
    return adapter


class Adapter:
    """Pair of shape adapters around a bundle."""

    def __init__(self, pre, post):
        self.pre, self.post = pre, post

    def params(self):
        return self.pre.params() + self.post.params()

    @property
    def is_identity(self):
        return isinstance(self.pre, Identity) and isinstance(self.post, Identity)


# ---------------------------------------------------------------------------
# sleep and dream blocks


class SleepBlock:
    uses = "encode"

    def __init__(self, name, chain, bundle, seed=0, identity_adapters=False):
        self.name, self.chain, self.bundle = name, chain, bundle
        task = chain.task
        pre = make_pre_adapter(f"{name}.pre", task, chain.in_shape, bundle, seed)
        source = self._source_shape(bundle)
        post = make_post_adapter(f"{name}.post", task, source, chain.out, seed)
        self.adapter = Adapter(pre, post)
        if identity_adapters and not self.adapter.is_identity:
            raise ShapeError(f"{name}: identity adapters requested but block shape "
                             f"{chain.in_shape}->{chain.out} does not match bundle "
                             f"{tuple(bundle.input_shape)}->{source}",
                             chain.in_shape, bundle.input_shape)

    @staticmethod
    def _source_shape(bundle):
        return (bundle.latent_dim,)

    @property
    def in_shape(self):
        return self.chain.in_shape

    @property
    def out_shape(self):
        return self.chain.out

    def params(self):
        return self.chain.params() + self.adapter.params()

    def connection(self, h):
        return self.adapter.post(self.bundle.encode(self.adapter.pre(h)))

    def __call__(self, h):
        return ad.add(self.chain(h), self.connection(h))


class DreamBlock(SleepBlock):
    uses = "reconstruct"

    @staticmethod
    def _source_shape(bundle):
        return tuple(bundle.recon_shape)

    def dream(self, h):
        return self.bundle.reconstruct(self.adapter.pre(h))

    def forward_with_dream(self, h):
        dream = self.dream(h)
        return ad.add(self.chain(h), self.adapter.post(dream)), dream

    def __call__(self, h):
        return self.forward_with_dream(h)


def sleep_forward(block, h):
    return block(h)


def dream_forward(block, h):
    """Returns ``(out, dream)``."""
    return block.forward_with_dream(h)


# ---------------------------------------------------------------------------
# dream branch


class DreamBranch(Layer):
    """Shared refinement stack applied to every dream; the pooled per-dream
    vectors are summed."""

    def __init__(self, name, task, dream_shape, depth=2, width=8, seed=0):
        self.name, self.task = name, task
        self.dream_shape = tuple(dream_shape)
        self.width = width
        layers = []
        shape = self.dream_shape
        for i in range(1, depth + 1):
            if task == "visual":
                # the first layer halves even-sized maps to keep dream refinement cheap
                if i == 1 and shape[1] % 2 == 0 and shape[1] >= 8:
                    conv = Conv2d(f"{name}.conv{i}", shape[0], width, 4, 2, 1, seed=seed)
                else:
                    conv = Conv2d(f"{name}.conv{i}", shape[0], width, 3, 1, 1, seed=seed)
                layers.append(conv)
                shape = layers[-1].out_shape(shape)
                layers.append(LayerNorm(f"{name}.norm{i}", shape))
                layers.append(ReLU())
            else:
                layers.append(LSTM(f"{name}.lstm{i}", shape[-1], width, seed=seed))
                shape = layers[-1].out_shape(shape)
        self.seq = Sequential(layers)
        self.refined_shape = tuple(shape)

    def params(self):
        return self.seq.params()

    def pooled(self, dream):
        z = self.seq(dream)
        axes = (2, 3) if self.task == "visual" else (1,)
        return ad.mean(z, axis=axes)

    def __call__(self, dreams):
        return dream_branch_forward(dreams, self)

    def out_shape(self, in_shape=None):
        return (self.refined_shape[0] if self.task == "visual" else self.refined_shape[-1],)

    def flops_per_dream(self):
        return self.seq.flops(self.dream_shape) + int(np.prod(self.refined_shape))


def dream_branch_forward(dreams, branch):
    dreams = list(dreams)
    if not dreams:
        raise ShapeError("dream branch needs at least one dream tensor")
    total = None
    for d in dreams:
        if tuple(d.shape[1:]) != branch.dream_shape:
            raise ShapeError(f"dream shape {d.shape[1:]} vs branch input {branch.dream_shape}",
                             d.shape, branch.dream_shape)
        v = branch.pooled(d)
        total = v if total is None else ad.add(total, v)
    return total
