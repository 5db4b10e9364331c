"""Assembly of chain-only, SleepNet-M and DreamNet-M models."""

import logging
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import formats
from .blocks import ChainBlock, DreamBlock, DreamBranch, SleepBlock
from .data import IMAGE_KINDS, TEXT_KINDS
from .errors import ConfigError, FormatError, ShapeError
from .layers import Conv2d, Dense, Embedding, ReLU, Sequential

logger = logging.getLogger(__name__)

MODEL_FORMAT = "somnus.model"


@dataclass(frozen=True)
class Dims:
    """Data-dependent sizes a model is built for."""

    input_shape: tuple
    num_classes: int
    vocab_size: int = None

    @classmethod
    def from_config(cls, config):
        d = config.data
        if config.task == "visual":
            k = len(IMAGE_KINDS.get(d.kind, ())) or None
            return cls((1, d.size, d.size), k)
        return cls((d.steps,), TEXT_KINDS.get(d.kind), d.vocab_size)

    @classmethod
    def from_dataset(cls, ds):
        return cls(tuple(ds.sample_shape), ds.class_count, getattr(ds, "vocab_size", None))


class BlockGraph:
    """A built model: stem, M blocks, optional dream branch, head, and a
    registry holding every parameter exactly once."""

    def __init__(self, config, dims, stem, blocks, head, branch=None, bundle=None):
        self.config = config
        self.dims = dims
        self.task = config.task
        self.variant = config.variant
        self.M = len(blocks)
        self.stem = stem
        self.blocks = blocks
        self.head = head
        self.branch = branch
        self.bundle = bundle
        self.merge = config.model.merge
        self.pool = config.model.pool
        self.registry = OrderedDict()
        groups = [stem.params()] + [b.params() for b in blocks]
        if bundle is not None:
            groups.append(self.bundle_params())
        if branch is not None:
            groups.append(branch.params())
        groups.append(head.params())
        for group in groups:
            for p in group:
                if p.name in self.registry:
                    raise ConfigError(f"parameter {p.name!r} registered twice")
                self.registry[p.name] = p

    @property
    def model_id(self):
        return self.config.model_id

    @property
    def num_classes(self):
        return self.dims.num_classes

    def parameters(self):
        return list(self.registry.values())

    def bundle_params(self):
        """Bundle parameters the forward pass uses: sleep connections only
        run the encoder."""
        if self.bundle is None:
            return []
        if self.variant == "sleep":
            return self.bundle.encoder_params()
        return self.bundle.params()

    def set_freeze(self, mode):
        if self.bundle is not None:
            self.bundle.set_frozen(mode == "frozen")

    def _input(self, batch):
        if isinstance(batch, ad.Tensor):
            x = batch
        elif self.task == "textual":
            x = ad.Tensor(np.asarray(batch, dtype=np.int64))
        else:
            x = ad.Tensor(batch)
        if tuple(x.shape[1:]) != tuple(self.dims.input_shape):
            raise ShapeError(f"{self.model_id}: batch sample shape {x.shape[1:]} vs "
                             f"expected {tuple(self.dims.input_shape)}",
                             x.shape, self.dims.input_shape)
        return x

    def _pool_main(self, h):
        if self.task == "visual":
            z = ad.avg_pool2d(h, self.pool)
            return ad.reshape(z, (h.shape[0], -1))
        return ad.mean(h, axis=1)

    def trace(self, batch):
        """Forward pass keeping every intermediate: ``hidden`` (h_0..h_M),
        ``adapted`` (bundle inputs), ``dreams`` and ``logits``."""
        x = self._input(batch)
        h = self.stem(x)
        hidden, adapted, dreams = [h], [], []
        for block in self.blocks:
            if isinstance(block, DreamBlock):
                a = block.adapter.pre(h)
                d = block.bundle.reconstruct(a)
                h = ad.add(block.chain(h), block.adapter.post(d))
                adapted.append(a)
                dreams.append(d)
            else:
                h = block(h)
            hidden.append(h)
        feats = self._pool_main(h)
        if self.branch is not None:
            dv = self.branch(dreams)
            feats = ad.concat([feats, dv], axis=-1) if self.merge == "concat" else ad.add(feats, dv)
        logits = self.head(feats)
        return {"hidden": hidden, "adapted": adapted, "dreams": dreams, "logits": logits}

    def forward(self, batch):
        return self.trace(batch)["logits"]

    __call__ = forward

    def block_shapes(self):
        """Statically inferred (in, out) shape per block boundary."""
        return [(b.in_shape, getattr(b, "chain", b).out) for b in self.blocks]

    def state_arrays(self):
        return [(name, p.value.data) for name, p in self.registry.items()]


def forward(graph, batch):
    return graph.forward(batch)


def _resolve_width(config):
    if config.model.width is not None:
        return config.model.width
    return 8 if config.task == "visual" else 64


def make_stem(config, dims):
    """The input stem and the hidden shape it produces."""
    width = _resolve_width(config)
    if config.task == "visual":
        c = dims.input_shape[0]
        # stride 1: 3x3 same conv; stride s > 1: 2s kernel, padding s/2 halves exactly
        s = config.model.stem_stride
        k, pad = (3, 1) if s == 1 else (2 * s, s // 2)
        stem = Sequential([Conv2d("stem.conv", c, width, k, s, pad, seed=config.seed), ReLU()])
    else:
        if not dims.vocab_size:
            raise ConfigError("textual model needs a vocabulary size")
        stem = Embedding("stem.embed", dims.vocab_size, width, seed=config.seed)
    return stem, tuple(stem.out_shape(dims.input_shape))


def build(config, bundle=None, dims=None):
    """Assemble and shape-check the model described by ``config``.

    ``bundle`` is required for sleep and dream variants and ignored (must be
    None) for chain-only models. The bundle's freeze state follows
    ``config.freeze``.
    """
    dims = dims or Dims.from_config(config)
    if not dims.num_classes:
        raise ConfigError("number of classes is unknown; build from a dataset")
    if config.variant == "chain":
        if bundle is not None:
            raise ConfigError("chain-only models take no autoencoder bundle")
    elif bundle is None:
        raise ConfigError(f"variant {config.variant!r} needs an autoencoder bundle")
    if config.blocks > 4:
        logger.warning("M=%d exceeds the 1..4 range studied; building anyway", config.blocks)
    if bundle is not None and bundle.kind != config.task:
        raise ConfigError(f"{bundle.kind} bundle cannot serve a {config.task} model")

    m = config.model
    seed = config.seed
    width = _resolve_width(config)
    stem, shape = make_stem(config, dims)

    blocks = []
    for i in range(1, config.blocks + 1):
        name = f"block{i}"
        try:
            chain = ChainBlock(name, config.task, shape, width, m.chain_layers,
                               m.chain_kernel, m.norm, seed=seed)
            if config.variant == "sleep":
                block = SleepBlock(name, chain, bundle, seed, m.identity_adapters)
            elif config.variant == "dream":
                block = DreamBlock(name, chain, bundle, seed, m.identity_adapters)
            else:
                block = chain
        except ShapeError as exc:
            raise ShapeError(f"block boundary {i - 1}->{i}: {exc}", *exc.shapes) from None
        blocks.append(block)
        shape = chain.out

    if config.task == "visual":
        if shape[1] % m.pool or shape[2] % m.pool:
            raise ShapeError(f"head pooling {m.pool} does not divide feature map {shape}", shape)
        main_width = shape[0] * (shape[1] // m.pool) * (shape[2] // m.pool)
    else:
        main_width = shape[1]

    branch = None
    head_in = main_width
    if config.variant == "dream":
        branch = DreamBranch("branch", config.task, bundle.recon_shape, m.branch_depth,
                             m.branch_width, seed=seed)
        if m.merge == "concat":
            head_in = main_width + m.branch_width
        elif m.branch_width != main_width:
            raise ShapeError(f"merge=add needs branch_width == pooled main width {main_width}",
                             (m.branch_width,), (main_width,))
    head = Dense("head", head_in, dims.num_classes, seed=seed)
    if bundle is not None:
        bundle.set_frozen(config.freeze == "frozen")
    return BlockGraph(config, dims, stem, blocks, head, branch, bundle)


# ---------------------------------------------------------------------------
# persistence of trained models


def save_model(graph, path):
    header = {"format": MODEL_FORMAT, "config": graph.config.to_dict(),
              "dims": {"input_shape": list(graph.dims.input_shape),
                       "num_classes": graph.dims.num_classes,
                       "vocab_size": graph.dims.vocab_size}}
    if graph.bundle is not None:
        header["bundle_arch"] = graph.bundle.arch
        header["bundle_manifest"] = graph.bundle.manifest
    formats.save_slpn(path, header, graph.state_arrays())


def load_model(path):
    from .autoencoder import _assign, build_bundle
    from .config import from_dict

    header, arrays = formats.load_slpn(path)
    if header.get("format") != MODEL_FORMAT:
        raise FormatError(f"not a model file (format {header.get('format')!r})",
                          offset=8, path=path)
    config = from_dict(header["config"])
    d = header["dims"]
    dims = Dims(tuple(d["input_shape"]), d["num_classes"], d["vocab_size"])
    bundle = None
    if "bundle_arch" in header:
        bundle = build_bundle(header["bundle_arch"])
        bundle.manifest = header.get("bundle_manifest", {})
    graph = build(config, bundle, dims)
    _assign(graph.parameters(), arrays, path)
    return graph
