"""Autoencoder bundles: a pretrained encoder and decoder shared by every
sleep or dream connection of a model.

Four architectures are available, selected by ``arch["type"]``:

``conv``
    images: two stride-2 convolutions, a dense latent, then the mirror image
    with transposed convolutions.
``lstm``
    token ids: embedding, LSTM encoder whose last state is projected to the
    latent; the decoder repeats the latent over time through a second LSTM
    and projects to embedding width (the tensor handed to dream
    connections); token logits reuse the embedding table as readout.
``zero`` / ``identity``
    fixed stubs for exact equivalence tests.
"""

import hashlib
import logging
import math

import numpy as np

from . import autodiff as ad
from . import formats
from .data import batches
from .errors import ConfigError, DivergenceError, FormatError, ShapeError
from .layers import LSTM, Conv2d, Deconv2d, Dense, Embedding
from .optim import OptimizerConfig, adam_step

logger = logging.getLogger(__name__)

BUNDLE_FORMAT = "somnus.bundle"


class AutoencoderBundle:
    """Encoder/decoder pair with its pretraining manifest."""

    kind = None
    prefix = "bundle"

    def __init__(self, arch, seed=0):
        self.arch = dict(arch)
        self.seed = seed
        self.manifest = {}

    # subclasses provide: input_shape, latent_dim, recon_shape, encoder/decoder
    # layer lists, encode(), reconstruct()

    def encoder_params(self):
        return [p for layer in self.encoder for p in layer.params()]

    def decoder_params(self):
        return [p for layer in self.decoder for p in layer.params()]

    def params(self):
        return self.encoder_params() + self.decoder_params()

    def set_frozen(self, frozen):
        for p in self.params():
            p.trainable = not frozen

    @property
    def frozen(self):
        return not any(p.trainable for p in self.params())

    def _check_input(self, h):
        if tuple(h.shape[1:]) != tuple(self.input_shape):
            raise ShapeError(f"bundle expects input {tuple(self.input_shape)}, got {h.shape[1:]}",
                             h.shape, self.input_shape)

    def recon_loss(self, x):
        """Pretraining objective on a raw batch."""
        raise NotImplementedError

    def encode_flops(self):
        raise NotImplementedError

    def decode_flops(self):
        raise NotImplementedError


class ConvAutoencoder(AutoencoderBundle):
    kind = "visual"

    def __init__(self, arch, seed=0):
        super().__init__(arch, seed)
        c, h, w = self.input_shape = tuple(arch["input_shape"])
        c1, c2 = arch.get("channels", [4, 8])
        if h % 4 or w % 4:
            raise ConfigError(f"conv autoencoder needs H, W divisible by 4, got {h}x{w}")
        self.latent_dim = int(arch["latent_dim"])
        self.recon_shape = self.input_shape
        self._inner = (c2, h // 4, w // 4)
        flat = c2 * (h // 4) * (w // 4)
        p = self.prefix
        self.conv1 = Conv2d(f"{p}.enc.conv1", c, c1, 4, 2, 1, seed=seed)
        self.conv2 = Conv2d(f"{p}.enc.conv2", c1, c2, 4, 2, 1, seed=seed)
        self.to_latent = Dense(f"{p}.enc.latent", flat, self.latent_dim, seed=seed)
        self.from_latent = Dense(f"{p}.dec.latent", self.latent_dim, flat, seed=seed)
        self.deconv1 = Deconv2d(f"{p}.dec.deconv1", c2, c1, 4, 2, 1, seed=seed)
        self.deconv2 = Deconv2d(f"{p}.dec.deconv2", c1, c, 4, 2, 1, seed=seed)
        self.encoder = [self.conv1, self.conv2, self.to_latent]
        self.decoder = [self.from_latent, self.deconv1, self.deconv2]

    def encode(self, h):
        self._check_input(h)
        z = ad.relu(self.conv2(ad.relu(self.conv1(h))))
        return self.to_latent(ad.reshape(z, (h.shape[0], -1)))

    def decode(self, latent):
        z = ad.relu(self.from_latent(latent))
        z = ad.reshape(z, (latent.shape[0],) + self._inner)
        return self.deconv2(ad.relu(self.deconv1(z)))

    def reconstruct(self, h):
        return self.decode(self.encode(h))

    def recon_loss(self, x):
        x = ad.Tensor(x)
        return ad.mse(self.reconstruct(x), x)

    def encode_flops(self):
        s0 = self.input_shape
        s1 = self.conv1.out_shape(s0)
        s2 = self.conv2.out_shape(s1)
        flat = int(np.prod(s2))
        return (self.conv1.flops(s0) + int(np.prod(s1)) + self.conv2.flops(s1)
                + flat + self.to_latent.flops((flat,)))

    def decode_flops(self):
        flat = int(np.prod(self._inner))
        s1 = self.deconv1.out_shape(self._inner)
        return (self.from_latent.flops((self.latent_dim,)) + flat
                + self.deconv1.flops(self._inner) + int(np.prod(s1))
                + self.deconv2.flops(s1))


class LSTMAutoencoder(AutoencoderBundle):
    kind = "textual"

    def __init__(self, arch, seed=0):
        super().__init__(arch, seed)
        self.vocab = int(arch["vocab"])
        self.steps = int(arch["steps"])
        self.embed_dim = int(arch.get("embed", 32))
        self.hidden = int(arch.get("hidden", 32))
        self.latent_dim = int(arch["latent_dim"])
        self.input_shape = (self.steps,)
        self.recon_shape = (self.steps, self.embed_dim)
        p = self.prefix
        self.embedding = Embedding(f"{p}.enc.embed", self.vocab, self.embed_dim, seed=seed)
        self.enc_lstm = LSTM(f"{p}.enc.lstm", self.embed_dim, self.hidden, seed=seed)
        self.to_latent = Dense(f"{p}.enc.latent", self.hidden, self.latent_dim, seed=seed)
        self.dec_lstm = LSTM(f"{p}.dec.lstm", self.latent_dim, self.hidden, seed=seed)
        self.to_embed = Dense(f"{p}.dec.embed", self.hidden, self.embed_dim, seed=seed)
        self.encoder = [self.embedding, self.enc_lstm, self.to_latent]
        self.decoder = [self.dec_lstm, self.to_embed]

    def _ids(self, ids):
        ids = ids if isinstance(ids, ad.Tensor) else ad.Tensor(np.asarray(ids, dtype=np.int64))
        self._check_input(ids)
        return ids

    def encode(self, ids):
        ids = self._ids(ids)
        hs = self.enc_lstm(self.embedding(ids))
        last = ad.take(hs, self.steps - 1, self.steps, axis=1)
        return self.to_latent(ad.reshape(last, (ids.shape[0], self.hidden)))

    def decode(self, latent):
        return self.to_embed(self.dec_lstm(ad.repeat_steps(latent, self.steps)))

    def reconstruct(self, ids):
        return self.decode(self.encode(ids))

    def token_logits(self, recon):
        # vocabulary readout tied to the encoder embedding table
        return ad.dense(recon, ad.transpose(self.embedding.table.value, (1, 0)))

    def decode_tokens(self, recon):
        """Most likely token id at each position of a reconstruction."""
        return ad.argmax(self.token_logits(recon), axis=-1)

    def recon_loss(self, ids):
        logits = self.token_logits(self.reconstruct(ids))
        b = logits.shape[0]
        return ad.cross_entropy(ad.reshape(logits, (b * self.steps, self.vocab)),
                                np.asarray(ids).reshape(-1))

    def encode_flops(self):
        t = self.steps
        return (self.enc_lstm.flops((t, self.embed_dim))
                + self.to_latent.flops((self.hidden,)))

    def decode_flops(self):
        t = self.steps
        return (self.dec_lstm.flops((t, self.latent_dim))
                + self.to_embed.flops((t, self.hidden)))


class ZeroStub(AutoencoderBundle):
    """Linear maps with all-zero weights: every output is exactly zero."""

    def __init__(self, arch, seed=0):
        super().__init__(arch, seed)
        self.kind = arch["kind"]
        self.input_shape = tuple(arch["input_shape"])
        self.latent_dim = int(arch["latent_dim"])
        p = self.prefix
        if self.kind == "visual":
            self.recon_shape = self.input_shape
            flat = int(np.prod(self.input_shape))
            self.enc = Dense(f"{p}.enc.zero", flat, self.latent_dim, bias=False)
        else:
            self.embed_dim = int(arch["embed"])
            self.vocab = int(arch["vocab"])
            self.recon_shape = (self.input_shape[0], self.embed_dim)
            self.enc = Embedding(f"{p}.enc.zero", self.vocab, self.latent_dim)
        self.dec = Dense(f"{p}.dec.zero", self.latent_dim, int(np.prod(self.recon_shape)),
                         bias=False)
        for layer in (self.enc, self.dec):
            for prm in layer.params():
                prm.value.data = np.zeros_like(prm.value.data)
        self.encoder, self.decoder = [self.enc], [self.dec]
        self.set_frozen(True)

    def encode(self, h):
        self._check_input(h)
        if self.kind == "visual":
            return self.enc(ad.reshape(h, (h.shape[0], -1)))
        return ad.mean(self.enc(h), axis=1)

    def reconstruct(self, h):
        z = self.dec(self.encode(h))
        return ad.reshape(z, (h.shape[0],) + self.recon_shape)

    def set_frozen(self, frozen):
        super().set_frozen(True)

    def encode_flops(self):
        return 0

    def decode_flops(self):
        return 0


class IdentityStub(AutoencoderBundle):
    """``encode`` flattens and ``reconstruct`` returns its input unchanged."""

    kind = "visual"

    def __init__(self, arch, seed=0):
        super().__init__(arch, seed)
        if arch.get("kind", "visual") != "visual":
            raise ShapeError("identity stub is defined for image inputs only; token ids "
                             "cannot be reproduced at embedding width")
        self.input_shape = self.recon_shape = tuple(arch["input_shape"])
        self.latent_dim = int(np.prod(self.input_shape))
        if int(arch.get("latent_dim", self.latent_dim)) != self.latent_dim:
            raise ShapeError(f"identity stub needs latent_dim = {self.latent_dim}",
                             self.input_shape)
        self.encoder, self.decoder = [], []

    def encode(self, h):
        self._check_input(h)
        return ad.reshape(h, (h.shape[0], self.latent_dim))

    def reconstruct(self, h):
        self._check_input(h)
        return h

    def encode_flops(self):
        return 0

    def decode_flops(self):
        return 0


_ARCHS = {"conv": ConvAutoencoder, "lstm": LSTMAutoencoder,
          "zero": ZeroStub, "identity": IdentityStub}


def build_bundle(arch, seed=0):
    kind = arch.get("type")
    if kind not in _ARCHS:
        raise ConfigError(f"unknown autoencoder type {kind!r}; choose from {sorted(_ARCHS)}")
    try:
        return _ARCHS[kind](arch, seed)
    except KeyError as exc:
        raise ConfigError(f"autoencoder arch {kind!r} is missing key {exc}") from None


def make_stub(kind, input_shape, task="visual", **extra):
    """Zero or identity bundle for exact block-level identities.

    Textual zero stubs need ``vocab`` and ``embed`` in ``extra``.
    """
    input_shape = tuple(input_shape)
    if kind == "identity":
        arch = {"type": "identity", "kind": task, "input_shape": list(input_shape)}
        if "latent_dim" in extra:
            arch["latent_dim"] = extra["latent_dim"]
        return IdentityStub(arch)
    if kind == "zero":
        arch = {"type": "zero", "kind": task, "input_shape": list(input_shape),
                "latent_dim": extra.get("latent_dim", 8)}
        if task == "textual":
            arch["vocab"], arch["embed"] = extra["vocab"], extra["embed"]
        return ZeroStub(arch)
    raise ConfigError(f"unknown stub kind {kind!r}")


# ---------------------------------------------------------------------------
# encode / reconstruct as free functions


def encode(bundle, h):
    return bundle.encode(h)


def reconstruct(bundle, h):
    return bundle.reconstruct(h)


def _loss_on(bundle, inputs, batch_size):
    total, count = 0.0, 0
    for idx in batches(len(inputs), batch_size):
        loss = bundle.recon_loss(inputs[idx])
        total += loss.item() * len(idx)
        count += len(idx)
    return total / max(count, 1)


def pretrain(inputs, arch, epochs, seed=0, opt=None, holdout=0.1):
    """Fit an autoencoder on unlabeled ``inputs`` (images or token ids).

    A ``holdout`` fraction is kept aside; ``manifest["final_loss"]`` is the
    held-out reconstruction loss after the last epoch. With a single sample
    the training set doubles as the held-out set.
    """
    opt = opt or OptimizerConfig()
    inputs = np.asarray(inputs)
    if len(inputs) == 0:
        raise ConfigError("pretrain: empty dataset")
    bundle = build_bundle(arch, seed)
    bundle.set_frozen(False)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(inputs))
    n_hold = int(round(len(inputs) * holdout)) if len(inputs) > 1 else 0
    held = inputs[np.sort(order[:n_hold])] if n_hold else inputs
    train = inputs[np.sort(order[n_hold:])]
    params = bundle.params()

    initial = _loss_on(bundle, held, opt.batch_size)
    history = []
    for epoch in range(epochs):
        total = 0.0
        for idx in batches(len(train), opt.batch_size, rng):
            loss = bundle.recon_loss(train[idx])
            if not math.isfinite(loss.item()):
                raise DivergenceError(f"pretraining loss became {loss.item()} in epoch {epoch + 1}")
            ad.backward(loss)
            adam_step(params, opt)
            total += loss.item() * len(idx)
        history.append(total / len(train))
        logger.debug("pretrain epoch %d loss %.6g", epoch + 1, history[-1])
    final = _loss_on(bundle, held, opt.batch_size) if epochs else initial

    bundle.manifest = {
        "dataset_sha256": hashlib.sha256(np.ascontiguousarray(inputs).tobytes()).hexdigest(),
        "n_samples": int(len(inputs)),
        "n_holdout": int(n_hold),
        "epochs": int(epochs),
        "seed": int(seed),
        "lr": opt.lr,
        "initial_loss": initial,
        "final_loss": final,
        "train_loss": history,
    }
    bundle.set_frozen(True)
    return bundle


# ---------------------------------------------------------------------------
# persistence


def bundle_to_bytes(bundle):
    header = {"format": BUNDLE_FORMAT, "arch": bundle.arch, "seed": bundle.seed,
              "kind": bundle.kind, "latent_dim": bundle.latent_dim,
              "input_shape": list(bundle.input_shape), "train_manifest": bundle.manifest}
    return formats.dumps_slpn(header, [(p.name, p.value.data) for p in bundle.params()])


def bundle_from_bytes(buf, path=None):
    header, arrays = formats.loads_slpn(buf, path=path)
    if header.get("format") != BUNDLE_FORMAT:
        raise FormatError(f"not an autoencoder bundle (format {header.get('format')!r})",
                          offset=8, path=path)
    bundle = build_bundle(header["arch"], header.get("seed", 0))
    bundle.manifest = header.get("train_manifest", {})
    _assign(bundle.params(), arrays, path)
    bundle.set_frozen(True)
    return bundle


def _assign(params, arrays, path=None):
    by_name = {p.name: p for p in params}
    if sorted(by_name) != sorted(name for name, _ in arrays):
        raise FormatError(f"parameter set mismatch: file has {sorted(n for n, _ in arrays)}, "
                          f"architecture expects {sorted(by_name)}", path=path)
    for name, arr in arrays:
        p = by_name[name]
        if arr.shape != p.shape:
            raise FormatError(f"parameter {name!r}: file shape {arr.shape} vs {p.shape}",
                              path=path)
        p.value.data = arr.astype(ad.default_dtype())


def save(bundle, path):
    formats._write_bytes(path, bundle_to_bytes(bundle))


def load(path):
    return bundle_from_bytes(formats._read_bytes(path), path=path)


__all__ = ["AutoencoderBundle", "ConvAutoencoder", "LSTMAutoencoder", "ZeroStub",
           "IdentityStub", "build_bundle", "make_stub", "encode",
           "reconstruct", "pretrain", "save", "load"]
