"""Synthetic desk-scale datasets and their on-disk forms."""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import formats
from .errors import ConfigError

IMAGE_KINDS = {"shapes2": ("square", "cross"),
               "shapes4": ("square", "cross", "circle", "triangle")}
TEXT_KINDS = {"keyword2": 2, "keyword4": 4}


@dataclass
class ImageDataset:
    images: np.ndarray  # (n, C, H, W) in [0, 1]
    labels: np.ndarray  # (n,) int64
    class_count: int

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return tuple(self.images.shape[1:])

    @property
    def inputs(self):
        return self.images

    def subset(self, idx):
        return ImageDataset(self.images[idx], self.labels[idx], self.class_count)

    def fingerprint(self):
        return _fingerprint(self.images.astype("<f8"), self.labels)


@dataclass
class TextDataset:
    ids: np.ndarray  # (n, T) int64, 0 = padding
    labels: np.ndarray
    class_count: int
    vocab: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return (self.ids.shape[1],)

    @property
    def inputs(self):
        return self.ids

    @property
    def vocab_size(self):
        return len(self.vocab)

    def subset(self, idx):
        return TextDataset(self.ids[idx], self.labels[idx], self.class_count, self.vocab)

    def decode(self, ids):
        return " ".join(self.vocab[i] for i in ids if i != 0)

    def fingerprint(self):
        return _fingerprint(self.ids.astype("<i8"), self.labels)


def _fingerprint(inputs, labels):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(inputs).tobytes())
    h.update(np.asarray(labels, dtype="<i8").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# images


def shape_template(shape, size):
    """Binary mask of a centred geometric shape on a ``size`` x ``size`` grid."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    cy = cx = size / 2.0
    half = size / 4.0
    if shape == "square":
        mask = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    elif shape == "cross":
        arm, bar = size * 0.35, max(size / 16.0, 0.5)
        mask = (((np.abs(yy - cy) <= bar) & (np.abs(xx - cx) <= arm))
                | ((np.abs(xx - cx) <= bar) & (np.abs(yy - cy) <= arm)))
    elif shape == "circle":
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= (size * 0.3) ** 2
    elif shape == "triangle":
        top, bottom = cy - size * 0.3, cy + size * 0.3
        frac = (yy - top) / (bottom - top)
        mask = (frac >= 0) & (frac <= 1) & (np.abs(xx - cx) <= frac * size * 0.3)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return mask.astype(np.float64)


def gen_synthetic_images(kind, n, noise=0.0, seed=0, size=32):
    """Shapes on a grid, blended with uniform noise.

    Each image is ``(1 - noise) * template + noise * U[0, 1)``; for
    ``noise > 0`` the template is also shifted by up to ``round(20 * noise)``
    pixels per axis. Values are rounded to float32 so the SIMG round trip is
    exact.
    """
    if kind not in IMAGE_KINDS:
        raise ConfigError(f"unknown image dataset kind {kind!r}; choose from {sorted(IMAGE_KINDS)}")
    if n <= 0:
        raise ConfigError(f"n must be positive, got {n}")
    if not 0 <= noise < 0.5:
        raise ConfigError(f"noise must lie in [0, 0.5), got {noise}")
    shapes = IMAGE_KINDS[kind]
    k = len(shapes)
    rng = np.random.default_rng(seed)
    templates = [shape_template(s, size) for s in shapes]
    labels = rng.permutation(np.arange(n) % k)
    jitter = int(round(20 * noise))
    images = np.empty((n, 1, size, size))
    for i, lab in enumerate(labels):
        img = templates[lab]
        if jitter:
            dy, dx = rng.integers(-jitter, jitter + 1, size=2)
            img = np.roll(img, (dy, dx), axis=(0, 1))
        if noise:
            img = (1.0 - noise) * img + noise * rng.random((size, size))
        images[i, 0] = img
    images = np.clip(images, 0.0, 1.0).astype(np.float32).astype(np.float64)
    return ImageDataset(images, labels.astype(np.int64), k)


def save_images(path, ds):
    formats._write_bytes(path, formats.dumps_images(ds.images, ds.labels, ds.class_count))


def load_images(path):
    images, labels, k = formats.loads_images(formats._read_bytes(path), path=path)
    return ImageDataset(images, labels, k)


# ---------------------------------------------------------------------------
# text


def text_vocab(class_count, vocab_size):
    return (["<pad>"] + [f"kw{c}" for c in range(class_count)]
            + [f"w{i}" for i in range(vocab_size - class_count - 1)])


def gen_synthetic_text(kind, n, vocab_size=200, steps=32, seed=0, noise=0.0):
    """Random filler sequences in which id ``1 + label`` marks the class.

    Lengths are uniform in ``[steps // 2, steps]`` with 0-padding after. With
    probability ``noise`` a keyword of another class is inserted as well.
    """
    if kind not in TEXT_KINDS:
        raise ConfigError(f"unknown text dataset kind {kind!r}; choose from {sorted(TEXT_KINDS)}")
    k = TEXT_KINDS[kind]
    if n <= 0 or steps < 2:
        raise ConfigError(f"invalid sizes n={n} steps={steps}")
    if vocab_size <= 2 * k:
        raise ConfigError(f"vocab_size must exceed 2 x class count ({2 * k}), got {vocab_size}")
    if not 0 <= noise < 0.5:
        raise ConfigError(f"noise must lie in [0, 0.5), got {noise}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % k)
    ids = np.zeros((n, steps), dtype=np.int64)
    for i, lab in enumerate(labels):
        length = int(rng.integers(steps // 2, steps + 1))
        seq = rng.integers(k + 1, vocab_size, size=length)
        seq[rng.integers(0, length)] = 1 + lab
        if noise and rng.random() < noise:
            other = (lab + 1 + rng.integers(0, k - 1)) % k
            free = np.nonzero(seq > k)[0]
            seq[free[rng.integers(0, len(free))]] = 1 + other
        ids[i, :length] = seq
    return TextDataset(ids, labels.astype(np.int64), k, text_vocab(k, vocab_size))


def save_text(path, ds):
    formats._write_bytes(path, formats.dumps_text(ds.ids, ds.labels, ds.class_count, ds.vocab))


def load_text(path):
    ids, labels, k, vocab = formats.loads_text(formats._read_bytes(path), path=path)
    return TextDataset(ids, labels, k, vocab)


def load_dataset(path):
    """Dispatch on the magic bytes."""
    buf = formats._read_bytes(path)
    if buf[:4] == formats.STXT_MAGIC:
        ids, labels, k, vocab = formats.loads_text(buf, path=path)
        return TextDataset(ids, labels, k, vocab)
    images, labels, k = formats.loads_images(buf, path=path)
    return ImageDataset(images, labels, k)


def save_dataset(path, ds):
    if isinstance(ds, TextDataset):
        save_text(path, ds)
    else:
        save_images(path, ds)


def split(ds, test_fraction, seed):
    """Deterministic train/test split."""
    n = len(ds)
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))


def batches(n, batch_size, rng=None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
