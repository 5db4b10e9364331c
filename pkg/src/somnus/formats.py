"""Binary file formats.

All integers are little-endian.

SLPN (weights)::

    b"SLPN" | u32 version | u32 len | manifest JSON (UTF-8)
    | u32 count | count x (u32 len | name | u32 rank | rank x u32 dim | f64 data)
    | u32 CRC32 of every preceding byte

SIMG (images)::

    b"SIMG" | u32 version | u32 n, k, C, H, W | n x (u16 label | C*H*W f32)

STXT (token sequences)::

    b"STXT" | u32 version | u32 n, k, V, T | V x (u32 len | UTF-8)
    | n x (u16 label | T x u32 id)
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import BoundsError, ChecksumError, FormatError

SLPN_MAGIC = b"SLPN"
SIMG_MAGIC = b"SIMG"
STXT_MAGIC = b"STXT"
VERSION = 1


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class _Reader:
    def __init__(self, buf, path=None):
        self.buf = buf
        self.pos = 0
        self.path = path

    def fail(self, message, offset=None, cls=FormatError):
        return cls(f"{message} at byte {self.pos if offset is None else offset}",
                   offset=self.pos if offset is None else offset, path=self.path)

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise self.fail(f"truncated {what}: need {n} bytes, "
                            f"{len(self.buf) - self.pos} left")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u32s(self, count, what):
        return struct.unpack(f"<{count}I", self.take(4 * count, what))

    def magic(self, expected):
        got = self.take(4, "magic")
        if got != expected:
            raise self.fail(f"bad magic {got!r}, expected {expected!r}", offset=0)

    def version(self):
        at = self.pos
        v = self.u32("version")
        if v != VERSION:
            raise self.fail(f"unsupported version {v} (expected {VERSION})", offset=at)

    def done(self):
        if self.pos != len(self.buf):
            raise self.fail(f"{len(self.buf) - self.pos} trailing bytes")


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}", offset=None, path=path) from exc


def _write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


# ---------------------------------------------------------------------------
# SLPN


def dumps_slpn(manifest, arrays):
    """Serialise a manifest dict and ``[(name, array), ...]``."""
    out = bytearray(SLPN_MAGIC)
    meta = canonical_json(manifest).encode("utf-8")
    out += struct.pack("<II", VERSION, len(meta)) + meta
    out += struct.pack("<I", len(arrays))
    for name, arr in arrays:
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
        out += np.ascontiguousarray(arr).tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def loads_slpn(buf, path=None):
    r = _Reader(buf, path)
    r.magic(SLPN_MAGIC)
    if len(buf) < 12:
        raise r.fail("file too short for header and checksum", offset=len(buf))
    stored = struct.unpack("<I", buf[-4:])[0]
    if zlib.crc32(buf[:-4]) != stored:
        raise ChecksumError(f"CRC32 mismatch (stored {stored:#010x}); file is truncated "
                            f"or corrupted", offset=len(buf) - 4, path=path)
    r.buf = buf[:-4]
    r.version()
    meta_len = r.u32("manifest length")
    at = r.pos
    try:
        manifest = json.loads(r.take(meta_len, "manifest").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise r.fail(f"manifest is not valid JSON ({exc})", offset=at) from None
    arrays = []
    for _ in range(r.u32("parameter count")):
        name_at = r.pos
        try:
            name = r.take(r.u32("name length"), "name").decode("utf-8")
        except UnicodeDecodeError:
            raise r.fail("parameter name is not UTF-8", offset=name_at) from None
        rank = r.u32("rank")
        dims = r.u32s(rank, "dims")
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(8 * count, f"data of {name!r}"), dtype="<f8")
        arrays.append((name, data.reshape(dims).astype(np.float64)))
    r.done()
    return manifest, arrays


def save_slpn(path, manifest, arrays):
    _write_bytes(path, dumps_slpn(manifest, arrays))


def load_slpn(path):
    return loads_slpn(_read_bytes(path), path=path)


# ---------------------------------------------------------------------------
# SIMG


def dumps_images(images, labels, class_count):
    images = np.asarray(images)
    labels = np.asarray(labels)
    n, c, h, w = images.shape
    out = bytearray(SIMG_MAGIC)
    out += struct.pack("<6I", VERSION, n, class_count, c, h, w)
    rec = np.empty(n, dtype=np.dtype([("label", "<u2"), ("pix", "<f4", (c * h * w,))]))
    rec["label"] = labels
    rec["pix"] = images.reshape(n, -1)
    out += rec.tobytes()
    return bytes(out)


def loads_images(buf, path=None):
    """Returns ``(images float64 (n, C, H, W), labels int64, class_count)``."""
    r = _Reader(buf, path)
    r.magic(SIMG_MAGIC)
    r.version()
    n, k, c, h, w = r.u32s(5, "header")
    if k == 0 or c == 0 or h == 0 or w == 0:
        raise r.fail(f"degenerate header n={n} k={k} C={c} H={h} W={w}", offset=8)
    body_at = r.pos
    rec_type = np.dtype([("label", "<u2"), ("pix", "<f4", (c * h * w,))])
    rec = np.frombuffer(r.take(n * rec_type.itemsize, f"{n} records"), dtype=rec_type)
    r.done()
    labels = rec["label"].astype(np.int64)
    bad = np.nonzero(labels >= k)[0]
    if bad.size:
        i = int(bad[0])
        raise BoundsError(f"record {i}: label {labels[i]} >= class count {k} "
                          f"(byte {body_at + i * rec_type.itemsize})", position=i,
                          offset=body_at + i * rec_type.itemsize)
    pix = rec["pix"]
    bad = np.nonzero(~np.all((pix >= 0) & (pix <= 1), axis=1))[0]
    if bad.size:
        i = int(bad[0])
        raise BoundsError(f"record {i}: pixel outside [0, 1] "
                          f"(byte {body_at + i * rec_type.itemsize})", position=i,
                          offset=body_at + i * rec_type.itemsize)
    return pix.astype(np.float64).reshape(n, c, h, w), labels, k


# ---------------------------------------------------------------------------
# STXT


def dumps_text(ids, labels, class_count, vocab):
    ids = np.asarray(ids)
    labels = np.asarray(labels)
    n, t = ids.shape
    out = bytearray(STXT_MAGIC)
    out += struct.pack("<5I", VERSION, n, class_count, len(vocab), t)
    for word in vocab:
        raw = word.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
    rec = np.empty(n, dtype=np.dtype([("label", "<u2"), ("ids", "<u4", (t,))]))
    rec["label"] = labels
    rec["ids"] = ids
    out += rec.tobytes()
    return bytes(out)


def loads_text(buf, path=None):
    """Returns ``(ids int64 (n, T), labels int64, class_count, vocab)``."""
    r = _Reader(buf, path)
    r.magic(STXT_MAGIC)
    r.version()
    n, k, v, t = r.u32s(4, "header")
    if k == 0 or v == 0 or t == 0:
        raise r.fail(f"degenerate header n={n} k={k} V={v} T={t}", offset=8)
    vocab = []
    for _ in range(v):
        at = r.pos
        try:
            vocab.append(r.take(r.u32("vocab entry length"), "vocab entry").decode("utf-8"))
        except UnicodeDecodeError:
            raise r.fail("vocabulary entry is not UTF-8", offset=at) from None
    body_at = r.pos
    rec_type = np.dtype([("label", "<u2"), ("ids", "<u4", (t,))])
    rec = np.frombuffer(r.take(n * rec_type.itemsize, f"{n} records"), dtype=rec_type)
    r.done()
    labels = rec["label"].astype(np.int64)
    ids = rec["ids"].astype(np.int64)

    def where(i):
        return body_at + i * rec_type.itemsize

    bad = np.nonzero(labels >= k)[0]
    if bad.size:
        i = int(bad[0])
        raise BoundsError(f"record {i}: label {labels[i]} >= class count {k} "
                          f"(byte {where(i)})", position=i, offset=where(i))
    bad = np.nonzero((ids >= v).any(axis=1))[0]
    if bad.size:
        i = int(bad[0])
        raise BoundsError(f"record {i}: token id >= vocabulary size {v} "
                          f"(byte {where(i)})", position=i, offset=where(i))
    # once padding (id 0) starts, it must run to the end
    padded = np.maximum.accumulate(ids == 0, axis=1)
    bad = np.nonzero((padded & (ids != 0)).any(axis=1))[0]
    if bad.size:
        i = int(bad[0])
        raise BoundsError(f"record {i}: non-pad token after padding (byte {where(i)})",
                          position=i, offset=where(i))
    return ids, labels, k, vocab
