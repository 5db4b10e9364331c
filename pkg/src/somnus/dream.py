"""Stage-by-stage dumps of what a DreamNet's dream connections produce.

Stage 0 is the input sample; stage ``m`` is the dream tapped at block ``m``.
Images are written as binary portable graymaps, min-max normalized per
stage; text stages are written as token strings. Every stage also keeps its
raw tensor (and, for dreams, the adapted bundle input) as ``.npy`` files
under ``raw/`` so exact comparisons never go through 8-bit pixels.
"""

import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .blocks import DreamBlock
from .errors import ConfigError

ORDINALS = ("first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth",
            "ninth", "tenth")


def stage_name(stage):
    if stage == 0:
        return "original"
    if stage <= len(ORDINALS):
        return f"{ORDINALS[stage - 1]}_dream"
    return f"dream_{stage}"


def to_pgm(array):
    """P5 graymap bytes; channels of a (C, H, W) map are tiled left to right."""
    a = np.asarray(array, dtype=np.float64)
    if a.ndim == 3:
        a = np.concatenate(list(a), axis=1)
    if a.ndim != 2:
        raise ConfigError(f"cannot render an array of shape {a.shape} as an image")
    lo, hi = float(a.min()), float(a.max())
    scaled = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def read_pgm(buf):
    """Inverse of :func:`to_pgm` for the header layout it writes."""
    magic, dims, maxval, rest = buf.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ConfigError("not an 8-bit P5 graymap")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w)


def _tokens(ids, vocab):
    words = [vocab[i] if vocab and i < len(vocab) else f"<{i}>" for i in ids]
    return " ".join(words) + "\n"


def dream_dump(graph, sample, out_dir, depth=None, vocab=None):
    """Write ``depth + 1`` stage files plus ``manifest.json`` into ``out_dir``.

    ``sample`` is one unbatched input. ``depth`` defaults to the model's
    block count and may not exceed it. Returns the manifest.
    """
    if graph.variant != "dream" or not all(isinstance(b, DreamBlock) for b in graph.blocks):
        raise ConfigError(f"dream dumps need a DreamNet model, got {graph.model_id}")
    depth = graph.M if depth is None else int(depth)
    if not 1 <= depth <= graph.M:
        raise ConfigError(f"dump depth must lie in 1..{graph.M}, got {depth}")
    textual = graph.task == "textual"
    if textual and not hasattr(graph.bundle, "decode_tokens"):
        raise ConfigError("textual dream dumps need a bundle with a vocabulary head")
    sample = np.asarray(sample)
    trace = graph.trace(sample[None])

    out = Path(out_dir)
    (out / "raw").mkdir(parents=True, exist_ok=True)
    stages = []
    for stage in range(depth + 1):
        name = stage_name(stage)
        entry = {"stage": stage, "name": name}
        if stage == 0:
            tensor = sample
        else:
            tensor = trace["dreams"][stage - 1].data[0]
            adapted = trace["adapted"][stage - 1].data[0]
            entry["adapted"] = f"raw/{stage:02d}_{name}_adapted.npy"
            np.save(out / entry["adapted"], adapted)
        entry["raw"] = f"raw/{stage:02d}_{name}.npy"
        np.save(out / entry["raw"], tensor)
        entry["shape"] = list(tensor.shape)
        if textual:
            if stage == 0:
                ids = tensor
            else:
                recon = ad.Tensor(tensor[None])
                ids = graph.bundle.decode_tokens(recon).data[0]
            entry["file"] = f"{stage:02d}_{name}.txt"
            entry["tokens"] = [int(i) for i in ids]
            (out / entry["file"]).write_text(_tokens(ids, vocab), encoding="utf-8")
        else:
            entry["file"] = f"{stage:02d}_{name}.pgm"
            (out / entry["file"]).write_bytes(to_pgm(tensor))
        stages.append(entry)
    manifest = {"model": graph.model_id, "task": graph.task, "depth": depth,
                "bundle_input_shape": list(graph.bundle.input_shape), "stages": stages}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest
