"""Small model factories shared by tests."""

from somnus import autoencoder as A
from somnus import config as C
from somnus import models


def small_config(task="visual", variant="sleep", blocks=2, **model):
    raw = {"task": task, "variant": variant, "blocks": blocks,
           "data": {"kind": "shapes4" if task == "visual" else "keyword4",
                    "size": 16, "steps": 8, "vocab_size": 30},
           "model": {"width": 4, **model}}
    return C.from_dict(raw)


def small_bundle(task="visual", size=16, steps=8, vocab=30, seed=0):
    if task == "visual":
        arch = {"type": "conv", "input_shape": [1, size, size], "channels": [2, 4],
                "latent_dim": 8}
    else:
        arch = {"type": "lstm", "vocab": vocab, "steps": steps, "embed": 4, "hidden": 4,
                "latent_dim": 4}
    return A.build_bundle(arch, seed)


def small_graph(task="visual", variant="sleep", blocks=2, bundle=None, **model):
    cfg = small_config(task, variant, blocks, **model)
    if variant != "chain" and bundle is None:
        bundle = small_bundle(task)
    return models.build(cfg, bundle)


def sample_batch(graph, n=3, seed=0):
    import numpy as np
    rng = np.random.default_rng(seed)
    shape = graph.dims.input_shape
    if graph.task == "visual":
        return rng.random((n,) + tuple(shape))
    return rng.integers(0, graph.dims.vocab_size, (n,) + tuple(shape))


# acceptance bookkeeping: one line per criterion, reprinted in the terminal summary
ACCEPTANCE = []


def report(number, title, passed, detail=""):
    line = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE.append(line)
    print(line)
    return line
