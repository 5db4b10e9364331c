"""Parameter and FLOP accounting.

FLOPs are per sample: a multiply-accumulate is two FLOPs, bias adds count
one each, ReLU/sigmoid/tanh one per element, layer norm seven per element,
average pooling one per input element, a residual-style addition one per
element. The shared bundle's parameters are counted once (its own
breakdown entry); every invocation of it counts toward the calling block's
FLOPs.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .blocks import DreamBlock, SleepBlock
from .errors import ShapeError


@dataclass
class CostReport:
    model: str
    param_count: int
    trainable_params: int
    frozen_params: int
    flops_per_forward: int
    per_block: list = field(default_factory=list)

    def to_dict(self):
        return {
            "model": self.model,
            "param_count": self.param_count,
            "trainable_params": self.trainable_params,
            "frozen_params": self.frozen_params,
            "flops_per_forward": self.flops_per_forward,
            "per_block": [{"name": e["name"], "params": e["params"], "flops": e["flops"]}
                          for e in self.per_block],
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_entries(cls, model, entries, params):
        return cls(
            model=model,
            param_count=sum(e["params"] for e in entries),
            trainable_params=sum(p.size for p in params if p.trainable),
            frozen_params=sum(p.size for p in params if not p.trainable),
            flops_per_forward=sum(e["flops"] for e in entries),
            per_block=entries,
        )


def _size(shape):
    return int(np.prod(shape, dtype=np.int64))


def _count(params):
    return sum(p.size for p in params)


def _block_entry(block, name):
    chain = getattr(block, "chain", block)
    flops = chain.flops()
    if isinstance(block, SleepBlock):
        bundle = block.bundle
        pre, post = block.adapter.pre, block.adapter.post
        flops += pre.flops(chain.in_shape)
        flops += bundle.encode_flops()
        source = (bundle.latent_dim,)
        if isinstance(block, DreamBlock):
            flops += bundle.decode_flops()
            source = tuple(bundle.recon_shape)
        flops += post.flops(source)
        flops += _size(chain.out)  # fusion addition
    return {"name": name, "params": _count(block.params()), "flops": int(flops)}


def cost_report(graph, input_shape=None):
    if input_shape is not None and tuple(input_shape) != tuple(graph.dims.input_shape):
        raise ShapeError(f"graph was built for {tuple(graph.dims.input_shape)}, "
                         f"not {tuple(input_shape)}", input_shape, graph.dims.input_shape)
    in_shape = tuple(graph.dims.input_shape)
    entries = [{"name": "stem", "params": _count(graph.stem.params()),
                "flops": int(graph.stem.flops(in_shape))}]
    for i, block in enumerate(graph.blocks, 1):
        entries.append(_block_entry(block, f"block{i}"))
    if graph.bundle is not None:
        entries.append({"name": "bundle", "params": _count(graph.bundle_params()), "flops": 0})
    last = graph.blocks[-1]
    out = getattr(last, "chain", last).out
    head_flops = _size(out)  # pooling
    if graph.branch is not None:
        br = graph.branch
        bw = br.out_shape()[0]
        branch_flops = graph.M * br.flops_per_dream() + (graph.M - 1) * bw
        entries.append({"name": "branch", "params": _count(br.params()),
                        "flops": int(branch_flops)})
        if graph.merge == "add":
            head_flops += bw
    head_flops += graph.head.flops((graph.head.n_in,))
    entries.append({"name": "head", "params": _count(graph.head.params()),
                    "flops": int(head_flops)})
    return CostReport.from_entries(graph.model_id, entries, graph.parameters())


def count_params(graph):
    return cost_report(graph)


def count_flops(graph, input_shape=None):
    return cost_report(graph, input_shape)


def layer_report(name, layer, in_shape):
    """Cost of a single layer or stack, e.g. a lone dense layer."""
    entry = {"name": name, "params": _count(layer.params()), "flops": int(layer.flops(in_shape))}
    return CostReport.from_entries(name, [entry], layer.params())
