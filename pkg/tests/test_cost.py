import json
from pathlib import Path

import pytest

from somnus import autoencoder as A
from somnus import blocks as B
from somnus import config as C
from somnus import cost, models
from somnus.layers import Conv2d, Dense

from helpers import small_bundle, small_config

GOLDEN = Path(__file__).parent / "golden"


def golden(name):
    return json.loads((GOLDEN / f"{name}.json").read_text())


def tiny_sleepnet():
    cfg = C.from_dict({"task": "visual", "variant": "sleep", "blocks": 1,
                       "data": {"kind": "shapes2", "size": 8}, "model": {"width": 2}})
    bundle = A.build_bundle({"type": "conv", "input_shape": [1, 8, 8], "channels": [1, 2],
                             "latent_dim": 4})
    return models.build(cfg, bundle)


def test_golden_dense_only():
    report = cost.layer_report("dense", Dense("dense", 4, 3), (4,))
    assert report.to_dict() == golden("dense_only")


def test_golden_conv_block():
    block = B.ChainBlock("block1", "visual", (3, 8, 8), 8)
    assert cost.layer_report("block1", block, (3, 8, 8)).to_dict() == golden("conv_block")


def test_golden_sleepnet1_tiny():
    graph = tiny_sleepnet()
    assert cost.count_params(graph).to_dict() == golden("sleepnet1_tiny")
    assert cost.count_flops(graph, (1, 8, 8)).to_dict() == golden("sleepnet1_tiny")


def test_json_key_order_is_fixed():
    text = cost.cost_report(tiny_sleepnet()).to_json()
    keys = list(json.loads(text))
    assert keys == ["model", "param_count", "trainable_params", "frozen_params",
                    "flops_per_forward", "per_block"]


def test_hand_counts():
    assert Conv2d("c", 3, 8, 3, 1, 1).param_count() == 224
    assert Conv2d("c", 1, 2, 3).flops((1, 8, 8)) == 1296 + 2 * 36
    assert Conv2d("c", 1, 2, 3, bias=False).flops((1, 8, 8)) == 1296
    assert Dense("d", 10, 5).flops((10,)) == 105
    assert Dense("d", 10, 5, bias=False).flops((10,)) == 100


@pytest.mark.parametrize("task", ["visual", "textual"])
@pytest.mark.parametrize("variant", ["chain", "sleep", "dream"])
def test_totals_equal_breakdown_and_stable(task, variant):
    cfg = small_config(task, variant, 2)
    graph = models.build(cfg, None if variant == "chain" else small_bundle(task))
    r1 = cost.cost_report(graph)
    assert r1.param_count == sum(e["params"] for e in r1.per_block)
    assert r1.flops_per_forward == sum(e["flops"] for e in r1.per_block)
    assert r1.param_count == sum(p.size for p in graph.parameters())
    assert r1.param_count == r1.trainable_params + r1.frozen_params
    from helpers import sample_batch
    graph.forward(sample_batch(graph))
    assert cost.cost_report(graph).to_dict() == r1.to_dict()


def test_second_sleep_block_adds_one_block():
    bundle = small_bundle("visual")
    r1 = cost.cost_report(models.build(small_config("visual", "sleep", 1), bundle))
    r2 = cost.cost_report(models.build(small_config("visual", "sleep", 2), bundle))
    block = {e["name"]: e for e in r2.per_block}["block2"]
    assert r2.param_count - r1.param_count == block["params"]
    assert [e["params"] for e in r1.per_block if e["name"] == "bundle"] == \
        [e["params"] for e in r2.per_block if e["name"] == "bundle"]


def test_chain_block_flops_scale_with_m():
    r = {m: {e["name"]: e for e in cost.cost_report(
        models.build(small_config("visual", "chain", m))).per_block} for m in (1, 2)}
    assert r[1]["stem"] == r[2]["stem"] and r[1]["head"] == r[2]["head"]
    assert r[2]["block1"]["flops"] + r[2]["block2"]["flops"] == 2 * r[1]["block1"]["flops"]
