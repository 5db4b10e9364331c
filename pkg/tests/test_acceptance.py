"""The ten acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (see ``helpers.report``); the lines
are repeated in the pytest terminal summary.
"""

import json
import subprocess
import sys
import time

import numpy as np

from somnus import autodiff as ad
from somnus import autoencoder as A
from somnus import blocks as B
from somnus import config as C
from somnus import cost, data, dream, formats, models
from somnus import train as T
from somnus.errors import BoundsError, ChecksumError, FormatError
from somnus.layers import Dense, Parameter
from somnus.optim import OptimizerConfig, adam_step

from helpers import report

SEEDS = range(10)


def _t(rng, *shape, positive=False, away_from_zero=False):
    x = rng.standard_normal(shape)
    if positive:
        x = np.abs(x) + 0.5
    if away_from_zero:
        x = np.where(np.abs(x) < 0.1, x + 0.3 * np.sign(x + 1e-12), x)
    return ad.Tensor(x, requires_grad=True)


def _op_cases(rng):
    """``(name, f, inputs)`` for every differentiable primitive."""
    ids = ad.Tensor(rng.integers(0, 5, (2, 3)))
    labels = rng.integers(0, 4, 3)
    return [
        ("add", ad.add, [_t(rng, 2, 3), _t(rng, 2, 3)]),
        ("sub", ad.sub, [_t(rng, 2, 3), _t(rng, 2, 3)]),
        ("mul", ad.mul, [_t(rng, 2, 3), _t(rng, 2, 3)]),
        ("scale", lambda x: ad.scale(x, -1.7), [_t(rng, 4)]),
        ("relu", ad.relu, [_t(rng, 3, 4, away_from_zero=True)]),
        ("sigmoid", ad.sigmoid, [_t(rng, 3, 4)]),
        ("tanh", ad.tanh, [_t(rng, 3, 4)]),
        ("reshape", lambda x: ad.reshape(x, (4, 3)), [_t(rng, 2, 6)]),
        ("transpose", lambda x: ad.transpose(x, (2, 0, 1)), [_t(rng, 2, 3, 4)]),
        ("concat", lambda a, b: ad.concat([a, b], axis=1), [_t(rng, 2, 3), _t(rng, 2, 2)]),
        ("take", lambda x: ad.take(x, 1, 3, axis=-1), [_t(rng, 2, 4)]),
        ("sum_all", ad.sum_all, [_t(rng, 3, 3)]),
        ("mean", lambda x: ad.mean(x, axis=(2, 3)), [_t(rng, 2, 3, 4, 4)]),
        ("repeat_steps", lambda x: ad.repeat_steps(x, 3), [_t(rng, 2, 4)]),
        ("avg_pool2d", lambda x: ad.avg_pool2d(x, 2), [_t(rng, 2, 3, 4, 4)]),
        ("matmul", ad.matmul, [_t(rng, 3, 4), _t(rng, 4, 5)]),
        ("dense", ad.dense, [_t(rng, 2, 3, 4), _t(rng, 4, 5), _t(rng, 5)]),
        ("conv2d", lambda x, w, b: ad.conv2d(x, w, b, 2, 1),
         [_t(rng, 2, 3, 5, 5), _t(rng, 4, 3, 3, 3), _t(rng, 4)]),
        ("deconv2d", lambda x, w, b: ad.deconv2d(x, w, b, 2, 1),
         [_t(rng, 2, 3, 3, 3), _t(rng, 3, 2, 4, 4), _t(rng, 2)]),
        ("layer_norm", ad.layer_norm, [_t(rng, 3, 5), _t(rng, 5), _t(rng, 5)]),
        ("lstm_cell", lambda x, h, c, w, b: ad.add(*ad.lstm_cell(x, h, c, w, b)),
         [_t(rng, 2, 3), _t(rng, 2, 4), _t(rng, 2, 4), _t(rng, 7, 16), _t(rng, 16)]),
        ("lstm_sequence", ad.lstm_sequence, [_t(rng, 2, 4, 3), _t(rng, 7, 16), _t(rng, 16)]),
        ("softmax", lambda x: ad.softmax(x, axis=-1), [_t(rng, 3, 5)]),
        ("embedding_lookup", lambda table: ad.embedding_lookup(table, ids), [_t(rng, 5, 3)]),
        ("cross_entropy", lambda z: ad.cross_entropy(z, labels), [_t(rng, 3, 4)]),
        ("mse", ad.mse, [_t(rng, 2, 3), _t(rng, 2, 3)]),
    ]


def _tiny_bundle(task, seed):
    if task == "visual":
        arch = {"type": "conv", "input_shape": [1, 4, 4], "channels": [1, 2], "latent_dim": 3}
    else:
        arch = {"type": "lstm", "vocab": 6, "steps": 3, "embed": 2, "hidden": 2,
                "latent_dim": 2}
    bundle = A.build_bundle(arch, seed)
    bundle.set_frozen(False)  # check bundle parameters too
    rng = np.random.default_rng(seed)
    for p in bundle.params():
        if not p.value.data.any():
            # zero biases put relu inputs exactly on the kink
            p.value.data = 0.1 * rng.standard_normal(p.value.data.shape)
    return bundle


def _block_cases(seed):
    """``(name, f, inputs)`` for every composed block kind."""
    rng = np.random.default_rng(100 + seed)
    cases = []
    for task, shape in (("visual", (2, 2, 2)), ("textual", (3, 2))):
        for kind in ("chain", "sleep", "dream"):
            chain = B.ChainBlock("block1", task, shape, 2, seed=seed)
            if kind == "chain":
                block = chain
            else:
                cls = B.SleepBlock if kind == "sleep" else B.DreamBlock
                block = cls("block1", chain, _tiny_bundle(task, seed), seed=seed)
            params = block.params() + (block.bundle.params() if kind != "chain" else [])
            h = _t(rng, 2, *shape)

            def f(h, *_, block=block, kind=kind, seed=seed):
                out = block(h)
                if kind != "dream":
                    return out
                # a plain sum of a normalized output is constant, so weight both parts
                out, tap = out
                w = np.random.default_rng(seed)
                wo = ad.Tensor(w.standard_normal(out.data.shape))
                wt = ad.Tensor(w.standard_normal(tap.data.shape))
                return ad.add(ad.sum_all(ad.mul(out, wo)), ad.sum_all(ad.mul(tap, wt)))

            cases.append((f"{task}-{kind}", f, [h] + [p.value for p in params]))
        branch_shape = (1, 4, 4) if task == "visual" else (3, 2)
        branch = B.DreamBranch("branch", task, branch_shape, depth=2, width=2, seed=seed)
        dreams = [_t(rng, 2, *branch_shape), _t(rng, 2, *branch_shape)]
        cases.append((f"{task}-branch", lambda a, b, *_, br=branch: br([a, b]),
                       dreams + [p.value for p in branch.params()]))
    return cases


def test_c1_gradient_suite():
    start = time.perf_counter()
    failures, checked = [], 0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        for name, f, inputs in _op_cases(rng) + _block_cases(seed):
            rep = ad.gradcheck(f, inputs, rel_tol=1e-4, seed=seed)
            checked += 1
            if not rep.passed:
                failures.append(f"{name}@{seed}: {rep.max_error:.2e}")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 60
    report(1, "gradient suite: all ops and blocks, 10 seeds, rel tol 1e-4, < 60 s", ok,
           f"{checked} checks in {elapsed:.1f} s" + (f"; failed {failures[:5]}" if failures else ""))
    assert not failures
    assert elapsed < 60


def _default_config(task, variant, m, **model):
    return C.from_dict({"task": task, "variant": variant, "blocks": m,
                        "data": {"kind": "shapes4" if task == "visual" else "keyword4"},
                        "model": model})


def _inputs(graph, n, seed):
    rng = np.random.default_rng(seed)
    if graph.task == "visual":
        return rng.random((n,) + graph.dims.input_shape)
    return rng.integers(0, graph.dims.vocab_size, (n,) + graph.dims.input_shape)


def test_c2_sleep_zero_stub_degeneracy():
    mismatches = []
    for task in ("visual", "textual"):
        for m in (1, 2, 3, 4):
            chain = models.build(_default_config(task, "chain", m))
            stub = A.make_stub("zero", chain.dims.input_shape, task, latent_dim=32,
                               vocab=chain.dims.vocab_size, embed=32)
            sleep = models.build(_default_config(task, "sleep", m), stub)
            x = _inputs(chain, 8, m)
            if not np.array_equal(chain.forward(x).data, sleep.forward(x).data):
                mismatches.append(f"{task} M={m}")
    report(2, "zero-stub SleepNet-M logits bit-identical to chain-only, M=1..4, both tasks",
           not mismatches, f"mismatch: {mismatches}" if mismatches else "8 models")
    assert not mismatches


def test_c3_dream_identity_stub_degeneracy():
    mismatches = []
    for m in (1, 2, 3, 4):
        cfg = _default_config("visual", "dream", m, identity_adapters=True)
        hidden = models.make_stem(cfg, models.Dims.from_config(cfg))[1]
        graph = models.build(cfg, A.make_stub("identity", hidden))
        trace = graph.trace(_inputs(graph, 4, 10 + m))
        for i, block in enumerate(graph.blocks):
            h = trace["hidden"][i]
            expected = block.chain(h).data + h.data
            if not np.array_equal(trace["hidden"][i + 1].data, expected):
                mismatches.append(f"M={m} block{i + 1}")
    report(3, "identity-stub DreamNet-M blocks equal g(h)+h bitwise", not mismatches,
           f"mismatch: {mismatches}" if mismatches else "M=1..4, visual")
    assert not mismatches


def test_c4_freeze_invariance(tmp_path):
    raw = {"task": "visual", "variant": "sleep", "blocks": 2,
           "data": {"kind": "shapes4", "n": 200, "noise": 0.1, "size": 16},
           "bundle": {"pretrain_epochs": 1}, "optimizer": {"epochs": 30}}
    cfg = C.from_dict(raw)
    train_ds, test_ds = T.load_data(cfg)
    A.save(T.make_bundle(cfg, train_ds), tmp_path / "bundle.slpn")
    on_disk = {n: a.tobytes() for n, a in formats.load_slpn(tmp_path / "bundle.slpn")[1]}

    changed = {}
    for mode in ("frozen", "unfrozen"):
        run_cfg = cfg.replace({"freeze": mode})
        bundle = A.load(tmp_path / "bundle.slpn")
        graph = models.build(run_cfg, bundle, models.Dims.from_dataset(train_ds))
        record = T.train(graph, train_ds, run_cfg.optimizer, mode, test_ds)
        assert record.status == "ok" and len(record.history) == 31
        changed[mode] = [p.name for p in bundle.params()
                         if p.value.data.tobytes() != on_disk[p.name]]
    ok = not changed["frozen"] and len(changed["unfrozen"]) >= 1
    report(4, "freeze invariance after 30 epochs: frozen bundle byte-identical, unfrozen moves",
           ok, f"frozen changed {len(changed['frozen'])}, unfrozen changed "
               f"{len(changed['unfrozen'])}")
    assert ok


def _formula_adam(theta, grads, lr, b1, b2, sigma):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + sigma)
    return theta


def test_c5_adam_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(5):
        opt = OptimizerConfig(lr=float(rng.uniform(1e-4, 1e-2)),
                              beta1=float(rng.uniform(0.5, 0.95)),
                              beta2=float(rng.uniform(0.9, 0.9999)),
                              sigma=float(10 ** rng.uniform(-8, -4)))
        theta0 = rng.standard_normal(3)
        grads = rng.standard_normal((1000, 3)) * 10 ** rng.uniform(-3, 1, 3)
        p = Parameter(f"p{trial}", theta0.copy())
        for g in grads:
            p.value.grad = g.copy()
            adam_step([p], opt)
        for i in range(3):
            ref = _formula_adam(theta0[i], grads[:, i], opt.lr, opt.beta1, opt.beta2, opt.sigma)
            worst = max(worst, abs(p.value.data[i] - ref))
    q = Parameter("scalar", np.zeros(1))
    q.value.grad = np.ones(1)
    adam_step([q], OptimizerConfig(lr=0.005, beta1=0.9, beta2=0.999, sigma=1e-5))
    worked = abs(q.value.data[0] - (-0.00499995))
    ok = worst <= 1e-12 and worked <= 1e-9
    report(5, "Adam matches formula over 1000 random steps (1e-12); worked example (1e-9)", ok,
           f"max diff {worst:.1e}, worked example diff {worked:.1e}")
    assert ok


def test_c6_smoke_experiment(tmp_path):
    start = time.perf_counter()
    rows = []
    for task, kind in (("visual", "shapes4"), ("textual", "keyword4")):
        for variant in ("chain", "sleep", "dream"):
            cfg = C.from_dict({"task": task, "variant": variant, "blocks": 2,
                               "data": {"kind": kind, "n": 2000, "noise": 0.1},
                               "output_dir": str(tmp_path / f"{task}-{variant}")})
            record, _ = T.run_experiment(cfg, cfg.output_dir)
            rows.append(T.report_row(record, task))
    elapsed = time.perf_counter() - start
    table = T.format_table(rows)
    (tmp_path / "report.txt").write_text(table + "\n")
    print("\n" + table)
    accs = [r["test_accuracy"] for r in rows]
    ok = all(a is not None and a >= 0.95 for a in accs) and elapsed < 15 * 60
    report(6, "smoke experiment: 6 models >= 95% test accuracy in 30 epochs, < 15 min", ok,
           f"{elapsed / 60:.1f} min; accuracies "
           + ", ".join(f"{r['task'][0]}/{r['model']}={100 * r['test_accuracy']:.1f}%"
                       for r in rows))
    assert all(r["params"] and r["flops"] for r in rows)
    assert ok


def test_c7_cost_golden():
    golden = {}
    for name in ("dense_only", "conv_block", "sleepnet1_tiny"):
        with open(f"{__file__.rsplit('/', 1)[0]}/golden/{name}.json") as fh:
            golden[name] = json.load(fh)
    got = {"dense_only": cost.layer_report("dense", Dense("dense", 4, 3), (4,)).to_dict(),
           "conv_block": cost.layer_report("block1",
                                           B.ChainBlock("block1", "visual", (3, 8, 8), 8),
                                           (3, 8, 8)).to_dict()}
    cfg = C.from_dict({"task": "visual", "variant": "sleep", "blocks": 1,
                       "data": {"kind": "shapes2", "size": 8}, "model": {"width": 2}})
    bundle = A.build_bundle({"type": "conv", "input_shape": [1, 8, 8], "channels": [1, 2],
                             "latent_dim": 4})
    graph = models.build(cfg, bundle)
    got["sleepnet1_tiny"] = cost.count_params(graph).to_dict()
    flops = cost.count_flops(graph, (1, 8, 8)).to_dict()
    bad = [k for k in golden if golden[k] != got[k]] + \
        (["sleepnet1_tiny/flops"] if flops != golden["sleepnet1_tiny"] else [])
    report(7, "count_params / count_flops equal hand-computed golden JSON", not bad,
           f"mismatch: {bad}" if bad else "3 configs")
    assert not bad


def test_c8_train_determinism(tmp_path):
    raw = {"task": "visual", "variant": "dream", "blocks": 2,
           "data": {"kind": "shapes4", "n": 120, "noise": 0.1, "size": 16},
           "bundle": {"pretrain_epochs": 1}, "optimizer": {"epochs": 3}}
    (tmp_path / "c.json").write_text(json.dumps(raw))
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        proc = subprocess.run([sys.executable, "-m", "somnus.cli", "train", "--config",
                               str(tmp_path / "c.json"), "--seed", "7", "--output-dir",
                               str(out)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outputs.append({n: (out / n).read_bytes() for n in ("metrics.jsonl", "summary.json")})
    ok = outputs[0] == outputs[1]
    report(8, "two train invocations with equal config and seed give byte-identical metrics",
           ok, "metrics.jsonl, summary.json")
    assert ok


def test_c9_dream_dump(tmp_path):
    ds = data.gen_synthetic_images("shapes4", 64, noise=0.1, seed=0)
    cfg = _default_config("visual", "dream", 3)
    arch = {"type": "conv", "input_shape": [1, 32, 32], "channels": [4, 8], "latent_dim": 32}
    bundle = A.pretrain(ds.images, arch, 1, seed=0)
    graph = models.build(cfg, bundle)
    manifest = dream.dream_dump(graph, ds.images[0], tmp_path / "trained")
    files = sorted(p.name for p in (tmp_path / "trained").iterdir() if p.is_file()
                   and p.name != "manifest.json")
    shapes_ok = all(tuple(s["shape"]) == tuple(bundle.input_shape)
                    for s in manifest["stages"][1:])
    raw_ok = all(np.load(tmp_path / "trained" / s["raw"]).shape == tuple(bundle.input_shape)
                 for s in manifest["stages"][1:])

    ident = models.build(cfg, A.make_stub("identity", (1, 32, 32)))
    im = dream.dream_dump(ident, ds.images[0], tmp_path / "identity")
    equal = all(np.array_equal(np.load(tmp_path / "identity" / s["raw"]),
                               np.load(tmp_path / "identity" / s["adapted"]))
                for s in im["stages"][1:])
    ok = (len(files) == 4 and [s["name"] for s in manifest["stages"]]
          == ["original", "first_dream", "second_dream", "third_dream"]
          and shapes_ok and raw_ok and equal)
    report(9, "DreamNet-3 dump: 4 staged artifacts, bundle-input shapes, identity dumps exact",
           ok, ", ".join(files))
    assert ok


def test_c10_format_round_trips(tmp_path):
    results = {}
    images = data.gen_synthetic_images("shapes4", 20, noise=0.1, seed=3)
    text = data.gen_synthetic_text("keyword4", 20, seed=3)
    bundle = A.pretrain(images.images, {"type": "conv", "input_shape": [1, 32, 32],
                                        "channels": [2, 4], "latent_dim": 8}, 1)
    for name, save, load, obj in (
            ("simg", data.save_images, data.load_images, images),
            ("stxt", data.save_text, data.load_text, text),
            ("slpn", lambda path, b: A.save(b, path), A.load, bundle)):
        a, b = tmp_path / f"a.{name}", tmp_path / f"b.{name}"
        save(a, obj)
        save(b, load(a))
        results[name] = a.read_bytes() == b.read_bytes()

    def rejects(load, buf, path, cls):
        path.write_bytes(buf)
        try:
            load(path)
        except cls as exc:
            d = exc.to_dict()
            return "error" in d and ("offset" in d or "position" in d)
        return False

    corrupt = tmp_path / "bad"
    simg = (tmp_path / "a.simg").read_bytes()
    stxt = (tmp_path / "a.stxt").read_bytes()
    slpn = (tmp_path / "a.slpn").read_bytes()
    bad_label = bytearray(simg)
    bad_label[28:30] = (9).to_bytes(2, "little")
    flipped = bytearray(slpn)
    flipped[len(slpn) // 2] ^= 0xFF
    checks = {
        "simg magic": rejects(data.load_images, b"XXXX" + simg[4:], corrupt, FormatError),
        "simg truncated": rejects(data.load_images, simg[:-5], corrupt, FormatError),
        "simg label": rejects(data.load_images, bytes(bad_label), corrupt, BoundsError),
        "stxt magic": rejects(data.load_text, b"XXXX" + stxt[4:], corrupt, FormatError),
        "stxt truncated": rejects(data.load_text, stxt[:-3], corrupt, FormatError),
        "slpn truncated": rejects(A.load, slpn[:-9], corrupt, ChecksumError),
        "slpn flipped": rejects(A.load, bytes(flipped), corrupt, ChecksumError),
    }
    ok = all(results.values()) and all(checks.values())
    report(10, "SIMG/STXT/SLPN round-trip byte-equal; corrupted files give structured errors",
           ok, f"round trips {results}; rejections {sum(checks.values())}/{len(checks)}")
    assert ok
