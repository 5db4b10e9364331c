"""Supervised training, evaluation, and the ablation grid.

A run is fully determined by its config: data order in epoch ``e`` comes
from ``default_rng([optimizer.seed, e])`` and every parameter is seeded by
name. Metrics files therefore exclude wall-clock time, which goes to a
separate timing file.
"""

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import autoencoder, data, models
from .config import from_dict
from .cost import cost_report
from .errors import ConfigError, DataError, DivergenceError, SomnusError
from .formats import canonical_json
from .optim import OptimizerConfig, adam_step

logger = logging.getLogger(__name__)

EVAL_BATCH = 200
DEFAULT_LR = OptimizerConfig().lr


@dataclass
class RunRecord:
    model: str
    epochs_configured: int
    history: list = field(default_factory=list)
    status: str = "ok"
    error: str = None
    cost: dict = None
    config_hash: str = None
    optimizer: dict = None
    overrides: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.history[-1] if self.history else {}

    @property
    def final_test_accuracy(self):
        return self.final.get("test_accuracy")

    def events(self):
        """Line-delimited metric events, in a fixed order."""
        for entry in self.history:
            for split, metric in (("train", "loss"), ("train", "accuracy"), ("test", "accuracy")):
                value = entry.get(f"{split}_{metric}")
                if value is not None:
                    yield {"epoch": entry["epoch"], "split": split, "metric": metric,
                           "value": value}

    def summary(self):
        history = [{k: v for k, v in e.items() if k != "wall_time"} for e in self.history]
        return {"model": self.model, "status": self.status, "error": self.error,
                "config_hash": self.config_hash, "epochs_configured": self.epochs_configured,
                "epochs_completed": max(len(self.history) - 1, 0),
                "final": {k: v for k, v in self.final.items() if k != "wall_time"},
                "optimizer": self.optimizer, "overrides": self.overrides,
                "cost": self.cost, "history": history}

    def timing(self):
        times = [e["wall_time"] for e in self.history]
        return {"model": self.model, "per_epoch": times, "total": sum(times)}

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
            for event in self.events():
                fh.write(json.dumps(event) + "\n")
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2) + "\n",
                                          encoding="utf-8")
        (out / "timing.json").write_text(json.dumps(self.timing(), indent=2) + "\n",
                                         encoding="utf-8")


# ---------------------------------------------------------------------------
# evaluation


def _logits(graph, inputs):
    out = [graph.forward(inputs[i:i + EVAL_BATCH]).data for i in range(0, len(inputs), EVAL_BATCH)]
    return np.concatenate(out)


def _loss_and_accuracy(graph, ds):
    if len(ds) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    logits = _logits(graph, ds.inputs)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(len(ds)), ds.labels].mean())
    # np.argmax returns the first maximum: lowest-index tie-break
    acc = float(np.mean(np.argmax(logits, axis=1) == ds.labels))
    return loss, acc


def evaluate(graph, ds):
    """Fraction of samples whose argmax logit is the label."""
    return _loss_and_accuracy(graph, ds)[1]


# ---------------------------------------------------------------------------
# training


def train(graph, dataset, opt, freeze=None, test_dataset=None, on_epoch=None):
    """Train ``graph`` in place and return its RunRecord.

    Epoch 0 is an evaluation of the untrained model. Later entries report the
    running loss and accuracy over that epoch's batches and the test accuracy
    after it. A non-finite loss or gradient stops the run with
    ``status="diverged"`` and the epochs completed so far.
    """
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    freeze = freeze or graph.config.freeze
    graph.set_freeze(freeze)
    params = graph.parameters()
    record = RunRecord(model=graph.model_id, epochs_configured=opt.epochs,
                       optimizer=opt.to_dict())
    if opt.lr != DEFAULT_LR:
        record.overrides["lr"] = opt.lr
        logger.info("%s: learning rate overridden to %g", graph.model_id, opt.lr)

    def test_acc():
        return evaluate(graph, test_dataset) if test_dataset is not None else None

    start = time.perf_counter()
    loss0, acc0 = _loss_and_accuracy(graph, dataset)
    record.history.append({"epoch": 0, "train_loss": loss0, "train_accuracy": acc0,
                           "test_accuracy": test_acc(),
                           "wall_time": time.perf_counter() - start})
    inputs, labels = dataset.inputs, dataset.labels
    for epoch in range(1, opt.epochs + 1):
        start = time.perf_counter()
        rng = np.random.default_rng([opt.seed, epoch])
        total_loss, correct = 0.0, 0
        try:
            for idx in data.batches(len(dataset), opt.batch_size, rng):
                logits = graph.forward(inputs[idx])
                loss = ad.cross_entropy(logits, labels[idx])
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergenceError(f"loss became {value}")
                ad.backward(loss)
                adam_step(params, opt)
                total_loss += value * len(idx)
                correct += int(np.sum(np.argmax(logits.data, axis=1) == labels[idx]))
        except DivergenceError as exc:
            record.status, record.error = "diverged", f"epoch {epoch}: {exc}"
            logger.warning("%s diverged: %s", graph.model_id, exc)
            ad.zero_grad(p.value for p in params)
            break
        entry = {"epoch": epoch, "train_loss": total_loss / len(dataset),
                 "train_accuracy": correct / len(dataset), "test_accuracy": test_acc()}
        entry["wall_time"] = time.perf_counter() - start
        record.history.append(entry)
        logger.info("%s epoch %d loss %.4f train %.3f test %s", graph.model_id, epoch,
                    entry["train_loss"], entry["train_accuracy"], entry["test_accuracy"])
        if on_epoch is not None:
            on_epoch(entry)
    record.cost = cost_report(graph).to_dict()
    return record


# ---------------------------------------------------------------------------
# experiment plumbing: data, bundle, model


def load_data(config):
    """(train, test) datasets from the config's files or generator."""
    d = config.data
    if d.train_path is not None:
        return data.load_dataset(d.train_path), data.load_dataset(d.test_path)
    if config.task == "visual":
        ds = data.gen_synthetic_images(d.kind, d.n, d.noise, d.seed, d.size)
    else:
        ds = data.gen_synthetic_text(d.kind, d.n, d.vocab_size, d.steps, d.seed)
    return data.split(ds, d.test_fraction, d.seed)


def bundle_arch(config, dims):
    b = config.bundle
    if config.task == "visual":
        return {"type": "conv", "input_shape": list(dims.input_shape),
                "channels": list(b.channels), "latent_dim": b.latent_dim}
    return {"type": "lstm", "vocab": dims.vocab_size, "steps": dims.input_shape[0],
            "embed": b.embed, "hidden": b.hidden, "latent_dim": b.latent_dim}


def make_bundle(config, train_ds, dims=None):
    """The autoencoder bundle a sleep/dream config asks for (None for chain)."""
    if config.variant == "chain":
        return None
    dims = dims or models.Dims.from_dataset(train_ds)
    b = config.bundle
    if b.path is not None:
        return autoencoder.load(b.path)
    if b.kind == "identity":
        shape = models.make_stem(config, dims)[1] if config.model.identity_adapters \
            else dims.input_shape
        return autoencoder.make_stub("identity", shape, config.task)
    if b.kind == "zero":
        return autoencoder.make_stub("zero", dims.input_shape, config.task,
                                     latent_dim=b.latent_dim, vocab=dims.vocab_size,
                                     embed=b.embed)
    arch = bundle_arch(config, dims)
    if b.kind == "random":
        return autoencoder.build_bundle(arch, b.seed)
    opt = OptimizerConfig(lr=b.pretrain_lr, batch_size=config.optimizer.batch_size,
                          seed=b.seed)
    return autoencoder.pretrain(train_ds.inputs, arch, b.pretrain_epochs, seed=b.seed, opt=opt)


def run_experiment(config, out_dir=None):
    """Data, bundle, model, training. Returns ``(record, graph)`` and, with
    ``out_dir``, writes metrics, summary, timing, model and bundle files."""
    train_ds, test_ds = load_data(config)
    dims = models.Dims.from_dataset(train_ds)
    bundle = make_bundle(config, train_ds, dims)
    graph = models.build(config, bundle, dims)
    record = train(graph, train_ds, config.optimizer, config.freeze, test_ds)
    record.config_hash = config.config_hash()
    if out_dir is not None:
        out = Path(out_dir)
        record.write(out)
        models.save_model(graph, out / "model.slpn")
        if bundle is not None and bundle.params():
            autoencoder.save(bundle, out / "bundle.slpn")
    return record, graph


# ---------------------------------------------------------------------------
# reports and ablations


def report_row(record, task):
    return {"model": record.model, "task": task, "status": record.status,
            "test_accuracy": record.final_test_accuracy,
            "params": record.cost["param_count"] if record.cost else None,
            "flops": record.cost["flops_per_forward"] if record.cost else None}


def format_table(rows):
    """Plain-text accuracy / #Params / FLOPs table."""
    lines = [f"{'task':<8} {'model':<12} {'accuracy':>9} {'#params':>9} {'FLOPs':>11}"]
    for r in rows:
        acc = "-" if r["test_accuracy"] is None else f"{100 * r['test_accuracy']:.2f}%"
        params = "-" if r["params"] is None else f"{r['params']:,}"
        flops = "-" if r["flops"] is None else f"{r['flops']:,}"
        lines.append(f"{r['task']:<8} {r['model']:<12} {acc:>9} {params:>9} {flops:>11}")
    return "\n".join(lines)


SUITES = {
    "variant": ("variant", ["chain", "sleep", "dream"]),
    "block_count": ("blocks", [1, 2, 3, 4]),
    "freeze": ("freeze", ["frozen", "unfrozen"]),
    "chain_kind": ("model.chain_layers", [1, 2]),
    "bundle_kind": ("bundle.kind", ["pretrained", "random", "zero"]),
}


def suite_configs(suite, base):
    """``[(label, config)]`` for every cell of ``suite``."""
    if suite not in SUITES:
        raise ConfigError(f"unknown ablation suite {suite!r}; choose from {sorted(SUITES)}")
    key, values = SUITES[suite]
    cells = []
    for value in values:
        label = f"{key.split('.')[-1]}={value}"
        out = f"{base.output_dir}/{suite}/{label}"
        cells.append((label, base.replace({key: value, "output_dir": out})))
    return cells


def _run_cell(args):
    suite, label, raw, write = args
    config = from_dict(raw)
    row = {"suite": suite, "cell": label, "model": config.model_id,
           "config_hash": config.config_hash(), "status": "failed", "error": None,
           "final_test_accuracy": None, "final_train_loss": None,
           "params": None, "flops": None}
    try:
        record, _ = run_experiment(config, config.output_dir if write else None)
    except (SomnusError, ArithmeticError, ValueError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    row.update(status=record.status, error=record.error,
               final_test_accuracy=record.final_test_accuracy,
               final_train_loss=record.final.get("train_loss"),
               params=record.cost["param_count"], flops=record.cost["flops_per_forward"])
    return row


def _workers(workers):
    if workers is None:
        workers = int(os.environ.get("SOMNUS_THREADS", "1") or 1)
    return max(1, workers)


def run_ablation(suite, base, write=False, workers=None):
    """Run every cell of ``suite`` and return its table (one row per cell).

    A failing cell is reported with ``status="failed"`` and its error; the
    other cells still run. Cells run in separate processes when ``workers``
    (or ``SOMNUS_THREADS``) exceeds one.
    """
    jobs = [(suite, label, cfg.to_dict(), write) for label, cfg in suite_configs(suite, base)]
    n = min(_workers(workers), len(jobs))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(_run_cell, jobs))
    else:
        rows = [_run_cell(job) for job in jobs]
    table = {"suite": suite, "base_config_hash": base.config_hash(), "rows": rows}
    if write:
        out = Path(base.output_dir) / suite
        out.mkdir(parents=True, exist_ok=True)
        (out / "table.json").write_text(canonical_json(table) + "\n", encoding="utf-8")
    return table
