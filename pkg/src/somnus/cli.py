"""Command-line entry point: ``somnus <command> [options]``.

Exit codes: 0 success, 2 usage, 3 invalid configuration or shapes,
4 unreadable or invalid data files, 5 runtime failure (divergence and
anything unexpected). Failures print one JSON object on stderr.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import autoencoder, data, dream, models
from . import train as training
from .config import apply_overrides, from_dict, load_config, parse_override
from .cost import cost_report
from .errors import (BoundsError, ConfigError, DataError, DivergenceError, FormatError,
                     ShapeError, SomnusError)

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _exit_code(exc):
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (FormatError, BoundsError, DataError, OSError)):
        return EXIT_DATA
    if isinstance(exc, (ConfigError, ShapeError)):
        return EXIT_CONFIG
    return EXIT_RUNTIME


def _print_json(obj):
    print(json.dumps(obj, indent=2))


def _config(args, required=True):
    raw = {}
    if args.config is None:
        if required:
            raise UsageError(f"{args.command}: --config is required")
    else:
        if not Path(args.config).is_file():
            raise UsageError(f"{args.command}: config file {args.config} not found")
        raw = load_config(args.config)
    changes = dict(parse_override(s) for s in args.set or [])
    if getattr(args, "seed", None) is not None:
        changes["seed"] = changes["optimizer.seed"] = args.seed
    if getattr(args, "output_dir", None) is not None:
        changes["output_dir"] = args.output_dir
    return from_dict(apply_overrides(raw, changes))


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    if args.kind in data.IMAGE_KINDS:
        ds = data.gen_synthetic_images(args.kind, args.n, args.noise, args.seed, args.size)
    elif args.kind in data.TEXT_KINDS:
        ds = data.gen_synthetic_text(args.kind, args.n, args.vocab_size, args.steps, args.seed,
                                     args.noise)
    else:
        raise ConfigError(f"unknown dataset kind {args.kind!r}")
    data.save_dataset(args.out, ds)
    _print_json({"path": str(args.out), "n": len(ds), "class_count": ds.class_count,
                 "sha256": ds.fingerprint()})


def cmd_pretrain(args):
    config = _config(args)
    train_ds, _ = training.load_data(config)
    dims = models.Dims.from_dataset(train_ds)
    b = config.bundle
    opt = training.OptimizerConfig(lr=b.pretrain_lr, batch_size=config.optimizer.batch_size,
                                   seed=b.seed)
    bundle = autoencoder.pretrain(train_ds.inputs, training.bundle_arch(config, dims),
                                  b.pretrain_epochs, seed=b.seed, opt=opt)
    out = Path(args.out or Path(config.output_dir) / "bundle.slpn")
    autoencoder.save(bundle, out)
    _print_json({"path": str(out), "manifest": bundle.manifest})


def cmd_train(args):
    config = _config(args)
    record, _ = training.run_experiment(config, config.output_dir)
    _print_json({"output_dir": config.output_dir, **record.summary()["final"],
                 "model": record.model, "status": record.status,
                 "config_hash": record.config_hash})
    if record.status != "ok":
        raise DivergenceError(record.error or "training diverged")


def _eval_data(graph, path):
    if path is not None:
        return data.load_dataset(path)
    return training.load_data(graph.config)[1]


def cmd_eval(args):
    graph = models.load_model(args.model)
    ds = _eval_data(graph, args.data)
    _print_json({"model": graph.model_id, "n": len(ds),
                 "accuracy": training.evaluate(graph, ds)})


def cmd_ablate(args):
    config = _config(args)
    table = training.run_ablation(args.suite, config, write=True, workers=args.workers)
    _print_json(table)


def cmd_dream(args):
    graph = models.load_model(args.model)
    ds = _eval_data(graph, args.data)
    if not 0 <= args.index < len(ds):
        raise BoundsError(f"sample index {args.index} outside 0..{len(ds) - 1}",
                          position=args.index)
    vocab = getattr(ds, "vocab", None)
    manifest = dream.dream_dump(graph, ds.inputs[args.index], args.out, args.depth, vocab)
    _print_json(manifest)


def cost_bundle(config, dims):
    """A bundle with the configured architecture; pretraining does not change
    counts, so pretrained bundles are replaced by untrained ones."""
    if config.variant == "chain":
        return None
    if config.bundle.path is not None or config.bundle.kind in ("zero", "identity"):
        return training.make_bundle(config, None, dims)
    return autoencoder.build_bundle(training.bundle_arch(config, dims), config.bundle.seed)


def cmd_cost(args):
    config = _config(args)
    dims = models.Dims.from_config(config)
    graph = models.build(config, cost_bundle(config, dims), dims)
    print(cost_report(graph).to_json())


# ---------------------------------------------------------------------------
# parser


def _common(p, seed=True):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a dotted config key (repeatable)")
    if seed:
        p.add_argument("--seed", type=int, help="sets seed and optimizer.seed")
    p.add_argument("--output-dir", help="overrides output_dir")


def build_parser():
    parser = argparse.ArgumentParser(prog="somnus", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset file")
    p.add_argument("--kind", required=True, help="shapes2 | shapes4 | keyword2 | keyword4")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pretrain", help="pretrain the autoencoder bundle")
    _common(p)
    p.add_argument("--out", help="bundle path (default: <output_dir>/bundle.slpn)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train one model")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="dataset file (default: the model config's test split)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation grid")
    _common(p)
    p.add_argument("--suite", required=True, choices=sorted(training.SUITES))
    p.add_argument("--workers", type=int, help="parallel cells (default: SOMNUS_THREADS or 1)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dream", help="dump the dreams of a DreamNet on one sample")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="dataset file (default: the model config's test split)")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--depth", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dream)

    p = sub.add_parser("cost", help="print parameter and FLOP counts")
    _common(p, seed=False)
    p.set_defaults(func=cmd_cost)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (SomnusError, UsageError, ArithmeticError, OSError, ValueError) as exc:
        code = _exit_code(exc)
        if isinstance(exc, SomnusError):
            info = exc.to_dict()
        elif isinstance(exc, UsageError):
            info = {"error": "usage", "message": str(exc)}
            parser.print_usage(sys.stderr)
        else:
            info = {"error": type(exc).__name__, "message": str(exc)}
        info["exit_code"] = code
        print(json.dumps(info), file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
