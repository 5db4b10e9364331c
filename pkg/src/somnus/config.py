"""Experiment configuration: one JSON document, strictly validated.

Unknown keys are rejected at every level. ``apply_overrides`` takes
``dotted.path=value`` strings as given on the command line.
"""

import copy
import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError
from .formats import canonical_json
from .optim import OptimizerConfig

TASKS = ("visual", "textual")
VARIANTS = ("chain", "sleep", "dream")
FREEZE_MODES = ("frozen", "unfrozen")
BUNDLE_KINDS = ("pretrained", "random", "zero", "identity")
MERGE_MODES = ("concat", "add")


@dataclass
class ModelConfig:
    width: int = None  # channels (visual, default 8) or hidden size (textual, default 64)
    chain_layers: int = 1
    chain_kernel: int = 3
    norm: bool = True
    stem_stride: int = 2
    pool: int = 4
    branch_depth: int = 2
    branch_width: int = 8
    merge: str = "concat"
    identity_adapters: bool = False

    def __post_init__(self):
        if self.merge not in MERGE_MODES:
            raise ConfigError(f"model.merge must be one of {MERGE_MODES}, got {self.merge!r}")
        for key in ("chain_layers", "chain_kernel", "stem_stride", "pool",
                    "branch_depth", "branch_width"):
            if getattr(self, key) < 1:
                raise ConfigError(f"model.{key} must be >= 1")
        if self.width is not None and self.width < 1:
            raise ConfigError("model.width must be >= 1")


@dataclass
class DataConfig:
    kind: str = "shapes4"  # shapes2 | shapes4 | keyword2 | keyword4
    n: int = 2000
    noise: float = 0.1
    size: int = 32
    vocab_size: int = 200
    steps: int = 32
    test_fraction: float = 0.2
    seed: int = 0
    train_path: str = None
    test_path: str = None

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ConfigError(f"data.test_fraction must lie in (0, 1), got {self.test_fraction}")
        if (self.train_path is None) != (self.test_path is None):
            raise ConfigError("data.train_path and data.test_path must be given together")


@dataclass
class BundleConfig:
    kind: str = "pretrained"
    path: str = None
    latent_dim: int = 32
    channels: list = field(default_factory=lambda: [4, 8])
    embed: int = 32
    hidden: int = 32
    pretrain_epochs: int = 5
    pretrain_lr: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.kind not in BUNDLE_KINDS:
            raise ConfigError(f"bundle.kind must be one of {BUNDLE_KINDS}, got {self.kind!r}")
        if self.latent_dim < 1 or self.pretrain_epochs < 0 or self.pretrain_lr <= 0:
            raise ConfigError("bundle sizes must be positive")


@dataclass
class RunConfig:
    task: str = "visual"
    variant: str = "sleep"
    blocks: int = 2
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    bundle: BundleConfig = field(default_factory=BundleConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    freeze: str = "frozen"
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.freeze not in FREEZE_MODES:
            raise ConfigError(f"freeze must be one of {FREEZE_MODES}, got {self.freeze!r}")
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        text_kind = self.data.kind.startswith("keyword")
        if (self.task == "textual") != text_kind and self.data.train_path is None:
            raise ConfigError(f"data.kind {self.data.kind!r} does not fit task {self.task!r}")

    @property
    def model_id(self):
        name = {"chain": "Chain", "sleep": "SleepNet", "dream": "DreamNet"}[self.variant]
        return f"{name}-{self.blocks}"

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        """SHA-256 over everything except where results are written."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(canonical_json(d).encode("utf-8")).hexdigest()

    def replace(self, changes):
        """Copy with ``{dotted.key: value}`` changes, revalidated."""
        return from_dict(apply_overrides(self.to_dict(), changes))


_SECTIONS = {"model": ModelConfig, "data": DataConfig, "bundle": BundleConfig,
             "optimizer": OptimizerConfig}


def _check_type(path, value, expected):
    if value is None:
        return value
    if expected is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    elif expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
    elif expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        value = float(value)
    elif expected is list and not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list, got {value!r}")
    return value


def _build(cls, raw, prefix):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in raw.items():
        path = prefix + name
        if name in _SECTIONS and cls is RunConfig:
            kwargs[name] = _build(_SECTIONS[name], value, path + ".")
        else:
            kwargs[name] = _check_type(path, value, fields[name].type)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{prefix}{exc}" if prefix else str(exc)) from None


def from_dict(raw):
    return _build(RunConfig, raw, "")


def load_config(path):
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return raw


def parse_override(text):
    """``"a.b=value"`` -> ``("a.b", value)``; value parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(raw, overrides):
    """Return a copy of ``raw`` with ``{dotted.key: value}`` applied."""
    out = copy.deepcopy(raw)
    for key, value in dict(overrides).items():
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r}: {part!r} is not a section")
            node = nxt
        node[parts[-1]] = value
    return out
