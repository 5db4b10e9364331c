import json

import pytest

from somnus import config as C
from somnus.errors import ConfigError


def test_defaults():
    cfg = C.from_dict({})
    assert cfg.optimizer.lr == 0.005 and cfg.optimizer.batch_size == 32
    assert cfg.model.merge == "concat" and cfg.freeze == "frozen"


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"model": {"widht": 3}},
    {"task": "audio"},
    {"blocks": "two"},
    {"blocks": 0},
    {"model": {"merge": "mul"}},
    {"optimizer": {"beta1": 1.5}},
    {"task": "textual", "data": {"kind": "shapes4"}},
    {"data": {"train_path": "a.simg"}},
])
def test_invalid_rejected(raw):
    with pytest.raises(ConfigError):
        C.from_dict(raw)


def test_overrides_and_hash():
    raw = {"task": "visual"}
    cfg = C.from_dict(C.apply_overrides(raw, dict([C.parse_override("model.width=5"),
                                                  C.parse_override("freeze=unfrozen")])))
    assert cfg.model.width == 5 and cfg.freeze == "unfrozen"
    a = C.from_dict({"output_dir": "x"})
    b = C.from_dict({"output_dir": "y"})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != a.replace({"seed": 1}).config_hash()
    with pytest.raises(ConfigError):
        C.parse_override("novalue")


def test_load_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"blocks": 3}))
    assert C.from_dict(C.load_config(path)).blocks == 3
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        C.load_config(path)
