import json

import pytest

from drapegeom.config import Config, load_config, read_mapping
from drapegeom.errors import ConfigError, ParseError

GOLDEN = {
    "weights": {
        "lambda_pen": 1.0, "lambda_norm": 0.3, "lambda_bend": 0.5, "lambda_p": 0.1,
        "lambda_mc": 10.0, "lambda_rq8": 500.0, "lambda_rq16": 50.0, "lambda_rq32": 10.0,
        "d_tol_cm": 0.05, "body_offset_fraction": 0.20, "mc_clamp_threshold": None,
    },
    "pooling": {"k": 15, "downsample_factor": 10},
}


def test_golden_defaults():
    d = load_config().as_dict()
    assert d["weights"] == GOLDEN["weights"]
    assert d["pooling"] == GOLDEN["pooling"]
    assert d["refine"]["recipe"] == "P"


def test_toml_overrides(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[weights]\nlambda_norm = 0.7\n\n[refine]\nsteps = 12\noptimizer = "plain"\n')
    c = load_config(p)
    assert c.weights.lambda_norm == 0.7
    assert c.refine.weights is c.weights
    assert c.refine.steps == 12 and c.refine.optimizer == "plain"
    assert c.weights.lambda_pen == 1.0


def test_json_roundtrip(tmp_path):
    c = load_config(overrides={"weights": {"lambda_bend": 2.0}, "pooling": {"k": 7}})
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"tool": "x", "config": c.as_dict()}))
    again = load_config(p)
    assert again.as_dict() == c.as_dict()


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError):
        Config.from_mapping({"extra": {}})
    with pytest.raises(ConfigError):
        Config.from_mapping({"pooling": {"kk": 3}})
    with pytest.raises(ConfigError):
        Config.from_mapping({"refine": {"weights": {}}})
    with pytest.raises(ConfigError):
        Config.from_mapping({"pooling": {"k": 0}})


def test_bad_toml(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[weights\n")
    with pytest.raises(ParseError):
        read_mapping(p)
