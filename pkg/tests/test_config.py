import json

import pytest

from utils.config import (
    PeakonConfig,
    RigidBodyConfig,
    TrainConfig,
    build_config,
    load_config,
    runs_root,
)
from utils.errors import ArtifactIOError, SchemaError


def test_train_defaults():
    config = TrainConfig()
    assert config.n_layers == 50
    assert config.dt == pytest.approx(0.075)
    assert config.iterations == 5000
    assert config.snapshots == (20, 30, 50)


def test_unknown_keys_are_listed():
    with pytest.raises(SchemaError) as info:
        build_config(TrainConfig, {"layers": 3, "bogus": 1})
    assert info.value.keys == ["bogus", "layers"]


def test_field_constraints():
    with pytest.raises(SchemaError) as info:
        build_config(TrainConfig, {"n_layers": 0, "dt": -1.0, "gamma": 0.0})
    assert info.value.keys == ["dt", "gamma", "n_layers"]


def test_snapshots_sorted_and_unique():
    config = build_config(TrainConfig, {"snapshots": [30, 20, 30]})
    assert config.snapshots == (20, 30)


def test_rigid_body_inertia_must_be_positive():
    with pytest.raises(SchemaError):
        build_config(RigidBodyConfig, {"inertia": [1.0, 0.0, 3.0]})


def test_peakon_exponent_scale_choices():
    assert build_config(PeakonConfig, {"exponent_scale": 0.5}).exponent_scale == 0.5
    with pytest.raises(SchemaError):
        build_config(PeakonConfig, {"exponent_scale": 2.0})


def test_configs_are_frozen():
    config = TrainConfig()
    with pytest.raises(Exception):
        config.dt = 0.1


def test_load_config(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(json.dumps({"dataset": "spirals", "n_layers": 10}))
    config = load_config(str(path), TrainConfig)
    assert config.dataset == "spirals" and config.n_layers == 10


def test_load_config_errors(tmp_path):
    with pytest.raises(ArtifactIOError):
        load_config(str(tmp_path / "missing.json"), TrainConfig)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(SchemaError):
        load_config(str(bad), TrainConfig)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]")
    with pytest.raises(SchemaError):
        load_config(str(listed), TrainConfig)


def test_runs_root_precedence(monkeypatch):
    monkeypatch.delenv("GEOFLOW_RUNS", raising=False)
    assert runs_root() == "runs"
    monkeypatch.setenv("GEOFLOW_RUNS", "/tmp/elsewhere")
    assert runs_root() == "/tmp/elsewhere"
    assert runs_root("explicit") == "explicit"
