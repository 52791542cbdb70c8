import numpy as np
import pytest

from model import __version__
from utils.artifacts import (
    create_run,
    dumps_json,
    fingerprint,
    load_state,
    read_csv,
    read_json,
    write_csv,
)
from utils.config import TrainConfig
from utils.errors import ArtifactIOError, UsageError


def test_csv_floats_read_back_exactly(tmp_path):
    path = tmp_path / "table.csv"
    values = [0.1, 1.0 / 3.0, np.pi * 1e-9, -2.5e17]
    write_csv([(k, v) for k, v in enumerate(values)], ("k", "value"), str(path))
    frame = read_csv(str(path))
    assert list(frame.columns) == ["k", "value"]
    assert frame["value"].tolist() == values


def test_csv_accepts_mapping_rows(tmp_path):
    path = tmp_path / "rows.csv"
    write_csv([{"b": 2.0, "a": 1}], ("a", "b"), str(path))
    assert path.read_text() == "a,b\n1,2\n"


def test_empty_csv_has_header(tmp_path):
    path = tmp_path / "empty.csv"
    write_csv([], ("x", "y"), str(path))
    assert path.read_text() == "x,y\n"


def test_csv_schema_checks(tmp_path):
    with pytest.raises(UsageError):
        write_csv([(1, 2)], ("x", "x"), str(tmp_path / "dup.csv"))
    with pytest.raises(UsageError):
        write_csv([(1, 2, 3)], ("x", "y"), str(tmp_path / "wide.csv"))


def test_json_is_canonical():
    text = dumps_json({"b": np.float64(1.5), "a": np.arange(2)})
    assert text == '{\n  "a": [\n    0,\n    1\n  ],\n  "b": 1.5\n}\n'


def test_fingerprint_ignores_key_order():
    assert fingerprint({"a": 1, "b": 2}) == fingerprint({"b": 2, "a": 1})
    assert fingerprint({"a": 1}) != fingerprint({"a": 2})


def test_create_run_is_deterministic(runs_dir):
    config = TrainConfig(seed=5)
    first = create_run("train", config)
    second = create_run("train", config)
    assert first.run_id == second.run_id
    assert first.run_id.startswith("train-")
    meta = read_json(first.file("meta.json"))
    assert meta["seed"] == 5
    assert meta["version"] == __version__
    assert meta["fingerprint"] == first.fingerprint
    assert read_json(first.file("config.json"))["seed"] == 5


def test_different_configs_get_different_runs(runs_dir):
    a = create_run("train", TrainConfig(seed=1))
    b = create_run("train", TrainConfig(seed=2))
    assert a.path != b.path


def test_tables_are_recorded_in_meta(runs_dir):
    run = create_run("gradcheck", {"seed": 0})
    run.write_table("gradcheck.csv", [("h", 1e-9)], ("hamiltonian", "max_deviation"))
    run.write_document("summary.json", {"ok": True})
    assert read_json(run.file("meta.json"))["tables"] == ["gradcheck.csv", "summary.json"]


def test_state_round_trip(runs_dir):
    run = create_run("train", {"seed": 0})
    path = run.save_state({"state": np.arange(4.0)})
    np.testing.assert_array_equal(load_state(path)["state"], np.arange(4.0))


def test_missing_files_raise_artifact_errors(tmp_path):
    with pytest.raises(ArtifactIOError):
        read_json(str(tmp_path / "nope.json"))
    with pytest.raises(ArtifactIOError):
        load_state(str(tmp_path / "nope.joblib"))
