import csv
import json
from pathlib import Path

import numpy as np
import pytest

from coximpute import ColumnKind, SurvivalDataset
from coximpute.cli import main
from coximpute.config import RunConfig, read_config_file, workers_from_env
from coximpute.errors import ParameterError, ParseError, ValidationError
from coximpute.io import ColumnSpec, config_hash, load_csv, read_predictions, read_report, save_csv
from coximpute.simulation import ScenarioConfig, amputate, gen_dataset

GOLDEN = Path(__file__).parent / "golden" / "crossval_tiny_report.csv"


def _write(path, text):
    path.write_text(text)
    return path


def test_load_csv_masks_missing_tokens(tmp_path):
    p = _write(tmp_path / "d.csv", "time,status,x,g\n1.5,1,NA,b\n2,0,0.25,a\n3,1,1e-3,NA\n")
    specs = [ColumnSpec("time", "time"), ColumnSpec("status", "status"), ColumnSpec("x"),
             ColumnSpec("g", "categorical", ("a", "b"))]
    data, _ = load_csv(p, specs)
    assert data.missing_mask.tolist() == [[True, False], [False, False], [False, True]]
    assert data.predictors[1, 0] == 0.25 and data.predictors[0, 1] == 1.0
    assert data.column_kinds[1] == ColumnKind.categorical(2)
    assert data.column_names == ("x", "g")


def test_load_csv_errors(tmp_path):
    with pytest.raises(ValidationError):
        load_csv(_write(tmp_path / "a.csv", "time,status,x\n1,2,0.5\n2,1,1\n"))
    with pytest.raises(ValidationError):
        load_csv(_write(tmp_path / "b.csv", "time,status,x\n-1,1,0.5\n2,1,1\n"))
    with pytest.raises(ParseError) as info:
        load_csv(_write(tmp_path / "c.csv", "time,status,x\n1,1,0.5\n2,1,oops\n"))
    assert (info.value.row, info.value.column) == (2, "x")
    with pytest.raises(ValidationError):
        load_csv(_write(tmp_path / "d.csv", "status,x\n1,0.5\n"))
    with pytest.raises(ParseError):
        load_csv(_write(tmp_path / "e.csv", "time,status,x\n1,1\n"))


def test_save_load_round_trip_is_exact(tmp_path):
    cfg = ScenarioConfig.scenario(4, "MAR", n=150)
    sim = gen_dataset(cfg, 3)
    data = amputate(cfg, sim.data, 3)
    path = tmp_path / "sim.csv"
    specs = save_csv(path, data)
    back, _ = load_csv(path, specs)
    assert back.equals(data)
    assert back.time.tobytes() == data.time.tobytes()
    obs = ~data.missing_mask
    assert back.predictors[obs].tobytes() == data.predictors[obs].tobytes()


def test_round_trip_with_categorical(tmp_path):
    X = np.array([[0.5, 2.0], [np.nan, 0.0], [1.5, 1.0]])
    data = SurvivalDataset([1.0, 2.0, 3.0], [1, 0, 1], X, np.isnan(X),
                           (ColumnKind(), ColumnKind.categorical(3)), ("a", "c"))
    specs = save_csv(tmp_path / "c.csv", data)
    back, _ = load_csv(tmp_path / "c.csv", specs)
    assert back.equals(data)


def test_run_config_validation_and_files(tmp_path, monkeypatch):
    with pytest.raises(ParameterError):
        RunConfig(horizons=(60, 12))
    with pytest.raises(ParameterError):
        RunConfig(methods=("ap9",))
    assert RunConfig(methods="ap2B").methods == ("ap2B",)
    p = _write(tmp_path / "m.json", json.dumps({"config": {"K": 3}, "config_hash": "x"}))
    assert read_config_file(p) == {"K": 3}
    monkeypatch.setenv("COXIMPUTE_WORKERS", "3")
    assert workers_from_env() == 3
    monkeypatch.setenv("COXIMPUTE_WORKERS", "zero")
    with pytest.raises(ParameterError):
        workers_from_env()
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


def _run(*argv):
    return main(list(argv) + ["-q"])


def test_exit_codes(tmp_path, capsys):
    assert _run("simulate", "--scenario", "7", "-o", str(tmp_path / "s")) == 2
    assert _run("crossval", "-K", "0", "-o", str(tmp_path / "a")) == 2
    assert _run("crossval", "--methods", "ap5") == 2
    assert _run("predict", "-o", str(tmp_path / "p")) == 2  # --newdata missing
    bad = _write(tmp_path / "bad.csv", "time,status,x\n1,3,0.5\n2,1,1\n")
    assert _run("crossval", "--input", str(bad), "-o", str(tmp_path / "b")) == 1
    assert _run("crossval", "--input", str(tmp_path / "absent.csv"), "-o", str(tmp_path / "c")) == 1
    cfg = _write(tmp_path / "cfg.json", json.dumps({"bogus": 1}))
    assert _run("crossval", "--config", str(cfg), "-o", str(tmp_path / "d")) == 2
    err = capsys.readouterr().err
    assert "unknown scenario" in err and "status must be 0 or 1" in err


def _tiny(out, *extra):
    return _run("crossval", "-K", "2", "-L", "4", "--methods", "ap1", "ap2A", "ap2B", "--replicates", "2",
                "--seed", "7", "-o", str(out), *extra)


def test_golden_crossval_report(tmp_path):
    assert _tiny(tmp_path / "g") == 0
    produced = list(csv.reader(open(tmp_path / "g" / "report.csv")))
    pinned = list(csv.reader(open(GOLDEN)))
    assert [r[:5] for r in produced] == [r[:5] for r in pinned]
    for a, b in zip(produced[1:], pinned[1:]):
        if b[5] == "NA":
            assert a[5] == "NA"
        else:
            assert float(a[5]) == pytest.approx(float(b[5]), rel=1e-9, abs=1e-12)


def test_outputs_reproduce_from_manifest_serial_and_parallel(tmp_path, monkeypatch):
    assert _tiny(tmp_path / "a") == 0
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config_hash"] == config_hash(manifest["config"])
    assert manifest["seeds"]["master"] == 7 and len(manifest["seeds"]["replicates"]) == 2
    assert _run("crossval", "--config", str(tmp_path / "a" / "manifest.json"), "-o", str(tmp_path / "b")) == 0
    monkeypatch.setenv("COXIMPUTE_WORKERS", "2")
    assert _run("crossval", "--config", str(tmp_path / "a" / "manifest.json"), "-o", str(tmp_path / "c")) == 0
    for name in ("report.csv", "report.json", "predictions.csv", "manifest.json"):
        ref = (tmp_path / "a" / name).read_bytes()
        assert (tmp_path / "b" / name).read_bytes() == ref
        assert (tmp_path / "c" / name).read_bytes() == ref


def test_config_file_overrides_flags(tmp_path):
    cfg = _write(tmp_path / "cfg.json", json.dumps({"K": 1, "methods": ["ap2B"], "L": 3}))
    assert _run("crossval", "-K", "4", "--config", str(cfg), "-o", str(tmp_path / "o")) == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config"]["K"] == 1 and manifest["config"]["methods"] == ["ap2B"]


def test_K1_prediction_files_coincide(tmp_path):
    for m in ("ap1", "ap2A"):
        assert _run("crossval", "-K", "1", "-L", "5", "--methods", m, "--seed", "3", "-o", str(tmp_path / m)) == 0
    a = read_predictions(tmp_path / "ap1" / "predictions.csv")[("ap1", 0)]
    b = read_predictions(tmp_path / "ap2A" / "predictions.csv")[("ap2A", 0)]
    assert a[1].tobytes() == b[1].tobytes()


def test_default_run_emits_all_files_and_two_horizon_blocks(tmp_path):
    out = tmp_path / "d"
    assert _run("crossval", "-K", "2", "-L", "3", "-o", str(out)) == 0
    assert {p.name for p in out.iterdir()} == {"report.csv", "report.json", "predictions.csv", "manifest.json"}
    report = read_report(out / "report.csv")
    assert {r["horizon"] for r in report.rows} == {12.0, 60.0}
    mirror = json.loads((out / "report.json").read_text())
    assert mirror["rows"] == report.rows


def test_assess_reproduces_crossval_report(tmp_path):
    assert _tiny(tmp_path / "a") == 0
    assert _run("assess", "--predictions", str(tmp_path / "a" / "predictions.csv"), "-o", str(tmp_path / "b")) == 0
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()


def test_fit_and_predict(tmp_path):
    assert _run("fit", "-K", "2", "-o", str(tmp_path / "f")) == 0
    model = json.loads((tmp_path / "f" / "model.json").read_text())
    assert len(model["approach1"]) == 2
    np.testing.assert_allclose(model["approach2A"]["beta"],
                               np.mean([f["beta"] for f in model["approach1"]], axis=0), rtol=1e-12)
    assert _run("predict", "-K", "2", "--methods", "ap1", "ap2A", "--newdata", "bundled:sample_newdata.csv",
                "-o", str(tmp_path / "p")) == 0
    preds = read_predictions(tmp_path / "p" / "predictions.csv")
    h, arr = preds[("ap2A", 0)]
    assert arr.shape == (2, 3, 2)
    assert np.all(arr[:, :2, 0] == arr[:, :2, 1])  # complete rows: no spread under the pooled model
    assert _run("predict", "--methods", "nv1", "--newdata", "bundled:sample_newdata.csv",
                "-o", str(tmp_path / "q")) == 2


def test_simulate_desk_preset_runs_and_reproduces(tmp_path):
    args = ("simulate", "--scenario", "1", "--mechanism", "mcar", "--desk", "--S", "1", "--R", "2", "-K", "2")
    assert _run(*args, "-o", str(tmp_path / "a")) == 0
    assert _run("simulate", "--config", str(tmp_path / "a" / "manifest.json"), "-o", str(tmp_path / "b")) == 0
    for name in ("scenario1_mcar.csv", "scenario1_mcar.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    cell = manifest["config"]["cells"][0]
    assert (cell["n"], cell["S"], cell["R"], cell["K"]) == (500, 1, 2, [2])
