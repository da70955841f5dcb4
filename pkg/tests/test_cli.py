import csv
import json

import numpy as np
import pytest

from periodic_qat import cli
from periodic_qat.metrics import quantization_report
from periodic_qat.data import dataset_from_config
from periodic_qat.model_io import import_quantized, load_checkpoint
from periodic_qat.trainer import load_config, read_records_csv

CONFIG = {
    "epochs": 4, "batch_size": 32, "learning_rate": 0.05, "seed": 0,
    "regularizer": {"kind": "sine", "frequency": 7, "normalize": True},
    "schedule": {"start_amplitude": 1e-3, "step_factor": 10, "step_period_epochs": 2, "mode": "dynamic"},
    "dataset": {"kind": "blobs", "samples": 150, "classes": 3, "noise": 0.4},
    "model": {"hidden": [8]},
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(CONFIG))
    return path


@pytest.fixture
def trained(tmp_path, config_path):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(config_path), "--out-dir", str(out)]) == 0
    return out


def test_train_artifacts(trained):
    assert {p.name for p in trained.iterdir()} == {"manifest.json", "checkpoint.pqck", "epochs.csv"}
    records = read_records_csv(trained / "epochs.csv")
    assert [r.amplitude for r in records] == pytest.approx([1e-3, 1e-3, 1e-2, 1e-2])
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 0 and manifest["command"] == "train"


def test_rerun_from_manifest_is_identical(trained, tmp_path):
    again = tmp_path / "again"
    assert cli.main(["train", "--config", str(trained / "manifest.json"), "--out-dir", str(again)]) == 0
    assert (again / "epochs.csv").read_bytes() == (trained / "epochs.csv").read_bytes()
    assert (again / "checkpoint.pqck").read_bytes() == (trained / "checkpoint.pqck").read_bytes()


def test_baseline_config(tmp_path):
    cfg = dict(CONFIG, schedule={"start_amplitude": 0.0, "mode": "fixed"})
    (tmp_path / "b.json").write_text(json.dumps(cfg))
    assert cli.main(["train", "--config", str(tmp_path / "b.json"), "--out-dir", str(tmp_path / "b")]) == 0
    assert all(r.penalty == 0 for r in read_records_csv(tmp_path / "b" / "epochs.csv"))


def test_quantize(trained, tmp_path, capsys):
    out = tmp_path / "q8.pqqx"
    assert cli.main(["quantize", str(trained / "checkpoint.pqck"), "--bits", "8", "--out", str(out), "--json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["frequency"] == 127
    first = out.read_bytes()
    assert cli.main(["quantize", str(trained / "checkpoint.pqck"), "--bits", "8", "--out", str(out)]) == 0
    assert out.read_bytes() == first


def test_quantize_two_bits_three_levels(trained, tmp_path, capsys):
    out = tmp_path / "q2"
    cli.main(["quantize", str(trained / "checkpoint.pqck"), "--bits", "2", "--kind", "sine", "--out", str(out),
              "--json"])
    assert set(json.loads(capsys.readouterr().out)["levels"].values()) == {3}


def test_eval_export_matches_in_memory(trained, tmp_path, config_path, capsys):
    out = tmp_path / "q4"
    cli.main(["quantize", str(trained / "checkpoint.pqck"), "--frequency", "7", "--out", str(out)])
    capsys.readouterr()
    assert cli.main(["eval", str(out), "--config", str(config_path), "--json"]) == 0
    from_export = json.loads(capsys.readouterr().out)
    model = load_checkpoint(trained / "checkpoint.pqck")
    test_set = dataset_from_config(load_config(config_path).dataset)[1]
    rep = quantization_report(model, test_set, 4)
    assert from_export["test_error"] == rep.quantized_error
    assert from_export["test_loss"] == rep.quantized_loss
    assert import_quantized(out).checksum() != model.checksum()


def test_eval_json_schema(trained, config_path, capsys, tmp_path):
    assert cli.main(["eval", str(trained / "checkpoint.pqck"), "--config", str(config_path), "--bits", "8",
                     "--json", "--out-dir", str(tmp_path / "ev")]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["schema"] == "periodic-qat/eval/1"
    assert set(result) == {"schema", "path", "format", "test_error", "test_loss", "report"}
    assert result["format"] == "checkpoint"
    rep = result["report"]
    assert rep["schema"] == "periodic-qat/quant-report/1"
    assert rep["drop"] == pytest.approx(rep["quantized_error"] - rep["baseline_error"])
    assert json.loads((tmp_path / "ev" / "eval.json").read_text()) == result


def test_missing_file(config_path, tmp_path):
    assert cli.main(["eval", str(tmp_path / "nope"), "--config", str(config_path)]) == cli.EXIT_MISSING
    assert cli.main(["train", "--config", str(tmp_path / "nope"), "--out-dir", str(tmp_path)]) == cli.EXIT_MISSING


def test_bad_config(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"epochs": 0}))
    assert cli.main(["train", "--config", str(tmp_path / "c.json"), "--out-dir", str(tmp_path)]) == cli.EXIT_CONFIG


def test_corrupt_checkpoint(tmp_path, config_path):
    (tmp_path / "bad").write_bytes(b"PQCK" + b"\0" * 3)
    code = cli.main(["eval", str(tmp_path / "bad"), "--config", str(config_path)])
    assert code == 11


def test_divergence_exit(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps(dict(CONFIG, learning_rate=1e30)))
    assert cli.main(["train", "--config", str(tmp_path / "c.json"), "--out-dir", str(tmp_path)]) == cli.EXIT_DIVERGED


def test_sweep(tmp_path, config_path):
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--config", str(config_path), "--amplitudes", "1e-3,1e-2", "--bits", "3",
                     "--out-dir", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert len(rows) == 2
    assert tuple(rows[0]) == cli.SWEEP_COLUMNS
    assert rows[0]["frequency"] == "3"


def test_sweep_single_amplitude_equals_train(tmp_path, config_path):
    from dataclasses import replace

    from periodic_qat.trainer import AmplitudeSchedule, train

    out = tmp_path / "sw"
    cli.main(["sweep", "--config", str(config_path), "--amplitudes", "1e-2", "--bits", "3", "--out-dir", str(out)])
    row = next(csv.DictReader(open(out / "sweep.csv")))
    cfg = load_config(config_path)
    cfg = replace(cfg, regularizer=replace(cfg.regularizer, frequency=3),
                  schedule=AmplitudeSchedule.ending_at(1e-2, cfg.epochs, 10, 2))
    model, _ = train(cfg)
    test_set = dataset_from_config(cfg.dataset)[1]
    assert float(row["dynamic_quantized_error"]) == quantization_report(model, test_set, 3).quantized_error


@pytest.mark.parametrize("kind,freq,zeros", [("sine", 1, [-1.0, 0.0, 1.0]), ("hat", 7, 15), ("cosine", 8, 16)])
def test_landscape(tmp_path, capsys, kind, freq, zeros):
    out = tmp_path / "l.csv"
    assert cli.main(["landscape", "--kind", kind, "--frequency", str(freq), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))[1:]
    u = np.array([float(a) for a, _ in rows])
    r = np.array([float(b) for _, b in rows])
    found = u[r <= cli.ZERO_TOLERANCE]
    if isinstance(zeros, list):
        np.testing.assert_array_equal(found, zeros)
    else:
        assert found.size == zeros
    if kind == "cosine":
        assert 0.0 not in found
    assert f"zeros={found.size}" in capsys.readouterr().out
