import json
import os

import numpy as np
import pytest

from haargp.cli import main
from haargp.data import FeatureTable, write_table_csv


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_weingarten_table_stdout(capsys):
    code, out, _ = run(["weingarten-table", "-p", "2", "-d", "4"], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload["entries"]["1+1"] == pytest.approx(1 / 15)
    assert payload["entries"]["2"] == pytest.approx(-1 / 60)


def test_weingarten_table_file_output(tmp_path, capsys):
    code, out, _ = run(["weingarten-table", "-p", "1", "-d", "3",
                        "--out", str(tmp_path)], capsys)
    assert code == 0
    path = tmp_path / "weingarten_p1_d3.json"
    assert path.exists()
    assert json.loads(path.read_text())["entries"]["1"] == pytest.approx(1 / 3)


def test_exit_code_numerical():
    assert main(["weingarten-table", "-p", "4", "-d", "2"]) == 3


def test_exit_code_pseudo_inverse_opt_in(capsys):
    code, out, _ = run(["weingarten-table", "-p", "4", "-d", "2",
                        "--pseudo-inverse"], capsys)
    assert code == 0
    assert json.loads(out)["pseudo_inverse"] is True


def test_exit_code_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "unknown-kind"}')
    assert main(["moments", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["moments", "--config", str(tmp_path / "missing.json")]) == 2


def test_exit_code_bad_subcommand():
    assert main(["not-a-command"]) == 2


def test_moments_check_pass_and_fail(tmp_path):
    out = str(tmp_path / "m")
    assert main(["moments", "--n-qubits", "2", "--samples", "2500",
                 "--seed", "3", "--out", out, "--check"]) == 0
    # an absurdly tight tolerance must trip exit code 4
    assert main(["moments", "--n-qubits", "2", "--samples", "2500",
                 "--seed", "3", "--out", out, "--check",
                 "--max-z", "1e-12"]) == 4


def test_gaussianity_writes_metrics(tmp_path):
    out = str(tmp_path / "g")
    code = main(["gaussianity", "--n-qubits", "1", "--layers", "2",
                 "--samples", "1500", "--seed", "2", "--out", out])
    assert code == 0
    payload = json.loads(open(os.path.join(out, "metrics.json")).read())
    assert payload["config"]["kind"] == "gaussianity"
    assert os.path.exists(os.path.join(out, "samples.csv"))


def test_gp_predict_end_to_end(tmp_path, capsys):
    rng = np.random.default_rng(1)
    feats = rng.uniform(0, 2 * np.pi, size=(8, 2))
    labels = np.where(feats[:, 0] > np.pi, 0.5, -0.5)
    write_table_csv(str(tmp_path / "train.csv"),
                    FeatureTable(feats[:6], labels=labels[:6]))
    write_table_csv(str(tmp_path / "test.csv"),
                    FeatureTable(feats[6:], labels=labels[6:]))
    code, out, _ = run(["gp-predict", "--train", str(tmp_path / "train.csv"),
                        "--test", str(tmp_path / "test.csv")], capsys)
    assert code == 0
    payload = json.loads(out)
    assert len(payload["mean"]) == 2
    assert len(payload["variance"]) == 2
    assert all(v >= -1e-10 for v in payload["variance"])
    assert "test_mse" in payload


def test_qntk_train_artifacts(tmp_path):
    out = str(tmp_path / "q")
    code = main(["qntk-train", "--n-qubits", "2", "--layers", "8",
                 "--steps", "10", "--seed", "5", "--out", out])
    assert code == 0
    lines = open(os.path.join(out, "trajectory.csv")).read().splitlines()
    assert len(lines) == 12
    assert lines[0].split(",")[:2] == ["step", "loss"]


def test_sweep_requires_config(tmp_path):
    assert main(["sweep", "--out", str(tmp_path)]) == 2


def test_sweep_runs_small_grid(tmp_path):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"n_values": [1], "depth_values": [1, 2],
                               "n_samples": 1200}))
    out = str(tmp_path / "sw")
    code = main(["sweep", "--config", str(cfg), "--seed", "4", "--out", out])
    assert code == 0
    summary = json.loads(open(os.path.join(out, "summary.json")).read())
    assert set(summary["cells"]) == {"n1_L1", "n1_L2"}


def test_ng_correct_roundtrip(tmp_path, capsys):
    path = tmp_path / "mom.json"
    path.write_text(json.dumps({
        "second": [[0.8]],
        "fourth_connected": [[[[-3e-5]]]],
        "lambda": 1.0,
        "y": [0.25],
        "observed": [0],
    }))
    code, out, _ = run(["ng-correct", "--moments", str(path)], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload["corrected_covariance"][0][0] == pytest.approx(0.8, abs=1e-7)
    assert payload["corrected_mean"][0] == pytest.approx(0.25)
    assert payload["warning"] is None


def test_ng_correct_missing_key(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"second": [[1.0]]}))
    assert main(["ng-correct", "--moments", str(path)]) == 2
