import json
import os

import numpy as np
import pytest

from haargp.errors import ConfigError
from haargp.experiments import (
    ExperimentConfig,
    monotonicity_inversions,
    rerun_from_metrics,
    run_experiment,
    substream,
    sweep_gaussianity,
)


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="nope")
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="moments", n_qubits=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="moments", seed=-1)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "moments", "bogus_key": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({})


def test_substream_naming():
    a = substream(7, "alpha").standard_normal(4)
    b = substream(7, "alpha").standard_normal(4)
    c = substream(7, "beta").standard_normal(4)
    d = substream(8, "alpha").standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_moments_experiment_deterministic(tmp_path):
    cfg = ExperimentConfig(kind="moments", n_qubits=2, n_samples=3000, seed=5,
                           out_dir=str(tmp_path / "m"), threads=2)
    run_experiment(cfg)
    first = (tmp_path / "m" / "metrics.json").read_bytes()
    run_experiment(cfg)
    second = (tmp_path / "m" / "metrics.json").read_bytes()
    assert first == second
    payload = json.loads(first)
    assert payload["config"]["seed"] == 5
    assert "max_abs_z" in payload["metrics"]


def test_rerun_from_embedded_config(tmp_path):
    cfg = ExperimentConfig(kind="moments", n_qubits=1, n_samples=2000, seed=9,
                           out_dir=str(tmp_path / "r"))
    bundle = run_experiment(cfg)
    bundle2 = rerun_from_metrics(str(tmp_path / "r" / "metrics.json"))
    assert bundle.metrics == bundle2.metrics


def test_doubling_samples_shrinks_errors(tmp_path):
    """Paired-seed resource check: doubling N must not inflate the
    standard errors beyond fluctuation."""
    ses = {}
    for n_samples in (4000, 8000):
        cfg = ExperimentConfig(kind="moments", n_qubits=2, n_samples=n_samples,
                               seed=13, out_dir=str(tmp_path / f"n{n_samples}"))
        bundle = run_experiment(cfg)
        ses[n_samples] = [bundle.metrics[f"p{p}"]["std_error"] for p in (1, 2, 3, 4)]
    for lo, hi in zip(ses[8000], ses[4000]):
        assert lo < hi * 1.25


def test_gaussianity_experiment_artifacts(tmp_path):
    cfg = ExperimentConfig(kind="gaussianity", n_qubits=2, depth=3,
                           n_samples=1500, seed=3, out_dir=str(tmp_path / "g"))
    bundle = run_experiment(cfg)
    assert os.path.exists(tmp_path / "g" / "samples.csv")
    assert os.path.exists(tmp_path / "g" / "manifest.json")
    rows = bundle.metrics["diagnostics"]["outputs"]
    assert len(rows) == 2
    assert all(r["excess_kurtosis"] is not None for r in rows)


def test_dynamics_experiment_artifacts(tmp_path):
    cfg = ExperimentConfig(kind="dynamics", n_qubits=2, depth=8, seed=4,
                           eta=0.01, steps=12, out_dir=str(tmp_path / "d"))
    bundle = run_experiment(cfg)
    traj = (tmp_path / "d" / "trajectory.csv").read_text().splitlines()
    assert traj[0].startswith("step,loss,f_0")
    assert len(traj) == 14  # header + steps+1 rows
    assert bundle.metrics["loss_final"] <= bundle.metrics["loss_initial"]


def test_error_manifest_on_failure(tmp_path):
    cfg = ExperimentConfig(kind="gaussianity", n_qubits=2, depth=2, n_samples=1500,
                           seed=1, out_dir=str(tmp_path / "bad"),
                           data_path=str(tmp_path / "missing.csv"),
                           data_columns=("a", "b"))
    with pytest.raises(FileNotFoundError):
        run_experiment(cfg)
    manifest = json.loads((tmp_path / "bad" / "error_manifest.json").read_text())
    assert "FileNotFoundError" in manifest["error"]
    assert not os.path.exists(tmp_path / "bad" / "metrics.json")


def test_sweep_and_monotonicity_records(tmp_path):
    summary = sweep_gaussianity([1, 2], [1, 4], 1500, seed=21,
                                out_dir=str(tmp_path / "sw"))
    assert set(summary["cells"]) == {"n1_L1", "n1_L4", "n2_L1", "n2_L4"}
    inv = monotonicity_inversions(summary)
    for rec in inv:
        assert rec["axis"] in ("depth", "width")
        assert rec["increase"] > 0
        assert rec["allowance"] >= 0
    assert os.path.exists(tmp_path / "sw" / "summary.json")


def test_monotonicity_detects_planted_inversion():
    summary = {
        "config": {"n_values": [1], "depth_values": [2, 4]},
        "cells": {
            "n1_L2": {"labels": ["Z"], "kurtosis": [-0.3], "kurtosis_se": [0.01]},
            "n1_L4": {"labels": ["Z"], "kurtosis": [-0.9], "kurtosis_se": [0.01]},
        },
    }
    inv = monotonicity_inversions(summary)
    assert len(inv) == 1
    assert inv[0]["axis"] == "depth"
    assert inv[0]["increase"] == pytest.approx(0.6)
