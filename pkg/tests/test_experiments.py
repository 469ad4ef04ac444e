import json

import pytest

from fairdistill.errors import ConfigurationError, ParameterError
from fairdistill.experiments import ExperimentConfig, run_comparison, run_skew_sweep, select_lambda
from fairdistill.fairness import deo_metrics
from fairdistill.trainer import SeedSummary

import numpy as np

TINY = {"synth": {"n_per_class": 40, "dim": 6}, "n_test_per_class": 20, "hidden": [8, 8],
        "train": {"epochs": 2, "batch_size": 32}, "k_seeds": 2, "lambdas": [1.0, 3.0],
        "skews": [0.5, 0.9]}


def test_defaults_match_protocol():
    cfg = ExperimentConfig()
    assert cfg.train.epochs == 50 and cfg.train.batch_size == 128 and cfg.k_seeds == 4
    assert cfg.lambdas == (1.0, 3.0, 10.0) and cfg.sweep_lambda == 3.0
    assert cfg.spec.layer_dims == (20, 64, 64, 4)


def test_root_seed_drives_everything():
    cfg = ExperimentConfig(seed=9)
    assert cfg.synth.seed == 9 and cfg.train.seed == 9


def test_strict_parsing():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"lamdbas": [1.0]})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"train": {"epoch": 3}})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"synth": {"seed": 3}})


def test_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict(TINY)
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(tmp_path / "c.json") == cfg


def test_invalid_json(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load(tmp_path / "c.json")


def test_bad_values():
    with pytest.raises(ParameterError):
        ExperimentConfig(skews=(0.4,))
    with pytest.raises(ParameterError):
        ExperimentConfig(baselines=("AT",))


def _summary(acc, deo):
    rep = deo_metrics(np.array([[acc, acc], [acc - deo, acc]]), np.ones((2, 2), dtype=int))
    return SeedSummary([0, 1], [rep, rep])


def test_select_lambda():
    teacher = _summary(0.9, 0.2)
    grid = {1.0: _summary(0.9, 0.1), 3.0: _summary(0.895, 0.05), 10.0: _summary(0.8, 0.0)}
    assert select_lambda(grid, teacher, 0.01) == 3.0
    assert select_lambda({10.0: _summary(0.5, 0.0), 30.0: _summary(0.4, 0.0)}, teacher, 0.01) == 10.0


def test_tiny_comparison(tmp_path):
    cfg = ExperimentConfig.from_dict(dict(TINY, baselines=["SS", "HKD", "FITNET"]))
    result = run_comparison(cfg, tmp_path)
    assert set(result.summaries) == {"teacher", "MFD", "MFD-K", "MFD-F", "SS", "HKD", "FitNet"}
    for name in ("metrics.csv", "summary.csv", "results.json", "report.txt", "report.csv", "methods.png"):
        assert (tmp_path / name).exists()
    doc = json.loads((tmp_path / "results.json").read_text())
    assert doc["root_seed"] == 0 and doc["chosen_lambda"] in (1.0, 3.0)


def test_tiny_sweep(tmp_path):
    result = run_skew_sweep(ExperimentConfig.from_dict(TINY), tmp_path)
    assert len(result.records) == 2 * 2 * 2
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "root_seed,skew,model,seed,acc,deo_a,deo_m" and len(lines) == 9
    assert (tmp_path / "sweep.png").exists()
