import json
import math

import pytest

from adagat import nn
from adagat.harness import ExperimentSuite, SchemaError, discover_runs, load_run, report, run_name, run_suite
from adagat.training import (DatasetConfig, MetricsRecord, ModelConfig, TrainRunConfig, materialize,
                             write_metrics)


def tiny_cfg(**kw):
    base = dict(epochs=1, batch_size=20, guide=ModelConfig(width=4), target=ModelConfig(width=4),
                dataset=DatasetConfig(n_train=20, n_test=20))
    base.update(kw)
    return TrainRunConfig(**base)


def fake_run(root, name, method, seed, robust, lam=2.5, epochs=(0, 1)):
    path = root / name
    path.mkdir(parents=True)
    cfg = materialize(tiny_cfg(method=method, seed=seed, lam=lam))
    (path / "config.json").write_text(cfg.canonical_json())
    guide = None if method == "plain_at" else 0.9
    recs = [MetricsRecord(e, guide, 0.95, robust if e == epochs[-1] else 0.5) for e in epochs]
    write_metrics(path / "metrics.csv", recs)
    return path


def test_run_name():
    assert run_name(tiny_cfg(method="adagat_mse", lam=2.5, seed=3)) == "two_moons-adagat_mse-lam2.5-seed3"
    assert run_name(tiny_cfg(method="lbgat", seed=0)) == "two_moons-lbgat-seed0"


def test_lambda_sweep_expands_to_twelve():
    suite = ExperimentSuite(tiny_cfg(), methods=["adagat_mse"], lambdas=[1, 2, 2.5, 3], seeds=[0, 1, 2])
    cfgs = suite.expand()
    assert len(cfgs) == 12
    assert len({run_name(c) for c in cfgs}) == 12


def test_default_suite_shape():
    suite = ExperimentSuite(tiny_cfg(), lambdas=[1, 2, 2.5, 3],
                            datasets=[DatasetConfig("two_moons"), DatasetConfig("gaussian_blobs", num_classes=3)])
    # per dataset: plain_at and lbgat once per seed, each adagat variant per lambda per seed
    assert len(suite.expand()) == 2 * 5 * (2 + 2 * 4)


def test_suite_from_dict_rejects_unknown():
    with pytest.raises(ValueError, match="unknown suite keys"):
        ExperimentSuite.from_dict({"base": {}, "lamdas": [1]})
    suite = ExperimentSuite.from_dict({"base": {"epochs": 1}, "methods": ["lbgat"], "seeds": [4]})
    assert suite.base.epochs == 1 and suite.seeds == [4]


def test_run_suite_writes_directories(tmp_path):
    suite = ExperimentSuite(tiny_cfg(), methods=["plain_at", "adagat_rmse"], lambdas=[1.0], seeds=[0],
                            output_root=str(tmp_path))
    paths = run_suite(suite)
    assert sorted(p.name for p in paths) == ["two_moons-adagat_rmse-lam1-seed0", "two_moons-plain_at-seed0"]
    assert all((p / "metrics.csv").is_file() and (p / "target.ckpt").is_file() for p in paths)


def test_config_reconstructs_run(tmp_path):
    suite = ExperimentSuite(tiny_cfg(), methods=["lbgat"], seeds=[2], output_root=str(tmp_path / "a"))
    [path] = run_suite(suite)
    cfg = TrainRunConfig.from_dict(json.loads((path / "config.json").read_text()))
    again = ExperimentSuite(cfg, methods=["lbgat"], seeds=[2], output_root=str(tmp_path / "b"))
    [path2] = run_suite(again)
    assert (path / "metrics.csv").read_bytes() == (path2 / "metrics.csv").read_bytes()
    assert (path / "target.ckpt").read_bytes() == (path2 / "target.ckpt").read_bytes()


def test_report_single_run_equals_final_record(tmp_path):
    fake_run(tmp_path, "r", "lbgat", 0, 0.625)
    rep = report([tmp_path])
    [row] = rep.rows
    assert row["target_robust_mean"] == 0.625 and row["target_robust_sample_std"] is None
    assert row["guide_clean_mean"] == 0.9 and row["n_runs"] == 1 and row["final_epoch"] == 1
    assert len(rep.series) == 2


def test_report_uses_sample_std(tmp_path):
    fake_run(tmp_path, "a", "adagat_mse", 0, 0.6)
    fake_run(tmp_path, "b", "adagat_mse", 1, 0.8)
    rep = report([tmp_path])
    [row] = rep.rows
    assert math.isclose(row["target_robust_mean"], 0.7)
    assert math.isclose(row["target_robust_sample_std"], math.sqrt(0.02))
    assert "sample standard deviation" in rep.text().splitlines()[0]
    table, series = rep.write(tmp_path / "out")
    lines = table.read_text().splitlines()
    assert lines[0].startswith("dataset,method,lambda,n_runs")
    assert len(lines) == 2 and series.is_file()


def test_report_groups_by_method_and_lambda(tmp_path):
    fake_run(tmp_path, "a", "adagat_mse", 0, 0.6, lam=1.0)
    fake_run(tmp_path, "b", "adagat_mse", 0, 0.6, lam=2.0)
    fake_run(tmp_path, "c", "plain_at", 0, 0.6)
    rows = report([tmp_path]).rows
    assert [(r["method"], r["lambda"]) for r in rows] == [("adagat_mse", 1.0), ("adagat_mse", 2.0), ("plain_at", None)]
    assert rows[2]["guide_clean_mean"] is None


def test_missing_metrics_names_directory(tmp_path):
    path = fake_run(tmp_path, "broken", "lbgat", 0, 0.5)
    (path / "metrics.csv").unlink()
    with pytest.raises(SchemaError, match="broken"):
        report([tmp_path])


def test_inconsistent_epochs_rejected(tmp_path):
    fake_run(tmp_path, "a", "lbgat", 0, 0.5, epochs=(0, 1))
    fake_run(tmp_path, "b", "lbgat", 1, 0.5, epochs=(0, 2))
    with pytest.raises(SchemaError, match="disagree"):
        report([tmp_path])


def test_bad_metrics_header_is_schema_error(tmp_path):
    path = fake_run(tmp_path, "a", "lbgat", 0, 0.5)
    (path / "metrics.csv").write_text("epoch,acc\n0,0.5\n")
    with pytest.raises(SchemaError):
        load_run(path)


def test_discover_missing_root(tmp_path):
    with pytest.raises(FileNotFoundError):
        discover_runs([tmp_path / "nope"])
