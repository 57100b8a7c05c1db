import json

import numpy as np
import pytest

from lfrid.cli import main
from lfrid.errors import ConfigError
from lfrid.pipeline import (ExperimentConfig, load_config, read_metrics, run_pipeline,
                            validate_config)

from helpers import synthetic_config, write_synthetic_csv


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    folder = tmp_path_factory.mktemp("synthetic")
    write_synthetic_csv(folder, n=512)
    return folder


def _write_cfg(path, cfg):
    path.write_text(json.dumps(cfg))
    return path


def test_defaults_roundtrip(capsys):
    assert main(["defaults"]) == 0
    dumped = json.loads(capsys.readouterr().out)
    cfg = ExperimentConfig.from_dict(dumped)
    assert cfg.to_dict() == dumped
    assert cfg.model.structures == [[1, 1], [2, 1], [2, 2]]
    assert cfg.model.restarts == 5 and cfg.bla.n_x == 3
    assert [t.name for t in cfg.data.tests] == ["multisine", "sweep"]
    validate_config(cfg)


def test_config_errors(tmp_path, data_dir):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"model": {"n_hidden": 3}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"lm": {"lambda_up": 0.1}})
    bad = synthetic_config(data_dir)
    bad["model"]["restarts"] = 0
    with pytest.raises(ConfigError):
        validate_config(ExperimentConfig.from_dict(bad))
    missing = synthetic_config(tmp_path)
    with pytest.raises(ConfigError, match="not found"):
        validate_config(ExperimentConfig.from_dict(missing))


def test_channel_mismatch_rejected_before_compute(tmp_path, data_dir):
    cfg = synthetic_config(data_dir)
    cfg["data"]["n_y"] = 2
    path = _write_cfg(tmp_path / "cfg.json", cfg)
    out = tmp_path / "run"
    assert main(["pipeline", "--config", str(path), "--out", str(out)]) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_error"]["error"] == "ConfigError"
    assert not (out / "data").exists()


def test_relative_paths_resolved(tmp_path, data_dir):
    cfg = synthetic_config(data_dir)
    cfg["data"]["estimation_path"] = "est.csv"
    path = _write_cfg(data_dir / "rel.json", cfg)
    assert load_config(path).data.estimation_path == str(data_dir / "est.csv")


def test_stage_failure_exit_code(tmp_path, data_dir):
    path = _write_cfg(tmp_path / "cfg.json", synthetic_config(data_dir))
    out = tmp_path / "run"
    # the BLA stage needs the data written by 'generate'
    assert main(["bla", "--config", str(path), "--out", str(out)]) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["stages"]["bla"]["status"] == "failed"


def test_stages_one_by_one_and_determinism(tmp_path, data_dir):
    cfg = synthetic_config(data_dir, restarts=1, max_iter=15, n_n=4, seeds=[3])
    path = _write_cfg(tmp_path / "cfg.json", cfg)
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        for stage in ("generate", "bla", "init", "fit", "eval"):
            assert main([stage, "--config", str(path), "--out", str(out)]) == 0
        runs.append(out)
    assert (runs[0] / "metrics.csv").read_bytes() == (runs[1] / "metrics.csv").read_bytes()
    rows = read_metrics(runs[0] / "metrics.csv")
    assert list(rows[0]) == ["dataset", "model", "n_z", "n_w", "seed", "selected",
                             "rmse_estimation", "rmse_test"]
    bla, fit = rows
    assert bla["model"] == "bla" and fit["seed"] == 3 and fit["selected"]
    assert fit["rmse_estimation"] <= bla["rmse_estimation"]
    man = json.loads((runs[0] / "manifest.json").read_text())
    assert all(s["status"] == "ok" for s in man["stages"].values())
    assert set(man["versions"]) >= {"lfrid", "numpy", "scipy", "numba", "python"}
    for name in ("residual_time_nllfr_nz1_nw1_test.csv",
                 "residual_spectrum_nllfr_nz1_nw1_test.csv", "residual_time_bla_test.csv"):
        assert (runs[0] / "plots" / name).exists()
    assert (runs[0] / "reports" / "fit_nz1_nw1_seed3_cost.csv").exists()


def test_pipeline_multi_start_selects_lowest_estimation_cost(tmp_path, data_dir):
    cfg = ExperimentConfig.from_dict(synthetic_config(data_dir, restarts=3, max_iter=10, n_n=4))
    out = run_pipeline(cfg, tmp_path / "run")
    rows = [r for r in read_metrics(out / "metrics.csv") if r["model"] == "nllfr"]
    assert len(rows) == 3
    best = min(rows, key=lambda r: r["rmse_estimation"])
    assert best["selected"] and sum(r["selected"] for r in rows) == 1
    assert all(r["rmse_estimation"] <= read_metrics(out / "metrics.csv")[0]["rmse_estimation"]
               for r in rows)
    assert np.isfinite(best["rmse_test"])
