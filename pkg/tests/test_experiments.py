import json

import numpy as np
import pytest

from nnkernels.experiments import (VERSION_HEADER, ConfigError, ExperimentConfig, read_bounds_csv,
                                   read_results_csv, run_experiment, run_seed, summarize, summarize_rows)


def _small_regression(**kw):
    base = dict(target="f2", grid={"N": 10, "M": 30}, depth=2, width=12, epochs=40, seeds=[0, 1],
                oversample=2)
    base.update(kw)
    return ExperimentConfig.defaults("regression", **base)


def _small_classification(**kw):
    base = dict(grid={"N1": 4, "N2": 3, "M1": 8, "M2": 6}, width=10, epochs=30, learning_rate=1e-3,
                seeds=[0], oversample=2, newton_max_iter=10)
    base.update(kw)
    return ExperimentConfig.defaults("classification", **base)


def test_defaults_match_the_reference_settings():
    r = ExperimentConfig.defaults("regression")
    assert (r.grid["N"], r.grid["M"], r.depth, r.width, r.learning_rate, r.epochs) == (200, 600, 3, 128, 1e-3, 2400)
    assert r.dims == (1, 128, 128, 128, 1) and r.seeds == list(range(10))
    c = ExperimentConfig.defaults("classification")
    assert (c.grid["N1"], c.grid["N2"], c.grid["M1"], c.grid["M2"]) == (11, 7, 22, 21)
    assert (c.depth, c.learning_rate, c.epochs, c.stop_accuracy) == (2, 1e-5, 4000, 0.85)
    assert c.kernels == ["nn", "ntk", "ck"]
    assert r.checkpoint_epochs() == list(range(0, 2401, 240))


@pytest.mark.parametrize("bad", [dict(kernels=["nn", "svm"]), dict(activation="gelu"), dict(seeds=[1, 1]),
                                 dict(grid={"N": 10, "M": 15}), dict(target="x +"), dict(checkpoints=[5000]),
                                 dict(ckj_form="dense"), dict(learning_rate=-1.0)])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.defaults("regression", **bad)


def test_ckj_is_regression_only():
    with pytest.raises(ConfigError):
        ExperimentConfig.defaults("classification", kernels=["nn", "ckj"])


def test_from_dict_and_load(tmp_path):
    cfg = ExperimentConfig.from_dict({"task": "regression", "grid": {"N": 20, "M": 40}, "width": 8})
    assert cfg.grid == {"a": -1.0, "b": 1.0, "N": 20, "M": 40}
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"widht": 8})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path) == cfg
    with pytest.raises(ConfigError, match="not found"):
        ExperimentConfig.load(tmp_path / "missing.json")
    path.write_text("{")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)


def test_regression_seed_record():
    cfg = _small_regression(checkpoints=[0, 20, 40])
    rec = run_seed(cfg, 0)
    assert not rec.diverged and rec.epochs_run == 40
    epochs = sorted({r[2] for r in rec.rows})
    assert epochs == [0, 20, 40]
    for m in ("nn", "ntk", "ck", "ckj"):
        assert np.isfinite(rec.final(m, "test", "l2_error"))
    # nested kernel machines: the CK span is part of the NTK span
    assert rec.final("ntk", "train", "l2_error") <= rec.final("ck", "train", "l2_error") * (1 + 1e-6)
    # the feature form cuts singular values at rcond, the kernel form cuts
    # eigenvalues (squared singular values), so CKJ keeps more directions
    assert rec.final("ckj", "train", "l2_error") <= rec.final("ck", "train", "l2_error") * (1 + 1e-6)
    ids = {r.bound_id for r in rec.bound_reports}
    assert {"tr_bound", "thm_mono/lower", "thm_lip/2", "norm_ineq1/ntk"} <= ids


def test_ortho_ckj_form_agrees_with_feature_form():
    a = run_seed(_small_regression(ckj_form="feature", run_bounds=False), 0)
    b = run_seed(_small_regression(ckj_form="ortho", run_bounds=False), 0)
    assert b.final("ckj", "test", "l2_error") == pytest.approx(a.final("ckj", "test", "l2_error"), rel=1e-6)


def test_classification_seed_record():
    rec = run_seed(_small_classification(), 0)
    assert set(rec.convergence) == {"ntk", "ck"}
    assert {"converged", "stop_reason", "iterations"} <= set(rec.convergence["ntk"])
    for m in ("nn", "ntk", "ck"):
        acc = rec.final(m, "test", "accuracy")
        assert 0.0 <= acc <= 1.0
    ids = {r.bound_id for r in rec.bound_reports}
    assert {"log_tr_bound", "thm_cormax/upper", "thm_loglip/lower", "loss_ineq1/ck"} <= ids


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_seed_is_recorded():
    cfg = _small_regression(target="exp(800*x)", seeds=[0], epochs=3)
    rec = run_seed(cfg, 0)
    assert rec.diverged and rec.note
    assert summarize([rec])["excluded_seeds"] == {"0": rec.note}


def test_outputs_and_readers(tmp_path):
    cfg = _small_regression()
    records = run_experiment(cfg, tmp_path)
    text = (tmp_path / "results.csv").read_text()
    assert text.splitlines()[0] == VERSION_HEADER
    assert text.splitlines()[1] == "seed,method,stage,epoch,metric,value"
    rows = read_results_csv(tmp_path / "results.csv")
    assert {r["seed"] for r in rows} == {0, 1}
    assert {r["method"] for r in rows} == {"nn", "ntk", "ck", "ckj"}
    bnd = read_bounds_csv(tmp_path / "bounds.csv")
    assert len(bnd) == sum(len(r.bound_reports) for r in records)
    assert (tmp_path / "seed_0001" / "net.json").is_file()
    assert (tmp_path / "seed_0000" / "fit_ntk.json").is_file()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["metrics"]["nn/test/l2_error"]["n"] == 2
    # merged file equals the per-seed files concatenated
    per_seed = [(tmp_path / f"seed_{s:04d}" / "results.csv").read_text().splitlines()[2:] for s in (0, 1)]
    assert text.splitlines()[2:] == per_seed[0] + per_seed[1]


def test_summarize_rows_uses_last_epoch():
    rows = [{"seed": s, "method": "nn", "stage": "test", "epoch": e, "metric": "l2_error", "value": v}
            for s, e, v in [(0, 0, 9.0), (0, 10, 1.0), (1, 0, 9.0), (1, 10, 3.0), (2, 5, 2.0)]]
    st = summarize_rows(rows)["nn/test/l2_error"]
    assert st["n"] == 3 and st["median"] == 2.0 and st["max"] == 3.0


def test_parallel_and_serial_runs_are_identical(tmp_path, monkeypatch):
    cfg = _small_regression(epochs=10)
    monkeypatch.setenv("KS_THREADS", "1")
    run_experiment(cfg, tmp_path / "serial")
    monkeypatch.setenv("KS_THREADS", "2")
    run_experiment(cfg, tmp_path / "pool")
    for name in ("results.csv", "bounds.csv"):
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "pool" / name).read_bytes()
