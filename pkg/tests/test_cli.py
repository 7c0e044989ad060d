import json

import pytest

from fixpoint_lab import cli
from fixpoint_lab.util import read_csv, read_json


def write_cfg(path, **kw):
    path.write_text(json.dumps(kw))
    return str(path)


def test_reciprocal_run_and_outputs(tmp_path, capsys):
    assert cli.main(["reciprocal-demo", "--out", str(tmp_path / "r")]) == 0
    checks = read_json(tmp_path / "r" / "checks.json")
    assert checks["closed_form_pass"]
    resolved = read_json(tmp_path / "r" / "config.resolved.json")
    assert resolved["params"]["eta"] == 0.5 and resolved["kind"] == "reciprocal-demo"
    head, rows = read_csv(tmp_path / "r" / "reciprocal.csv")
    assert head[:3] == ["t", "x", "y_t"] and len(rows) == 31 * 50


def test_unknown_field_is_validation_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", params={"etaa": 0.5})
    assert cli.main(["reciprocal-demo", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error[validation]") and "etaa" in err[0]


def test_unknown_top_key_and_kind_mismatch(tmp_path):
    assert cli.main(["reciprocal-demo", "--config", write_cfg(tmp_path / "a.json", foo=1)]) == 1
    assert cli.main(["reciprocal-demo", "--config", write_cfg(tmp_path / "b.json", kind="manifold")]) == 1


def test_bad_value_is_validation_error(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", params={"target": "nope"})
    assert cli.main(["regular-op", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


def test_missing_config_file(tmp_path):
    assert cli.main(["reciprocal-demo", "--config", str(tmp_path / "absent.json")]) == 1


def test_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    def boom(c, o, b):
        raise FloatingPointError("non-finite iterate at t=3")

    entry = cli.EXPERIMENTS["reciprocal-demo"]
    monkeypatch.setitem(cli.EXPERIMENTS, "reciprocal-demo", (entry[0], boom) + entry[2:])
    assert cli.main(["reciprocal-demo", "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith("error[numerical]")


def test_seed_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "17")
    cfg = write_cfg(tmp_path / "c.json", seed=3, params={"n_ops": 2})
    assert cli.main(["solver-bench", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert read_json(tmp_path / "o" / "config.resolved.json")["seed"] == 17
    monkeypatch.setenv(cli.SEED_ENV, "x")
    assert cli.main(["solver-bench", "--config", cfg, "--out", str(tmp_path / "o2")]) == 1


def test_rerun_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", params={"n_ops": 3})
    for d in ("a", "b"):
        assert cli.main(["solver-bench", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "solver_bench.csv").read_bytes() == (tmp_path / "b" / "solver_bench.csv").read_bytes()


def test_report_empty_and_missing(tmp_path, capsys):
    assert cli.main(["report", "--out", str(tmp_path)]) == 1
    assert cli.main(["reciprocal-demo", "--out", str(tmp_path / "r")]) == 0
    (tmp_path / "r" / "reciprocal.csv").unlink()
    assert cli.main(["report", "--out", str(tmp_path)]) == 1
    assert "reciprocal.csv" in capsys.readouterr().err


def test_report_is_idempotent(tmp_path):
    assert cli.main(["reciprocal-demo", "--out", str(tmp_path / "r")]) == 0
    assert cli.main(["lipschitz-curve", "--out", str(tmp_path / "l")]) == 0
    assert cli.main(["report", "--out", str(tmp_path)]) == 0
    first = (tmp_path / "summary.json").read_bytes()
    assert cli.main(["report", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "summary.json").read_bytes() == first
    summary = read_json(tmp_path / "summary.json")
    assert set(summary["runs"]) == {"r", "l"}


def test_manifold_summary_has_contraction_flag(tmp_path):
    cfg = write_cfg(tmp_path / "m.json", params={"contraction_pairs": 500, "methods": ["pgd"],
                                                 "experiment": {"n_samples": 20, "T": 30, "bilip_pairs": 500}})
    assert cli.main(["manifold", "--config", cfg, "--out", str(tmp_path / "m")]) == 0
    assert cli.main(["report", "--out", str(tmp_path)]) == 0
    assert read_json(tmp_path / "summary.json")["runs"]["m"]["checks"]["contraction_bound_pass"] is True


def test_lp_pipeline_small(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    gen = write_cfg(tmp_path / "g.json", params={"n_train": 6, "n_test": 3, "n": 10, "m": 4, "nnz": 16})
    assert cli.main(["lp-generate", "--config", gen, "--out", "lp"]) == 0
    tr = write_cfg(tmp_path / "t.json", params={"dataset": "lp/dataset", "emb": 4, "batch_size": 3,
                                                "stages": [{"T": 2, "lr": 0.01, "epochs": 3},
                                                           {"T": 3, "lr": 1e-4, "epochs": 2}]})
    assert cli.main(["lp-train", "--config", tr, "--out", "lp/model", "--threads", "4"]) == 0
    _, log_rows = read_csv(tmp_path / "lp" / "model" / "training_log.csv")
    assert len(log_rows) == 5
    ev = write_cfg(tmp_path / "e.json", params={"dataset": "lp/dataset", "checkpoint": "lp/model/checkpoint"})
    assert cli.main(["lp-eval", "--config", ev, "--out", "lp/eval"]) == 0
    head, rows = read_csv(tmp_path / "lp" / "eval" / "curve.csv")
    assert len(rows) == 8
    assert head == ["t", "L_t_A", "L_t_b", "L_t_c", "L_t_l", "L_t_u", "E_mean", "E_std"]
    assert cli.main(["report", "--out", "lp"]) == 0
