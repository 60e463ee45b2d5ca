import json
import os

import pandas as pd
import pytest

import lab_cli
from app_utils import point_seed
from errors import ConfigError
from incidence_lab import CSV_COLUMNS
from lab_cli import ExperimentConfig, main, run

SUMS = {"name": "sums", "experiment": "sums_diffs", "k": 5, "mode": "measure", "seed": 7,
        "options": {"sizes": [16, 32, 64]}}
PLANAR = {"name": "planar", "experiment": "two_ends_furstenberg_2d", "generator": "random_two_ends",
          "n": 2, "k": 5, "count": 8, "lambda": 0.25, "eps1": 0.5, "eps2": 0.2, "mode": "measure", "seed": 3}


def write_config(tmp_path, experiments, **params):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"schema_version": 1, "params": params, "experiments": experiments}))
    return str(path)


def read_bytes(folder, name):
    with open(os.path.join(folder, name), "rb") as f:
        return f.read()


# ---- experiment config ----
def test_lambda_alias_and_defaults():
    cfg = ExperimentConfig.from_dict(PLANAR, {"SLACK_EXPONENT": 0.2})
    assert cfg.lam == 0.25
    assert cfg.slack == 0.2
    assert cfg.to_json()["lambda"] == 0.25


def test_unknown_field_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(PLANAR, colour="red"))


def test_unknown_experiment_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(PLANAR, experiment="nope"))


def test_missing_generator_rejected():
    raw = {key: v for key, v in PLANAR.items() if key != "generator"}
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)


def test_assert_mode_needs_theorem_grade():
    raw = dict(PLANAR, experiment="furstenberg_conjecture", n=3, mode="assert")
    with pytest.raises(ConfigError, match="theorem-grade"):
        ExperimentConfig.from_dict(raw)
    # the planar case of the same checker is a theorem
    assert ExperimentConfig.from_dict(dict(raw, n=2)).mode == "assert"
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(SUMS, mode="assert"))


def test_seed_range():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(SUMS, seed=-1))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(SUMS, seed=1 << 64))


def test_grid_points_sorted_product():
    cfg = ExperimentConfig.from_dict(dict(PLANAR, grid={"lambda": [0.25, 0.5], "k": [4, 5]}))
    assert cfg.points() == [
        {"k": 4, "lambda": 0.25}, {"k": 4, "lambda": 0.5},
        {"k": 5, "lambda": 0.25}, {"k": 5, "lambda": 0.5},
    ]
    pt = cfg.point({"lambda": 0.5, "k": 4})
    assert (pt.lam, pt.k, pt.grid) == (0.5, 4, {})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(PLANAR, grid={"colour": [1]}))


def test_point_seeds_distinct():
    seeds = {point_seed(7, i) for i in range(64)}
    assert len(seeds) == 64
    assert point_seed(7, 3) == point_seed(7, 3)


# ---- run ----
def test_empty_config_runs_clean():
    result = run({"params": {}, "experiments": []}, expand_grid=True)
    assert result["rows"] == [] and result["failed"] == []


def test_run_rows_follow_config_order():
    result = run({"params": {"SLACK_EXPONENT": 0.1}, "experiments": [SUMS, PLANAR]})
    names = [p["experiment"] for p in result["json"]]
    assert names == ["sums", "planar"]
    assert set(result["rows"][0]) == set(CSV_COLUMNS)


def test_sweep_is_independent_of_jobs():
    config = {"params": {"SLACK_EXPONENT": 0.1}, "experiments": [dict(SUMS, grid={"k": [4, 5, 6]})]}
    serial = run(config, expand_grid=True, jobs=1)
    pooled = run(config, expand_grid=True, jobs=2)
    assert serial["json"] == pooled["json"]
    assert [p["point"] for p in serial["json"]] == [0, 1, 2]
    fits = serial["fits"]
    assert list(fits["variable"]) == ["delta"]
    assert int(fits["points"].iloc[0]) == 3


def test_assert_failures_collected(monkeypatch):
    from incidence_lab import InequalityReport

    def failing(cfg, seed, params):
        return [InequalityReport("forced", "forced", {"n": 2}, 0.0, 1.0, 0.0, seed=seed)]

    monkeypatch.setitem(lab_cli.REGISTRY, "two_ends_furstenberg_2d",
                        lab_cli.Experiment(failing, lab_cli.THEOREM))
    result = run({"params": {}, "experiments": [dict(PLANAR, mode="assert")]})
    assert len(result["failed"]) == 1
    # the same failure under measure mode is only reported
    result = run({"params": {}, "experiments": [PLANAR]})
    assert result["failed"] == []


# ---- main ----
def test_check_output_is_byte_identical(tmp_path):
    config = write_config(tmp_path, [SUMS, PLANAR])
    outs = [str(tmp_path / "a"), str(tmp_path / "b")]
    for out in outs:
        assert main(["check", "--config", config, "--out", out]) == 0
    for name in ("report.csv", "report.json"):
        assert read_bytes(outs[0], name) == read_bytes(outs[1], name)
    meta = json.loads(read_bytes(outs[0], "run_meta.json"))
    assert meta["timezone"] == "UTC" and meta["rows"] == 2
    assert os.path.exists(os.path.join(outs[0], "lab.log"))
    df = pd.read_csv(os.path.join(outs[0], "report.csv"))
    assert list(df.columns) == CSV_COLUMNS


def test_seed_override_is_reproducible(tmp_path):
    config = write_config(tmp_path, [PLANAR])
    main(["check", "--config", config, "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["check", "--config", config, "--out", str(tmp_path / "b"), "--seed", "1"])
    a = json.loads(read_bytes(str(tmp_path / "a"), "report.json"))
    b = json.loads(read_bytes(str(tmp_path / "b"), "report.json"))
    assert a == b
    assert a["experiments"][0]["seed"] == 1


def test_empty_sweep_exits_zero(tmp_path):
    config = write_config(tmp_path, [])
    out = str(tmp_path / "out")
    assert main(["sweep", "--config", config, "--out", out]) == 0
    df = pd.read_csv(os.path.join(out, "report.csv"))
    assert df.empty and list(df.columns) == CSV_COLUMNS


def test_sweep_writes_fits(tmp_path):
    config = write_config(tmp_path, [dict(SUMS, grid={"k": [4, 5]})])
    out = str(tmp_path / "out")
    assert main(["sweep", "--config", config, "--out", out]) == 0
    fits = pd.read_csv(os.path.join(out, "fits.csv"))
    assert list(fits["name"]) == ["sums_diffs_growth"]


def test_lab_errors_exit_two(tmp_path, capsys):
    config = write_config(tmp_path, [dict(SUMS, experiment="nope")])
    assert main(["check", "--config", config, "--out", str(tmp_path / "out")]) == 2
    assert "ConfigError" in capsys.readouterr().err

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["check", "--config", str(bad), "--out", str(tmp_path / "out")]) == 2

    conj = write_config(tmp_path, [dict(PLANAR, experiment="furstenberg_conjecture", n=3, mode="assert")])
    assert main(["check", "--config", conj, "--out", str(tmp_path / "out")]) == 2


def test_cli_mode_override_to_assert_rejected_for_measurements(tmp_path):
    config = write_config(tmp_path, [SUMS])
    assert main(["check", "--config", config, "--out", str(tmp_path / "out"), "--mode", "assert"]) == 2


def test_gen_writes_families(tmp_path):
    config = write_config(tmp_path, [PLANAR, SUMS])
    out = str(tmp_path / "families")
    assert main(["gen", "--config", config, "--out", out]) == 0
    assert sorted(os.listdir(out)) == ["lab.log", "planar.json"]
    with open(os.path.join(out, "planar.json")) as f:
        payload = json.load(f)
    assert len(payload["lines"]) == 8


def test_exponents_command(tmp_path, capsys):
    config = write_config(tmp_path, [])
    out = str(tmp_path / "exp")
    assert main(["exponents", "--config", config, "--n", "3", "--out", out]) == 0
    printed = capsys.readouterr().out
    assert "n3" in printed
    assert os.path.exists(os.path.join(out, "exponents.csv"))


def test_report_command(tmp_path):
    config = write_config(tmp_path, [SUMS])
    out = str(tmp_path / "run")
    assert main(["check", "--config", config, "--out", out]) == 0
    assert main(["report", out, "--config", config, "--out", out]) == 0
    assert os.path.getsize(os.path.join(out, "summary.pdf")) > 0
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["report", str(empty), "--config", config, "--out", str(tmp_path / "x")]) == 2
