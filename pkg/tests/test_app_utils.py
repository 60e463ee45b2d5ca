import json
import logging
import math
import os
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest

from app_utils import (
    DEFAULT_PARAMS,
    load_config,
    load_latest_csv,
    loglog_fit,
    point_seed,
    seed_stream,
    setup_logging,
    validate_config,
    write_csv,
    write_json,
    write_run_meta,
)
from errors import ConfigError


# ---- config ----
def test_missing_config_falls_back_to_defaults(tmp_path):
    cfg = load_config(str(tmp_path / "absent.json"))
    assert cfg["params"] == DEFAULT_PARAMS
    assert cfg["experiments"] == []


def test_params_merge_over_defaults(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"schema_version": 1, "params": {"TAU_REC": 0.01, "TIMEZONE": "Asia/Kolkata"}}))
    cfg = load_config(str(path))
    assert cfg["params"]["TAU_REC"] == 0.01
    assert cfg["params"]["TIMEZONE"] == "Asia/Kolkata"
    assert cfg["params"]["KAPPA_MAX"] == DEFAULT_PARAMS["KAPPA_MAX"]


def test_shipped_config_loads():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    cfg = load_config(os.path.join(root, "assets", "config.json"))
    assert len(cfg["experiments"]) > 0


def test_malformed_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{\"schema_version\": 1,")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(str(path))


@pytest.mark.parametrize("cfg", [
    [],
    {"schema_version": 2},
    {"schema_version": 1, "params": []},
    {"schema_version": 1, "params": {"tau_rec": 1.0}},
    {"schema_version": 1, "params": {"TIMEZONE": "Mars/Olympus"}},
    {"schema_version": 1, "experiments": {"a": 1}},
    {"schema_version": 1, "experiments": [1]},
])
def test_validate_rejects(cfg):
    with pytest.raises(ConfigError):
        validate_config(cfg)


# ---- logging ----
def test_setup_logging_writes_file(tmp_path):
    log_file = tmp_path / "logs" / "lab.log"
    setup_logging("INFO", str(log_file))
    logging.getLogger("lab.test").info("hello")
    for h in logging.getLogger().handlers:
        h.flush()
    assert "hello" in log_file.read_text()


def test_setup_logging_env(monkeypatch):
    monkeypatch.setenv("FLAB_LOG", "debug")
    setup_logging()
    assert logging.getLogger().level == logging.DEBUG


def test_setup_logging_bad_level():
    with pytest.raises(ConfigError):
        setup_logging("LOUD")


# ---- seeds ----
def test_seed_stream_reproducible():
    a = seed_stream(5, 2).random(4)
    b = seed_stream(5, 2).random(4)
    c = seed_stream(5, 3).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_point_seed_is_u64():
    s = point_seed((1 << 64) - 1, 10)
    assert isinstance(s, int) and 0 <= s < 1 << 64


# ---- report io ----
def test_write_json_sorted_and_numpy(tmp_path):
    path = write_json({"b": np.int64(3), "a": np.arange(2), "f": Fraction(1, 3), "s": {2, 1}},
                      str(tmp_path / "x" / "out.json"))
    text = open(path).read()
    assert text.endswith("\n")
    assert list(json.loads(text)) == ["a", "b", "f", "s"]
    assert json.loads(text) == {"a": [0, 1], "b": 3, "f": "1/3", "s": [1, 2]}


def test_write_json_rejects_unknown(tmp_path):
    with pytest.raises(TypeError):
        write_json({"x": object()}, str(tmp_path / "out.json"))


def test_write_csv_column_order(tmp_path):
    path = write_csv(pd.DataFrame({"b": [1], "a": [2]}), str(tmp_path / "r.csv"), ["a", "b", "c"])
    assert open(path).read().splitlines() == ["a,b,c", "2,1,"]


def test_run_meta(tmp_path):
    path = write_run_meta(str(tmp_path), "Asia/Kolkata", 1.23456, command="check")
    meta = json.loads(open(path).read())
    assert meta["timestamp"].endswith("+05:30")
    assert meta["wall_time_s"] == 1.235
    assert meta["command"] == "check"


def test_load_latest_csv(tmp_path):
    assert load_latest_csv(str(tmp_path / "missing")) is None
    assert load_latest_csv(str(tmp_path)) is None
    write_csv(pd.DataFrame({"v": [1]}), str(tmp_path / "report_a.csv"))
    write_csv(pd.DataFrame({"v": [2]}), str(tmp_path / "report_b.csv"))
    write_csv(pd.DataFrame({"v": [3]}), str(tmp_path / "fits.csv"))
    os.utime(tmp_path / "report_a.csv", (1_000_000, 1_000_000))
    os.utime(tmp_path / "report_b.csv", (2_000_000, 2_000_000))
    os.utime(tmp_path / "fits.csv", (3_000_000, 3_000_000))
    assert int(load_latest_csv(str(tmp_path))["v"].iloc[0]) == 2
    assert int(load_latest_csv(str(tmp_path), prefix="fits")["v"].iloc[0]) == 3


# ---- fits ----
def test_loglog_fit_power_law():
    x = np.array([1 / 8, 1 / 16, 1 / 32, 1 / 64])
    fit = loglog_fit(x, 3 * x ** -1.5)
    assert fit["slope"] == pytest.approx(-1.5)
    assert fit["intercept"] == pytest.approx(math.log(3))
    assert fit["residual"] < 1e-9
    assert fit["points"] == 4


def test_loglog_fit_drops_nonpositive():
    fit = loglog_fit([1, 2, 4, 0], [1, 4, 16, 5])
    assert fit["points"] == 3
    assert fit["slope"] == pytest.approx(2.0)
    assert math.isnan(loglog_fit([1, 0], [1, 1])["slope"])
