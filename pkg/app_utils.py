# app_utils.py
import copy
import json
import logging
import os
import sys
from datetime import datetime
from fractions import Fraction

import numpy as np
import pandas as pd
import pytz

from errors import ConfigError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LOG_ENV = "FLAB_LOG"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

DEFAULT_PARAMS = {
    "SLACK_EXPONENT": 0.1,
    "POLYLOG_C": 0.0,
    "TAU_TAIL": 1e-3,
    "TAU_REC": 1e-3,
    "TAU_QUAD": 1e-6,
    "KAPPA_MAX": 10.0,
    "TIMEZONE": "UTC",
    "REPORT_DIR": "reports",
}

DEFAULT_CONFIG = {"schema_version": SCHEMA_VERSION, "params": DEFAULT_PARAMS, "experiments": []}


# ---- CONFIG ----
def load_config(path="assets/config.json"):
    try:
        with open(path) as f:
            cfg = json.load(f)
    except FileNotFoundError:
        logger.warning("config %s not found, using defaults", path)
        cfg = copy.deepcopy(DEFAULT_CONFIG)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON ({e})") from e
    return validate_config(cfg)


def validate_config(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    params = dict(DEFAULT_PARAMS)
    extra = cfg.get("params", {})
    if not isinstance(extra, dict):
        raise ConfigError("params must be an object")
    bad = [key for key in extra if key != key.upper()]
    if bad:
        raise ConfigError(f"params keys must be UPPER_CASE: {bad}")
    params.update(extra)
    if params["TIMEZONE"] not in pytz.all_timezones_set:
        raise ConfigError(f"unknown TIMEZONE {params['TIMEZONE']!r}")
    experiments = cfg.get("experiments", [])
    if not isinstance(experiments, list) or not all(isinstance(e, dict) for e in experiments):
        raise ConfigError("experiments must be a list of objects")
    return {"schema_version": SCHEMA_VERSION, "params": params, "experiments": experiments}


# ---- LOGGING ----
def setup_logging(level=None, log_file=None):
    level = level or os.environ.get(LOG_ENV, "WARNING")
    numeric = logging.getLevelName(str(level).upper())
    if not isinstance(numeric, int):
        raise ConfigError(f"{LOG_ENV}={level!r} is not a logging level")
    handlers = [logging.StreamHandler(sys.stdout)]
    if log_file:
        os.makedirs(os.path.dirname(log_file) or ".", exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=numeric, format=LOG_FORMAT, handlers=handlers, force=True)


# ---- SEEDS ----
def seed_stream(master, index):
    """Generator of point ``index`` of a run seeded with ``master``."""
    return np.random.default_rng([int(master), int(index)])


def point_seed(master, index):
    """Integer seed of sweep point ``index``; independent of execution order."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1, np.uint64)[0])


# ---- REPORT IO ----
def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, pd.DataFrame):
        return obj.to_dict(orient="records")
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def write_json(obj, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_jsonable)
        f.write("\n")
    return path


def write_csv(df, path, columns=None):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    if columns is not None:
        df = df.reindex(columns=columns)
    df.to_csv(path, index=False, lineterminator="\n")
    return path


def write_run_meta(out_dir, tz_name, wall_time, **extra):
    """Timestamps live here only, so the CSV/JSON reports stay byte-identical across reruns."""
    now = datetime.now(pytz.timezone(tz_name))
    meta = {"timestamp": now.isoformat(), "timezone": tz_name, "wall_time_s": round(wall_time, 3)}
    meta.update(extra)
    return write_json(meta, os.path.join(out_dir, "run_meta.json"))


def load_latest_csv(folder="reports", prefix="report"):
    if not os.path.isdir(folder):
        return None
    files = sorted(
        [f for f in os.listdir(folder) if f.startswith(prefix) and f.endswith(".csv")],
        key=lambda f: (os.path.getmtime(os.path.join(folder, f)), f),
        reverse=True
    )
    if not files:
        return None
    return pd.read_csv(os.path.join(folder, files[0]))


# ---- FITS ----
def loglog_fit(x, y):
    """Least-squares line through (log x, log y); positive pairs only."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return {"slope": float("nan"), "intercept": float("nan"), "residual": float("nan"), "points": int(keep.sum())}
    X = np.column_stack([np.ones(keep.sum()), np.log(x[keep])])
    coef, *_ = np.linalg.lstsq(X, np.log(y[keep]), rcond=None)
    resid = float(np.sqrt(np.mean((X @ coef - np.log(y[keep])) ** 2)))
    return {"slope": float(coef[1]), "intercept": float(coef[0]), "residual": resid, "points": int(keep.sum())}
