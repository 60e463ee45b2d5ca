# lab_cli.py
"""
Experiment runner for the incidence / wave-packet lab.

    python lab_cli.py check     --config assets/config.json --out reports/run1
    python lab_cli.py sweep     --config assets/config.json --jobs 4
    python lab_cli.py gen       --config assets/config.json --out families/
    python lab_cli.py fourier   --R 64 --seed 3 --out reports/fourier
    python lab_cli.py exponents --n 3
    python lab_cli.py report    reports/run1

Exit codes: 0 all-pass (or mode != assert), 1 assert failure, 2 lab error.
"""
from __future__ import annotations

import argparse
import dataclasses
import itertools
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import pandas as pd

from app_utils import (
    load_config,
    loglog_fit,
    point_seed,
    seed_stream,
    setup_logging,
    write_csv,
    write_json,
    write_run_meta,
)
from errors import ConfigError, LabError
from exponents import CONJECTURE, MEASUREMENT, THEOREM, named_exponents, p_case_split
from families import GENERATORS
from incidence_lab import (
    CSV_COLUMNS,
    InequalityReport,
    check_bush_nd,
    check_furstenberg_conjecture,
    check_hairbrush_3d,
    check_two_ends_furstenberg_2d,
    convex_wolff_deficiency,
    incidence_exponents,
    rich_ball_census,
    six_slice_experiment,
    sums_diffs_sweep,
)
from refinement import excise_at_threshold
from wave_packets import (
    decompose,
    khintchine_kakeya_experiment,
    packet_orthogonality,
    parseval_ratio,
    random_band_limited,
    richardson_check,
    save_field,
)

logger = logging.getLogger(__name__)

MODES = ("assert", "search", "measure")
U64 = 1 << 64


# ======================================================
# EXPERIMENT CONFIG
# ======================================================
@dataclass
class ExperimentConfig:
    name: str
    experiment: str
    generator: str | None = None
    n: int = 2
    k: int = 6
    count: int = 16
    lam: float = 1.0
    eps1: float = 0.5
    eps2: float = 0.25
    C: float = 2.0
    s: float | None = None
    t: float | None = None
    mode: str = "measure"
    seed: int = 0
    slack: float = 0.1
    eps: float = 0.1
    grid: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, params: dict | None = None) -> "ExperimentConfig":
        params = params or {}
        raw = dict(raw)
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"experiment {raw.get('name')!r}: unknown fields {unknown}")
        raw.setdefault("slack", params.get("SLACK_EXPONENT", 0.1))
        try:
            cfg = cls(**raw)
        except TypeError as e:
            raise ConfigError(f"experiment config: {e}") from e
        cfg.validate()
        return cfg

    def validate(self) -> "ExperimentConfig":
        entry = REGISTRY.get(self.experiment)
        if entry is None:
            raise ConfigError(f"unknown experiment {self.experiment!r}; known: {sorted(REGISTRY)}")
        if self.mode not in MODES:
            raise ConfigError(f"mode {self.mode!r} not in {MODES}")
        if entry.family and self.generator not in GENERATORS:
            raise ConfigError(f"{self.name}: generator {self.generator!r} not in {sorted(GENERATORS)}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < U64:
            raise ConfigError(f"{self.name}: seed must be an unsigned 64-bit integer")
        if not isinstance(self.grid, dict) or not all(isinstance(v, list) for v in self.grid.values()):
            raise ConfigError(f"{self.name}: grid must map field names to lists")
        bad = [key for key in self.grid if key not in {f.name for f in dataclasses.fields(self)} | {"lambda"}]
        if bad:
            raise ConfigError(f"{self.name}: grid over unknown fields {bad}")
        if self.mode == "assert" and entry.grade_for(self) != THEOREM:
            raise ConfigError(f"{self.name}: mode=assert needs a theorem-grade checker, "
                              f"{self.experiment} is {entry.grade_for(self)}")
        return self

    def point(self, overrides: dict) -> "ExperimentConfig":
        overrides = {("lam" if key == "lambda" else key): v for key, v in overrides.items()}
        return dataclasses.replace(self, grid={}, **overrides)

    def points(self) -> list:
        """Cartesian grid in sorted-key order; a config without a grid is a single point."""
        keys = sorted(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[key] for key in keys))]

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["lambda"] = out.pop("lam")
        return out


# ======================================================
# REGISTRY
# ======================================================
@dataclass(frozen=True)
class Experiment:
    runner: object
    grade: object
    family: bool = True

    def grade_for(self, cfg: ExperimentConfig) -> str:
        return self.grade(cfg) if callable(self.grade) else self.grade


def build_family(cfg: ExperimentConfig, seed: int):
    kw = {"eps1": cfg.eps1, "eps2": cfg.eps2, "C": cfg.C}
    kw.update(cfg.options.get("generator", {}))
    return GENERATORS[cfg.generator](cfg.n, cfg.k, cfg.count, cfg.lam, seed, **kw)


def _checker(fn):
    def run(cfg, seed, params):
        F = build_family(cfg, seed)
        rep = fn(F, eps=cfg.eps, slack=cfg.slack)
        rep.seed = seed
        return [rep]
    return run


def run_two_ends_2d(cfg, seed, params):
    return _checker(check_two_ends_furstenberg_2d)(cfg, seed, params)


def run_hairbrush(cfg, seed, params):
    return _checker(check_hairbrush_3d)(cfg, seed, params)


def run_bush(cfg, seed, params):
    return _checker(check_bush_nd)(cfg, seed, params)


def run_conjecture(cfg, seed, params):
    return _checker(check_furstenberg_conjecture)(cfg, seed, params)


def run_census(cfg, seed, params):
    F = build_family(cfg, seed)
    reps = []
    for r in cfg.options.get("r", [2, 4, 8]):
        rep = rich_ball_census(F, int(r), cfg.slack)
        rep.seed = seed
        reps.append(rep)
    return reps


def run_excision(cfg, seed, params):
    F = build_family(cfg, seed)
    ex = excise_at_threshold(F, cfg.options.get("rule"), params.get("POLYLOG_C", 0.0))
    return [InequalityReport(
        "excision", "high-multiplicity-excision",
        {"n": F.n, "k": F.k, "lambda": F.meta["lambda"], "m": F.meta["m"],
         "eps1": F.meta["eps1"], "eps2": F.meta["eps2"]},
        float(ex.excision.removed_fraction), float(ex.bound), 0.0, sense="upper", seed=seed,
        extra={"rule": ex.rule, "mu": ex.mu, "two_ends": ex.two_ends,
               "max_kept": ex.excision.max_kept, "threshold": ex.excision.threshold})]


def run_six_slice(cfg, seed, params):
    F = build_family(cfg, seed)
    rep = six_slice_experiment(F, eps=cfg.options.get("eps", 0.0), slack=cfg.slack,
                               max_lines=cfg.options.get("max_lines", 16))
    rep.seed = seed
    return [rep]


def run_wolff(cfg, seed, params):
    F = build_family(cfg, seed)
    t = cfg.t if cfg.t is not None else 1.0
    w = convex_wolff_deficiency(F.lines, F.k, t)
    return [InequalityReport(
        "convex_wolff", "convex-wolff-axiom", {"n": F.n, "k": F.k, "lambda": cfg.lam, "t": t},
        w.C_lower, float(cfg.options.get("C", 1.0)), 0.0, sense="upper", grade=MEASUREMENT, seed=seed,
        extra={"kind": w.kind, "witness": w.params, "count": w.count, "volume": w.volume})]


def run_lattice(cfg, seed, params):
    fit = incidence_exponents(cfg.n, tuple(cfg.options.get("Ns", (4, 8, 16))), cfg.options.get("k"),
                              tuple(cfg.options.get("k_scales", (1, 2))))
    tol = float(cfg.options.get("tolerance", 0.15))
    dist = max(abs(fit["alpha"] - fit["target"][0]), abs(fit["beta"] - fit["target"][1]))
    return [InequalityReport(
        "lattice_exponents", "lattice-incidence-numerology", {"n": cfg.n}, dist, tol, 0.0,
        sense="upper", grade=MEASUREMENT, seed=seed,
        extra={"alpha": fit["alpha"], "beta": fit["beta"], "target": list(fit["target"]),
               "table": fit["table"].astype({"k": str}).to_dict(orient="records")})]


def run_sums_diffs(cfg, seed, params):
    sizes = cfg.options.get("sizes", [16, 32, 64, 128, 256])
    table = sums_diffs_sweep(sizes, cfg.k, seed)
    growth = (table["ratio"] / table["ratio"].shift(1)).iloc[1:]
    worst = float(growth.max()) if len(growth) else 1.0
    return [InequalityReport(
        "sums_diffs_growth", "sums-and-differences", {"k": cfg.k, "sizes": list(sizes)}, worst, 2.0, 0.0,
        sense="upper", grade=MEASUREMENT, seed=seed, extra={"table": table.to_dict(orient="records")})]


def run_wave_packets(cfg, seed, params):
    R = int(cfg.options.get("R", 64))
    f = random_band_limited(R, seed)
    pset = decompose(f, R, params["TAU_TAIL"], params["TAU_REC"], params["KAPPA_MAX"],
                     cfg.options.get("max_checked", 16), strict=False)
    X = seed_stream(seed, 1).uniform(-R, R, size=(8, 2))
    rich = richardson_check(f, X, R)
    ortho = packet_orthogonality(pset)
    base = {"R": R, "packets": len(pset)}
    reps = [
        InequalityReport("wp_reconstruction", "wave-packet-reconstruction", base,
                         pset.checks["reconstruction"], params["TAU_REC"], sense="upper", seed=seed),
        InequalityReport("wp_tail", "wave-packet-tail", base, pset.checks["tail"], params["TAU_TAIL"],
                         sense="upper", seed=seed, extra={"checked": pset.checks["checked"]}),
        InequalityReport("wp_kappa", "wave-packet-lp-l2", base, pset.checks["kappa"], params["KAPPA_MAX"],
                         sense="upper", seed=seed),
        InequalityReport("wp_quadrature", "extension-quadrature", base, rich["relative_change"],
                         params["TAU_QUAD"], sense="upper", seed=seed),
        InequalityReport("wp_orthogonality", "wave-packet-orthogonality", base, ortho["kappa3"], 2.0,
                         sense="upper", grade=MEASUREMENT, seed=seed),
        InequalityReport("wp_parseval", "extension-parseval", base, parseval_ratio(f, R), 8 * math.pi,
                         sense="upper", grade=MEASUREMENT, seed=seed),
    ]
    return reps


def run_kakeya(cfg, seed, params):
    R = int(cfg.options.get("R", 64))
    p0 = float(cfg.options.get("p0", 22 / 7))
    out = khintchine_kakeya_experiment(R, p0, int(cfg.options.get("trials", 8)), seed,
                                       cfg.options.get("family", "full"), cfg.slack)
    extra = {key: v for key, v in out.items() if key != "trials"}
    return [InequalityReport("khintchine_kakeya", "khintchine-kakeya", {"R": R, "p0": p0},
                             out["combinatorial"], out["combinatorial_bound"], 0.0, sense="upper",
                             grade=MEASUREMENT, seed=seed, extra=extra)]


REGISTRY = {
    "two_ends_furstenberg_2d": Experiment(run_two_ends_2d, THEOREM),
    "hairbrush_3d": Experiment(run_hairbrush, THEOREM),
    "bush_nd": Experiment(run_bush, THEOREM),
    "furstenberg_conjecture": Experiment(run_conjecture, lambda cfg: THEOREM if cfg.n == 2 else CONJECTURE),
    "rich_ball_census": Experiment(run_census, MEASUREMENT),
    "excision": Experiment(run_excision, THEOREM),
    "six_slice": Experiment(run_six_slice, MEASUREMENT),
    "convex_wolff": Experiment(run_wolff, MEASUREMENT),
    "lattice": Experiment(run_lattice, MEASUREMENT, family=False),
    "sums_diffs": Experiment(run_sums_diffs, MEASUREMENT, family=False),
    "wave_packets": Experiment(run_wave_packets, THEOREM, family=False),
    "khintchine_kakeya": Experiment(run_kakeya, MEASUREMENT, family=False),
}


# ======================================================
# RUN / SWEEP
# ======================================================
def _run_point(task):
    """One sweep point; top level so worker processes can run it."""
    cfg_json, index, overrides, params = task
    base = ExperimentConfig.from_dict(cfg_json, params)
    cfg = base.point(overrides)
    seed = point_seed(base.seed, index)
    reps = REGISTRY[cfg.experiment].runner(cfg, seed, params)
    rows = []
    for rep in reps:
        payload = rep.to_json()
        payload.update(experiment=cfg.name, point=index, overrides=overrides)
        rows.append((rep.to_row(), payload))
    logger.info("%s point %d: %s", cfg.name, index, [r.verdict for r in reps])
    return index, rows


def run(config: dict, expand_grid: bool = False, jobs: int = 1, mode: str | None = None,
        seed: int | None = None) -> dict:
    """
    Run every experiment of a loaded config.  Point i of an experiment with
    master seed s uses seed ``point_seed(s, i)``; rows are assembled in
    (experiment, point) order whatever the execution order.
    """
    params = config["params"]
    specs = []
    for raw in config["experiments"]:
        raw = dict(raw)
        if mode is not None:
            raw["mode"] = mode
        if seed is not None:
            raw["seed"] = seed
        specs.append(ExperimentConfig.from_dict(raw, params))
    tasks = []
    for e, cfg in enumerate(specs):
        points = cfg.points() if expand_grid and cfg.grid else [{}]
        tasks.extend((e, (cfg.to_json(), i, pt, params)) for i, pt in enumerate(points))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_point, [t for _, t in tasks]))
    else:
        results = [_run_point(t) for _, t in tasks]
    ordered = sorted(zip((e for e, _ in tasks), results), key=lambda er: (er[0], er[1][0]))
    csv_rows, json_rows = [], []
    for _, (_, rows) in ordered:
        for row, payload in rows:
            csv_rows.append(row)
            json_rows.append(payload)
    modes = {c.name: c.mode for c in specs}
    failed = [p for p in json_rows if modes[p["experiment"]] == "assert" and p["verdict"] == "fail"]
    fits = sweep_fits(specs, json_rows) if expand_grid else pd.DataFrame()
    return {"rows": csv_rows, "json": json_rows, "failed": failed, "fits": fits,
            "experiments": [c.to_json() for c in specs]}


def sweep_fits(specs, json_rows) -> pd.DataFrame:
    """Log-log slope of ratio against each single swept variable (k enters as δ = 2^-k)."""
    fits = []
    for cfg in specs:
        if len(cfg.grid) != 1:
            continue
        (var,) = cfg.grid
        rows = [r for r in json_rows if r["experiment"] == cfg.name]
        for name in sorted({r["name"] for r in rows}):
            sel = [r for r in rows if r["name"] == name]
            x = [2.0 ** -r["overrides"][var] if var == "k" else r["overrides"][var] for r in sel]
            y = [r["ratio"] for r in sel]
            fit = loglog_fit(x, y)
            fits.append({"experiment": cfg.name, "name": name, "variable": "delta" if var == "k" else var, **fit})
    return pd.DataFrame(fits, columns=["experiment", "name", "variable", "slope", "intercept", "residual", "points"])


def write_outputs(result: dict, out_dir: str, stem: str = "report") -> list:
    paths = [write_csv(pd.DataFrame(result["rows"], columns=CSV_COLUMNS), os.path.join(out_dir, f"{stem}.csv"),
                       CSV_COLUMNS)]
    paths.append(write_json({"experiments": result["experiments"], "rows": result["json"]},
                            os.path.join(out_dir, f"{stem}.json")))
    if len(result["fits"]):
        paths.append(write_csv(result["fits"], os.path.join(out_dir, "fits.csv")))
    return paths


# ======================================================
# SUBCOMMANDS
# ======================================================
def cmd_check(args, config) -> int:
    return _run_and_write(args, config, expand_grid=False)


def cmd_sweep(args, config) -> int:
    return _run_and_write(args, config, expand_grid=True)


def _run_and_write(args, config, expand_grid: bool) -> int:
    t0 = time.perf_counter()
    result = run(config, expand_grid, args.jobs, args.mode, args.seed)
    write_outputs(result, args.out)
    write_run_meta(args.out, config["params"]["TIMEZONE"], time.perf_counter() - t0,
                   command=args.command, jobs=args.jobs, rows=len(result["rows"]))
    for p in result["failed"]:
        logger.error("assert failed: %s (%s) ratio=%.4g", p["name"], p["experiment"], p["ratio"])
    print(f"{len(result['rows'])} rows, {len(result['failed'])} assert failures -> {args.out}")
    return 1 if result["failed"] else 0


def cmd_gen(args, config) -> int:
    written = 0
    for raw in config["experiments"]:
        cfg = ExperimentConfig.from_dict(raw, config["params"])
        if not REGISTRY[cfg.experiment].family:
            continue
        seed = point_seed(args.seed if args.seed is not None else cfg.seed, 0)
        F = build_family(cfg, seed)
        write_json(F.to_json(), os.path.join(args.out, f"{cfg.name}.json"))
        written += 1
    print(f"{written} families -> {args.out}")
    return 0


def cmd_fourier(args, config) -> int:
    params = config["params"]
    t0 = time.perf_counter()
    seed = args.seed if args.seed is not None else 0
    f = random_band_limited(args.R, seed)
    pset = decompose(f, args.R, params["TAU_TAIL"], params["TAU_REC"], params["KAPPA_MAX"], strict=False)
    geo = pset.geometry
    save_field(os.path.join(args.out, "field.bin"), f.values, f.n, args.R, f.h)
    masses = pset.masses()
    stats = pd.DataFrame({"j": [p.j for p in pset.packets], "l": [p.l for p in pset.packets],
                          "centre": [geo.centre(p.j) for p in pset.packets],
                          "v": [geo.D * p.l for p in pset.packets], "mass": masses})
    write_csv(stats, os.path.join(args.out, "packets.csv"))
    cfg = ExperimentConfig("fourier", "wave_packets", mode=args.mode or "measure", seed=seed,
                           options={"R": args.R}).validate()
    reps = run_wave_packets(cfg, seed, params)
    result = {"rows": [r.to_row() for r in reps], "json": [dict(r.to_json(), experiment="fourier") for r in reps],
              "fits": pd.DataFrame(), "experiments": [cfg.to_json()]}
    write_outputs(result, args.out)
    write_run_meta(args.out, params["TIMEZONE"], time.perf_counter() - t0, command="fourier", R=args.R)
    failed = [r for r in reps if cfg.mode == "assert" and r.verdict == "fail"]
    print(f"{len(pset)} packets, checks {pset.checks.get('failures') or 'ok'} -> {args.out}")
    return 1 if failed else 0


def cmd_exponents(args, config) -> int:
    table = named_exponents(args.n, args.s, args.t, args.lam_exp)
    print(table.to_string(index=False))
    if args.n >= 3:
        for case in p_case_split(args.n):
            print(f"{case['case']}: weight={case['weight']} p={case['p']}")
    if args.out:
        write_csv(table.astype({"value": str}), os.path.join(args.out, "exponents.csv"))
    return 0


def cmd_report(args, config) -> int:
    from report_utils import generate_summary_pdf

    path = generate_summary_pdf(args.dir, config["params"]["TIMEZONE"])
    if path is None:
        raise ConfigError(f"no report CSV in {args.dir}")
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Discretized incidence and wave-packet lab")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="assets/config.json")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None)
    common.add_argument("--mode", choices=MODES, default=None)
    common.add_argument("--jobs", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="run every configured experiment once")
    sub.add_parser("sweep", parents=[common], help="expand parameter grids and fit exponents")
    sub.add_parser("gen", parents=[common], help="write the configured families as JSON")
    fo = sub.add_parser("fourier", parents=[common], help="wave-packet decomposition suite")
    fo.add_argument("--R", type=int, default=64)
    ex = sub.add_parser("exponents", parents=[common], help="print the exponent table")
    ex.add_argument("--n", type=int, default=3)
    ex.add_argument("--s", type=float, default=None)
    ex.add_argument("--t", type=float, default=None)
    ex.add_argument("--lam-exp", type=float, default=0.0)
    rp = sub.add_parser("report", parents=[common], help="render summary.pdf for a report directory")
    rp.add_argument("dir")
    return parser


COMMANDS = {"check": cmd_check, "sweep": cmd_sweep, "gen": cmd_gen, "fourier": cmd_fourier,
            "exponents": cmd_exponents, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.out is None:
            args.out = config["params"]["REPORT_DIR"]
        setup_logging(log_file=os.path.join(args.out, "lab.log") if args.command != "exponents" else None)
        if args.seed is not None and not 0 <= args.seed < U64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        return COMMANDS[args.command](args, config)
    except LabError as e:
        logger.error("%s: %s", type(e).__name__, e)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
