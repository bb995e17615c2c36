"""Batch front end: one JSON config per run, CSV/JSON artifacts, manifests.

Every subcommand accepts --config plus overriding flags, --seed, --out-dir
(env BRWLAB_OUT_DIR as fallback), and --threads.  Thread count affects
timing only; output tables are byte-identical for any worker count.  Exit
codes: 0 ok, 2 config, 3 budget, 4 precondition/domain, 5 io.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, estimators as est, ldp
from .engine import SimSpec, run_bfs, dump_generations
from .errors import (BrwLabError, BudgetExceeded, ConfigError, DomainError,
                     DegenerateBand, EmptyWindow, Extinct, IoError,
                     MomentConditionFailed, OutOfRegime, PreconditionViolated)
from .io_utils import (atomic_writer, format_float, write_csv, write_json,
                       write_manifest)
from .martingales import RegionSpec
from .model import derive_params

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_PRECONDITION = 4
EXIT_IO = 5


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _need(cfg: dict, key: str, kind, what: str):
    if key not in cfg:
        raise ConfigError(f"missing config key {key!r} ({what})")
    value = cfg[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"config key {key!r} must be {what}")
    return value


def _opt(cfg: dict, key: str, default):
    return cfg.get(key, default)


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get("BRWLAB_OUT_DIR") or "."
    return Path(out)


class _Run:
    """Collects outputs and timings, then writes the manifest."""

    def __init__(self, command: str, cfg: dict, args):
        self.command = command
        self.cfg = cfg
        self.seed = int(cfg.get("seed", 0))
        self.out = _out_dir(args)
        self.outputs: list[str] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.time()

    def path(self, name: str) -> Path:
        return self.out / name

    def add(self, path) -> None:
        self.outputs.append(str(path))

    def phase(self, name: str, t_start: float) -> None:
        self.timings[name] = round(time.time() - t_start, 6)

    def finish(self) -> None:
        self.timings["wall_time_s"] = round(time.time() - self._t0, 6)
        manifest = self.path(f"{self.command.replace('-', '_')}_manifest.json")
        write_manifest(manifest, command=self.command, config=self.cfg,
                       seed=self.seed, outputs=self.outputs,
                       timings=self.timings, build=f"brwlab-{__version__}")


def _campaign_from_cfg(cfg: dict, threads: int) -> est.SampleSet:
    beta = _need(cfg, "beta", float, "a positive real")
    horizon = _need(cfg, "n", int, "an integer generation")
    reps = _need(cfg, "replicates", int, "an integer count")
    params = derive_params(beta)
    horizons = tuple(cfg.get("horizons", ()))
    config = est.CampaignConfig(params=params, horizon=horizon,
                                replicates=reps, seed=int(cfg.get("seed", 0)),
                                x=float(cfg.get("x", 0.0)),
                                horizons=horizons)
    return est.run_campaign(config, threads=threads)


def _read_samples_csv(path: str) -> tuple[np.ndarray, np.ndarray, float]:
    """Read the (W, Z, x) columns back from a persisted snapshot CSV."""
    try:
        rows = np.genfromtxt(path, delimiter=",", names=True)
    except OSError as exc:
        raise ConfigError(f"samples file not readable: {path}") from exc
    if rows.dtype.names is None or "W" not in rows.dtype.names:
        raise ConfigError("samples file lacks a W column")
    return (np.atleast_1d(rows["W"]), np.atleast_1d(rows["Z"]),
            float(np.atleast_1d(rows["x"])[0]) if "x" in rows.dtype.names else 0.0)


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    _apply_overrides(cfg, args)
    beta = _need(cfg, "beta", float, "a positive real")
    n = _need(cfg, "n", int, "an integer generation")
    reps = _need(cfg, "replicates", int, "an integer count")
    if reps < 1:
        raise ConfigError("replicates must be >= 1")
    run = _Run("simulate", cfg, args)
    t0 = time.time()
    params = derive_params(beta)
    config = est.CampaignConfig(params=params, horizon=n, replicates=reps,
                                seed=run.seed, x=float(cfg.get("x", 0.0)),
                                horizons=tuple(cfg.get("horizons", ())))
    samples = est.run_campaign(config, threads=args.threads)
    run.phase("simulate", t0)
    t0 = time.time()
    run.outputs += est.persist_samples(samples, run.out, cfg.get("name", "simulate"))
    if cfg.get("raw_dump", False):
        spec = SimSpec(params=params, n=n, x=float(cfg.get("x", 0.0)),
                       seed=run.seed, replicate=0)
        raw = run.path(f"{cfg.get('name', 'simulate')}_raw.csv")
        dump_generations(raw, run_bfs(spec), 0)
        run.add(raw)
    run.phase("persist", t0)
    run.finish()
    return EXIT_OK


def cmd_tail(args) -> int:
    cfg = _load_config(args.config)
    _apply_overrides(cfg, args)
    statistic = _opt(cfg, "statistic", "D")
    model = _opt(cfg, "model", "power-law-with-log")
    run = _Run("tail", cfg, args)
    t0 = time.time()
    if "samples" in cfg:
        W, Z, _ = _read_samples_csv(cfg["samples"])
        beta = _need(cfg, "beta", float, "a positive real")
        params = derive_params(beta)
        values = {"W": W, "Z": Z, "D": -Z, "ratio": Z / W}[statistic]
    else:
        samples = _campaign_from_cfg(cfg, args.threads)
        params = samples.config.params
        values = est.statistic(samples, statistic)
    run.phase("samples", t0)
    t0 = time.time()
    if "y_grid" in cfg:
        y = np.asarray(cfg["y_grid"], dtype=float)
    else:
        gy = _opt(cfg, "y_geom", [2.0, 2000.0, 80])
        y = np.geomspace(float(gy[0]), float(gy[1]), int(gy[2]))
    curve = est.tail_curve(values, y)
    pw = cfg.get("p_window", [1e-4, 1e-2])
    fit = est.fit_exponent(curve, model, gamma=params.gamma,
                           p_window=(float(pw[0]), float(pw[1])),
                           min_hits=int(cfg.get("min_hits", 100)),
                           min_points=int(cfg.get("min_points", 5)))
    run.phase("fit", t0)
    t0 = time.time()
    curve_path = run.path("tail_curve.csv")
    write_csv(curve_path, est.TAIL_HEADER, est.tail_curve_rows(curve))
    run.add(curve_path)
    fit_path = run.path("tail_fit.json")
    write_json(fit_path, {
        "model": fit.model, "slope": fit.slope, "intercept": fit.intercept,
        "stderr": fit.stderr, "n_points": fit.n_points,
        "y_window": list(fit.y_window), "statistic": statistic,
        "gamma": params.gamma,
    })
    run.add(fit_path)
    plot_path = run.path("tail_fit_plotdata.txt")
    with atomic_writer(plot_path) as fh:
        for xv, yv in zip(fit.x_values, fit.y_values):
            fh.write(f"{format_float(xv)} {format_float(yv)} "
                     f"{format_float(fit.intercept + fit.slope * xv)}\n")
    run.add(plot_path)
    run.phase("persist", t0)
    run.finish()
    return EXIT_OK


def cmd_is_lb(args) -> int:
    cfg = _load_config(args.config)
    _apply_overrides(cfg, args)
    beta = _need(cfg, "beta", float, "a positive real")
    n = _need(cfg, "n", int, "the conditioned horizon")
    m = _need(cfg, "m", int, "the free continuation length")
    reps = _need(cfg, "replicates", int, "an integer count")
    run = _Run("is-lb", cfg, args)
    t0 = time.time()
    params = derive_params(beta)
    y_grid = cfg.get("y_grid")
    res = est.is_lower_bound(params, n=n, m=m, replicates=reps, seed=run.seed,
                             y_grid=y_grid, threads=args.threads)
    run.phase("campaign", t0)
    t0 = time.time()
    table = run.path("is_lower_bound.csv")
    write_csv(table, ["y", "freq", "ci_lo", "ci_hi", "log_lower_bound"],
              ([float(res.y[i]), float(res.freq[i]), float(res.ci_lo[i]),
                float(res.ci_hi[i]), float(res.log_lower_bound[i])]
               for i in range(res.y.size)))
    run.add(table)
    summary = run.path("is_lower_bound.json")
    write_json(summary, {
        "n": res.n, "m": res.m, "replicates": res.replicates,
        "log_weight": res.log_weight, "y_reference": res.y_reference,
    })
    run.add(summary)
    run.phase("persist", t0)
    run.finish()
    return EXIT_OK


def cmd_moments(args) -> int:
    cfg = _load_config(args.config)
    _apply_overrides(cfg, args)
    run = _Run("moments", cfg, args)
    t0 = time.time()
    samples = _campaign_from_cfg(cfg, args.threads)
    params = samples.config.params
    run.phase("campaign", t0)
    t0 = time.time()
    x_grid = tuple(cfg.get("x_grid", est.DEFAULT_X_GRID))
    k_max = int(cfg.get("k_max", est.DEFAULT_K_MAX))
    table = est.moment_table(samples, params, x_grid=x_grid, k_max=k_max)
    diag = est.tk_diagnostics(table, params, samples=samples)
    run.phase("table", t0)
    t0 = time.time()
    tpath = run.path("moment_table.csv")
    write_csv(tpath, ["k", "x_star", "moment", "stderr", "t_value"],
              ([r.k, float(r.x_star), float(r.moment), float(r.stderr),
                float(r.t_value)] for r in table.rows))
    run.add(tpath)
    dpath = run.path("tk_diagnostics.json")
    write_json(dpath, {
        "a_constant": diag.a_constant, "c3_min": diag.c3_min,
        "c2_min": diag.c2_min,
        "rows": [{"k": r.k, "t_value": r.t_value, "residual": r.residual,
                  "residual_sigma": r.residual_sigma} for r in diag.rows],
    })
    run.add(dpath)
    run.phase("persist", t0)
    run.finish()
    return EXIT_OK


def cmd_ratio(args) -> int:
    cfg = _load_config(args.config)
    _apply_overrides(cfg, args)
    run = _Run("ratio", cfg, args)
    t0 = time.time()
    samples = _campaign_from_cfg(cfg, args.threads)
    run.phase("campaign", t0)
    t0 = time.time()
    K_grid = cfg.get("K_grid", [0.0, 0.5, 1.0, 2.0])
    rows = est.ratio_exp_moment(samples, K_grid)
    path = run.path("ratio_exp_moment.csv")
    write_csv(path, ["K", "mean", "stderr", "ci_lo", "ci_hi"],
              ([r["K"], r["mean"], r["stderr"], r["ci_lo"], r["ci_hi"]]
               for r in rows))
    run.add(path)
    run.phase("persist", t0)
    run.finish()
    return EXIT_OK


def cmd_scan(args) -> int:
    cfg = _load_config(args.config)
    _apply_overrides(cfg, args)
    beta = _need(cfg, "beta", float, "a positive real")
    event = _need(cfg, "event", str, "'delta' or 'theta'")
    value = _need(cfg, "value", float, "the event parameter")
    n_grid = _need(cfg, "n_grid", list, "a list of generations")
    reps = _need(cfg, "replicates", int, "an integer count")
    run = _Run("scan", cfg, args)
    t0 = time.time()
    params = derive_params(beta)
    table = est.rare_event_scan(params, event, value, n_grid, reps,
                                seed=run.seed, threads=args.threads)
    run.phase("scan", t0)
    t0 = time.time()
    path = run.path("rare_event_scan.csv")
    write_csv(path, ["n", "threshold", "hits", "freq", "ci_lo", "ci_hi",
                     "impossible"],
              ([r.n, float(r.threshold), r.hits, float(r.freq),
                float(r.ci_lo), float(r.ci_hi), int(r.impossible)]
               for r in table.rows))
    run.add(path)
    run.phase("persist", t0)
    run.finish()
    return EXIT_OK


def cmd_ldp_regions(args) -> int:
    cfg = _load_config(args.config)
    _apply_overrides(cfg, args)
    n = _need(cfg, "n", int, "the horizon")
    L = _need(cfg, "L", float, "the level")
    M = _need(cfg, "M", float, "the rate threshold")
    run = _Run("ldp-regions", cfg, args)
    t0 = time.time()
    curve = ldp.region_boundary(RegionSpec(n=n, L=L, M=M,
                                           x=float(cfg.get("x", 0.0))))
    path = run.path("region_boundary.txt")
    with atomic_writer(path) as fh:
        for i in range(curve.depths.size):
            fh.write(f"{format_float(curve.depths[i])} "
                     f"{format_float(curve.s_lower[i])} "
                     f"{format_float(curve.s_upper[i])}\n")
    run.add(path)
    run.phase("boundary", t0)
    run.finish()
    return EXIT_OK


def cmd_ldp_check(args) -> int:
    cfg = _load_config(args.config)
    _apply_overrides(cfg, args)
    checker = _need(cfg, "checker", str, "'inclusion' or 'disjoint'")
    beta = _need(cfg, "beta", float, "a positive real")
    params = derive_params(beta)
    run = _Run("ldp-check", cfg, args)
    density = int(cfg.get("density", 1000))
    path = run.path("ldp_check.json")
    t0 = time.time()
    try:
        if checker == "inclusion":
            result = ldp.check_region_inclusion(
                params, delta_rate=_need(cfg, "delta_rate", float, "growth margin"),
                eps=_need(cfg, "eps", float, "epsilon"),
                delta=_need(cfg, "delta", float, "delta (= 2 sqrt eps)"),
                n=_need(cfg, "n", int, "horizon"),
                k=_need(cfg, "k", int, "level offset"),
                ell=_need(cfg, "ell", int, "shift"), a=_need(cfg, "a", float, "rate"),
                density=density)
        elif checker == "disjoint":
            result = ldp.check_region_disjoint(
                params, theta=_need(cfg, "theta", float, "comparison slope"),
                eps=_need(cfg, "eps", float, "epsilon"),
                delta=_need(cfg, "delta", float, "delta"),
                n=_need(cfg, "n", int, "horizon"),
                k=_need(cfg, "k", int, "level offset"),
                b=_need(cfg, "b", float, "growth rate"), density=density)
        else:
            raise ConfigError(f"unknown checker {checker!r}")
    except PreconditionViolated as exc:
        write_json(path, {"checker": checker, "ok": False,
                          "violated_precondition": exc.constraint,
                          "message": str(exc)})
        run.add(path)
        run.phase("check", t0)
        run.finish()
        raise
    write_json(path, {
        "checker": checker, "ok": result.ok, "margin": result.margin,
        "counterexample": list(result.counterexample) if result.counterexample else None,
        "endpoints": result.endpoints,
    })
    run.add(path)
    run.phase("check", t0)
    run.finish()
    return EXIT_OK


def cmd_igw(args) -> int:
    cfg = _load_config(args.config)
    _apply_overrides(cfg, args)
    dist = _need(cfg, "offspring", list, "[[value, prob], ...]")
    n = _need(cfg, "n", int, "the horizon")
    ell = _need(cfg, "ell", int, "initial population")
    spec = ldp.homogeneous_igw(
        [(int(v), float(p)) for v, p in dist], horizon=n, ell=ell,
        alpha=float(cfg.get("alpha", math.e - 1.0)),
        h=float(cfg.get("h", 1.0)),
        lam=float(cfg.get("lam", cfg.get("lambda", 0.1))))
    run = _Run("igw", cfg, args)
    t0 = time.time()
    cap = int(cfg.get("cap", 100_000))
    dp = ldp.igw_exact_dp(spec, cap=cap)
    report = ldp.igw_bound_check(spec, seed=run.seed)
    run.phase("dp", t0)
    t0 = time.time()
    dpath = run.path("igw_distribution.csv")
    write_csv(dpath, ["value", "prob"],
              ([i, float(pv)] for i, pv in enumerate(dp.pmf)))
    run.add(dpath)
    bpath = run.path("igw_bound.json")
    write_json(bpath, {
        "threshold": report.threshold, "lhs": report.lhs, "rhs": report.rhs,
        "ok": report.ok, "method": report.method,
        "mass_above_cap": dp.mass_above_cap,
        "mean_below_cap": dp.mean_below_cap(),
    })
    run.add(bpath)
    run.phase("persist", t0)
    run.finish()
    return EXIT_OK


def cmd_biggins(args) -> int:
    cfg = _load_config(args.config)
    _apply_overrides(cfg, args)
    if args.a is not None:
        cfg["a"] = args.a
    if args.n is not None:
        cfg["n"] = args.n
    if args.reps is not None:
        cfg["replicates"] = args.reps
    a = _need(cfg, "a", float, "the level slope")
    n = _need(cfg, "n", int, "the horizon")
    reps = _need(cfg, "replicates", int, "an integer count")
    beta = float(cfg.get("beta", 1.0))
    run = _Run("biggins", cfg, args)
    t0 = time.time()
    rate = ldp.biggins_rate(derive_params(beta), a, n=n, replicates=reps,
                            seed=run.seed, threads=args.threads,
                            window=int(cfg.get("window", 8)))
    run.phase("estimate", t0)
    path = run.path("biggins_rate.json")
    write_json(path, {
        "a": rate.a, "n": rate.n, "estimate": rate.estimate,
        "ci_lo": rate.ci_lo, "ci_hi": rate.ci_hi, "limit": rate.limit,
        "window": list(rate.window), "dropped": rate.dropped,
    })
    run.add(path)
    run.finish()
    return EXIT_OK


# ---------------------------------------------------------------------------

def _apply_overrides(cfg: dict, args) -> None:
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)


_COMMANDS = {
    "simulate": cmd_simulate,
    "tail": cmd_tail,
    "is-lb": cmd_is_lb,
    "moments": cmd_moments,
    "ratio": cmd_ratio,
    "scan": cmd_scan,
    "ldp-regions": cmd_ldp_regions,
    "ldp-check": cmd_ldp_check,
    "igw": cmd_igw,
    "biggins": cmd_biggins,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brwlab",
        description="Branching random walk martingale laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="JSON config path")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out-dir", default=None)
        sp.add_argument("--threads", type=int, default=1)
        if name == "biggins":
            sp.add_argument("--a", type=float, default=None)
            sp.add_argument("--n", type=int, default=None)
            sp.add_argument("--reps", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (PreconditionViolated, DomainError, OutOfRegime, DegenerateBand,
            MomentConditionFailed, EmptyWindow, Extinct) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except IoError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BrwLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
