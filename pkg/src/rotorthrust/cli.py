"""Command-line front end.

    rotorthrust calibrate --bench bench.csv [--preset 250mm] [--out DIR]
    rotorthrust estimate  --telemetry log.csv [--preset 250mm] [--out DIR]
    rotorthrust simulate  [--method thrust-control] [--seed N] [--out DIR]
    rotorthrust batch     [--config exp.ini] [--trials N] [--out DIR]
    rotorthrust stats     [--out DIR]
    rotorthrust plotdata  [--out DIR]

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .aero import AeroError
from .bench import (
    TABLES,
    BenchError,
    TrialSpec,
    calibrate_from_bench,
    run_experiment_batch,
    run_trial,
    table_stats,
    trial_matrix,
)
from .config import METHODS, ConfigError, ExperimentConfig, load_config, with_overrides
from .estimator import RotorEstimator, with_current_rate
from .io import MalformedCsv, read_telemetry, write_csv, write_trace

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class NumericalFailure(RuntimeError):
    pass


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return with_overrides(cfg, preset=args.preset, seed=args.seed, trials=getattr(args, "trials", None),
                          rate_hz=args.rate_hz)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_convergence(fraction: float, limit: float, what: str):
    if fraction > limit:
        raise NumericalFailure(f"{what}: {fraction:.1%} of steps did not converge "
                               f"(limit {limit:.1%})")


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    pf = cfg.platform()
    plant = pf.make_plant(cfg.kq_mode)
    omega_max = args.omega_max or plant.omega_max()
    cal = calibrate_from_bench(args.bench, pf.geometry, cfg.coefficients_obj(), omega_max,
                               cfg.estimator_config())
    coef = cal.coefficients
    rows = [(k, getattr(coef, k)) for k in ("c0", "c1", "c2", "c3", "c4", "d0", "d1", "thrust_scale")]
    rows.append(("max_thrust_N", cal.max_thrust_N))
    rows.append(("omega_max", float(omega_max)))
    write_csv(_out(args) / "calibration.csv", ("key", "value"), rows)
    print(f"thrust_scale = {coef.thrust_scale:.6g}")
    print(f"max_thrust_N = {cal.max_thrust_N:.6g}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _config(args)
    pf = cfg.platform()
    samples = read_telemetry(args.telemetry)
    if cfg.kq_mode == "rate":
        samples = with_current_rate(samples)
    est = RotorEstimator(pf.geometry, cfg.coefficients_obj(), cfg.estimator_config())
    results = [est.step(s) for s in samples]
    write_csv(_out(args) / "estimates.csv",
              ("timestamp", "thrust", "C_T", "lambda_s", "converged", "iter", "status"),
              ((s.timestamp, r.thrust_N, r.C_T, r.lambda_s, r.converged, r.iterations_used, r.status)
               for s, r in zip(samples, results)))
    active = [r for r in results if r.status != "below_min_speed"]
    frac = sum(not r.converged for r in active) / len(active) if active else 0.0
    print(f"{len(results)} samples, {frac:.2%} not converged")
    _check_convergence(frac, args.max_nonconverged, "estimate")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    spec = replace(trial_matrix(replace(cfg, trials=1))[0], method=args.method or METHODS[0])
    res = run_trial(cfg, spec)
    write_trace(_out(args) / f"trace_{spec.method}.csv", res.trace, args.timing)
    print(f"{spec.method}: thrust RMSE {res.thrust_rmse:.5g} N, estimate RMSE {res.estimate_rmse:.3g} N")
    _check_convergence(res.nonconverged_fraction, args.max_nonconverged, "simulate")
    return EXIT_OK


def cmd_batch(args) -> int:
    cfg = _config(args)
    if args.method:
        cfg = with_overrides(cfg, methods=(args.method,))
    t0 = time.perf_counter()
    result = run_experiment_batch(cfg, _out(args), workers=args.workers, timing=args.timing)
    for m, s in result.summaries.items():
        mean, median, std = s.rmse_per_axis["z"]
        print(f"{m:15s} thrust RMSE mean {mean:.5g}  median {median:.5g}  stddev {std:.5g}")
    print(f"{len(result.trials)} trials in {time.perf_counter() - t0:.1f} s")
    _check_convergence(result.nonconverged_fraction, args.max_nonconverged, "batch")
    return EXIT_OK


def cmd_stats(args) -> int:
    t0 = time.perf_counter()
    stats = [table_stats(name) for name in TABLES]
    for s in stats:
        print(f"{s.name}: pearson {s.pearson_r:.3f} ({s.pearson_r:.5f})  thrust_scale {s.thrust_scale:.6g}")
    if args.out:
        write_csv(_out(args) / "stats.csv", ("table", "n", "pearson", "thrust_scale"),
                  ((s.name, s.n, s.pearson_r, s.thrust_scale) for s in stats))
    print(f"elapsed {time.perf_counter() - t0:.3f} s")
    return EXIT_OK


def cmd_plotdata(args) -> int:
    """Step-response traces for both methods side by side, one CSV."""
    cfg = _config(args)
    base = trial_matrix(replace(cfg, trials=1))[0]
    runs = {}
    for method in METHODS:
        spec = TrialSpec(0, method, base.seed, args.wind, args.profile, base.initial_voltage)
        runs[method] = run_trial(cfg, spec).trace
    tc, sm = runs["thrust-control"], runs["static-map"]
    keep = tc.timestamp >= cfg.warmup_s - args.lead
    write_csv(_out(args) / "plotdata.csv",
              ("timestamp", "setpoint", "thrust_control", "static_map", "thrust_control_estimate"),
              zip(np.round(tc.timestamp[keep] - cfg.warmup_s, 9).tolist(), tc.setpoint[keep].tolist(),
                  tc.true_thrust[keep].tolist(), sm.true_thrust[keep].tolist(),
                  tc.estimate[keep].tolist()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment INI file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--preset", choices=("250mm", "500mm"))
    common.add_argument("--rate-hz", type=float, dest="rate_hz")
    common.add_argument("--max-nonconverged", type=float, default=0.05,
                        help="fraction of non-converged estimator steps treated as failure")

    p = argparse.ArgumentParser(prog="rotorthrust", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    c = sub.add_parser("calibrate", parents=[common], help="fit thrust scale from bench CSV")
    c.add_argument("--bench", required=True)
    c.add_argument("--omega-max", type=float, dest="omega_max",
                   help="speed at 100%% throttle when the CSV has no omega column")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("estimate", parents=[common], help="offline telemetry -> thrust")
    e.add_argument("--telemetry", required=True)
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("simulate", parents=[common], help="single closed-loop run")
    s.add_argument("--method", choices=METHODS)
    s.add_argument("--timing", action="store_true", help="record compute_us (not reproducible)")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("batch", parents=[common], help="paired experiment matrix")
    b.add_argument("--method", choices=METHODS, help="run only this method")
    b.add_argument("--trials", type=int)
    b.add_argument("--workers", type=int)
    b.add_argument("--timing", action="store_true", help="record compute_us (not reproducible)")
    b.set_defaults(func=cmd_batch)

    st = sub.add_parser("stats", parents=[common], help="Pearson and scale of the shipped tables")
    st.set_defaults(func=cmd_stats)

    pd = sub.add_parser("plotdata", parents=[common], help="CSV for thrust-tracking plots")
    pd.add_argument("--profile", default="step", choices=("hover", "steps", "sine", "step"))
    pd.add_argument("--wind", type=float, default=0.0, help="wind level, m/s")
    pd.add_argument("--lead", type=float, default=1.0, help="seconds kept before the profile starts")
    pd.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; report it as a configuration error
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MalformedCsv, BenchError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, AeroError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
