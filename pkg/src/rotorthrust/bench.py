"""Bench calibration, statistics and batch closed-loop experiments."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .aero import AeroCoefficients, RotorGeometry, TelemetrySample, solve_inflow
from .config import ExperimentConfig
from .controller import ControllerState
from .estimator import EstimatorConfig, EstimatorState, estimate_step
from .io import BenchRecord, read_bench, read_comparison, write_bench, write_csv, write_trace
from .estimator import RotorEstimator
from .sim import (
    DisturbanceProfile,
    Trace,
    calibrate_static_map,
    calibrate_thrust_control,
    current_for_power,
    run_closed_loop,
)


class BenchError(ValueError):
    pass


class InvalidGeometry(BenchError):
    pass


class DegenerateFit(BenchError):
    pass


class ZeroVariance(BenchError):
    pass


class LengthMismatch(BenchError):
    pass


def bench_thrust(record: BenchRecord) -> float:
    """Rotor thrust from an L-shaped lever: T = (L / H) * F_s."""
    if not record.arm_H > 0:
        raise InvalidGeometry(f"arm_H must be positive, got {record.arm_H}")
    if not record.arm_L > 0:
        raise InvalidGeometry(f"arm_L must be positive, got {record.arm_L}")
    return record.arm_L / record.arm_H * record.scale_force_Fs


def _pair(x, y, min_len):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"sequences differ in shape: {x.shape} vs {y.shape}")
    if len(x) < min_len:
        raise LengthMismatch(f"need at least {min_len} values, got {len(x)}")
    return x, y


def fit_thrust_scale(estimated, ground_truth) -> float:
    """Least-squares s minimising sum (s*T_hat - T)^2."""
    est, truth = _pair(estimated, ground_truth, 2)
    denom = float(est @ est)
    if denom == 0.0:
        raise DegenerateFit("all estimates are zero")
    return float(est @ truth) / denom


def pearson(x, y) -> float:
    x, y = _pair(x, y, 2)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("pearson needs non-zero variance in both sequences")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def rmse(reference, actual) -> float:
    ref, act = _pair(reference, actual, 1)
    d = act - ref
    return math.sqrt(float(d @ d) / len(d))


# ---------------------------------------------------------------------------
# bench calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    coefficients: AeroCoefficients
    max_thrust_N: float
    raw_estimates: tuple
    ground_truth: tuple


def raw_bench_estimates(speeds: Sequence[float], geom: RotorGeometry, coef: AeroCoefficients,
                        config: EstimatorConfig | None = None) -> list[float]:
    """Unscaled estimator output for still-air steady points at the given speeds.

    Telemetry is synthesised from the forward model at zero stream inflow and
    fed through the estimator, warm-starting point to point.
    """
    config = config or EstimatorConfig()
    unscaled = coef.with_scale(1.0)
    still = solve_inflow(unscaled, 0.0)
    state = EstimatorState()
    out = []
    for w in speeds:
        if w <= config.omega_min:
            out.append(0.0)
            continue
        p_am = still.C_Pam * w ** 3
        if config.kq_mode == "current":
            current = current_for_power(geom, p_am, w)
        else:
            current = p_am / (geom.motor_Kq0 * w)
        sample = TelemetrySample(omega=w, current_ia=current)
        out.append(estimate_step(state, config, geom, unscaled, sample).thrust_N)
    return out


def calibrate_from_bench(path, geom: RotorGeometry, coef: AeroCoefficients, omega_max: float,
                         config: EstimatorConfig | None = None) -> Calibration:
    """Fit the thrust scale from a bench CSV.

    Speeds come from an ``omega`` column when present, otherwise throttle is
    mapped linearly onto ``[0, omega_max]``.
    """
    records = read_bench(path)
    truth = [bench_thrust(r) for r in records]
    speeds = [r.omega if r.omega is not None else r.throttle_pct / 100.0 * omega_max
              for r in records]
    raw = raw_bench_estimates(speeds, geom, coef, config)
    scale = fit_thrust_scale(raw, truth)
    if not scale > 0:
        raise DegenerateFit(f"fitted thrust scale {scale} is not positive")
    return Calibration(coef.with_scale(scale), scale * max(raw), tuple(raw), tuple(truth))


# ---------------------------------------------------------------------------
# published bench tables
# ---------------------------------------------------------------------------

TABLES = ("250mm", "500mm")


def table_path(name: str):
    return resources.files("rotorthrust.data").joinpath(f"table3_{name}.csv")


@dataclass(frozen=True)
class TableStats:
    name: str
    pearson_r: float
    thrust_scale: float
    n: int


def table_stats(name: str, path=None) -> TableStats:
    path = path or table_path(name)
    _, est, meas = read_comparison(path)
    return TableStats(name, pearson(est, meas), fit_thrust_scale(est, meas), len(est))


# ---------------------------------------------------------------------------
# batch experiments
# ---------------------------------------------------------------------------

def make_profile(name: str, start: float):
    """Relative-thrust setpoint profile; holds its initial value until ``start``."""
    if name == "hover":
        return lambda t: 0.5
    if name == "step":
        return lambda t: 0.3 if t < start else 0.6
    if name == "steps":
        levels = (0.6, 0.4, 0.55, 0.45)
        return lambda t: 0.5 if t < start else levels[int((t - start) // 2.5) % 4]
    if name == "sine":
        return lambda t: 0.5 if t < start else 0.5 + 0.15 * math.sin(0.5 * math.pi * (t - start))
    raise ValueError(f"unknown profile {name!r}")


@dataclass(frozen=True)
class TrialSpec:
    index: int
    method: str
    seed: int
    wind_level: float
    profile: str
    initial_voltage: float


def trial_matrix(cfg: ExperimentConfig) -> list[TrialSpec]:
    """Pair every trial across methods: same seed, wind, profile and battery."""
    specs = []
    n_w = len(cfg.wind_levels)
    for j in range(cfg.trials):
        seed = cfg.seed * 1_000_003 + j
        v_rng = np.random.Generator(np.random.Philox(seed))
        v0 = float(v_rng.uniform(cfg.initial_voltage_min, cfg.initial_voltage_max))
        wind = cfg.wind_levels[j % n_w]
        profile = cfg.profiles[(j // n_w) % len(cfg.profiles)]
        for method in cfg.methods:
            specs.append(TrialSpec(j, method, seed, wind, profile, v0))
    return specs


def disturbance_for(cfg: ExperimentConfig, spec: TrialSpec) -> DisturbanceProfile:
    return DisturbanceProfile(
        vertical_wind=spec.wind_level * cfg.wind_mean_ratio,
        gust_sigma=spec.wind_level * cfg.gust_ratio,
        gust_tau=cfg.gust_tau,
        voltage_sag_rate=cfg.voltage_sag_rate,
        current_noise_sigma=cfg.current_noise,
        speed_noise_sigma=cfg.speed_noise,
        seed=spec.seed,
    )


@dataclass(frozen=True)
class TrialResult:
    spec: TrialSpec
    thrust_rmse: float
    estimate_rmse: float
    estimate_pearson: float
    charge_mAh: float
    nonconverged_fraction: float
    trace: Trace | None = None


@dataclass(frozen=True)
class _Calibrations:
    thrust_max: float
    static: object


def _calibrate(cfg: ExperimentConfig) -> _Calibrations:
    pf = cfg.platform()
    est_cfg = cfg.estimator_config()
    return _Calibrations(calibrate_thrust_control(pf, est_cfg, cfg.kq_mode, rate_hz=cfg.rate_hz),
                         calibrate_static_map(pf, cfg.kq_mode))


def run_trial(cfg: ExperimentConfig, spec: TrialSpec, cal: _Calibrations | None = None,
              keep_trace: bool = True) -> TrialResult:
    cal = cal or _calibrate(cfg)
    pf = cfg.platform()
    plant = pf.make_plant(cfg.kq_mode, supply_voltage=spec.initial_voltage)
    estimator = RotorEstimator(pf.geometry, cfg.coefficients_obj(), cfg.estimator_config())
    if spec.method == "thrust-control":
        controller = ControllerState(gains=pf.gains, max_thrust_N=cal.thrust_max)
    else:
        # same newton target as thrust control so RMSEs compare like for like
        controller = replace(cal.static, max_thrust_N=cal.thrust_max)
    disturbance = disturbance_for(cfg, spec)
    profile = make_profile(spec.profile, cfg.warmup_s)
    trace = run_closed_loop(plant, estimator, controller, profile, disturbance,
                            cfg.warmup_s + cfg.duration_s, cfg.rate_hz)
    window = trace.timestamp > cfg.warmup_s
    sp, truth, est = trace.setpoint[window], trace.true_thrust[window], trace.estimate[window]
    try:
        r = pearson(est, truth)
    except ZeroVariance:
        r = float("nan")
    return TrialResult(
        spec=spec,
        thrust_rmse=rmse(sp, truth),
        estimate_rmse=rmse(truth, est),
        estimate_pearson=r,
        charge_mAh=trace.charge_mAh,
        nonconverged_fraction=float(1.0 - trace.converged[window].mean()),
        trace=trace if keep_trace else None,
    )


def _trial_worker(args):
    cfg, spec, cal, keep = args
    return run_trial(cfg, spec, cal, keep)


@dataclass
class ExperimentSummary:
    method: str
    thrust_rmse: list = field(default_factory=list)
    estimate_rmse: list = field(default_factory=list)
    pearson_r: list = field(default_factory=list)
    charge_mAh: list = field(default_factory=list)

    @staticmethod
    def _stats(values):
        a = np.asarray(values, dtype=float)
        return float(a.mean()), float(np.median(a)), float(a.std(ddof=1)) if len(a) > 1 else 0.0

    def rows(self):
        yield (self.method, "thrust_rmse", "z", *self._stats(self.thrust_rmse))
        yield (self.method, "estimate_rmse", "z", *self._stats(self.estimate_rmse))
        yield (self.method, "estimate_pearson", "z", *self._stats(self.pearson_r))
        yield (self.method, "charge_mAh", "-", *self._stats(self.charge_mAh))

    @property
    def rmse_per_axis(self):
        return {"z": self._stats(self.thrust_rmse)}


@dataclass
class BatchResult:
    summaries: dict
    trials: list
    nonconverged_fraction: float


def run_experiment_batch(cfg: ExperimentConfig, out_dir=None, workers: int | None = None,
                         timing: bool = False) -> BatchResult:
    """Paired closed-loop trials for each method; optional CSV output.

    Files written to ``out_dir``: one trace per trial, ``trials.csv`` with
    per-trial metrics, and ``summary.csv``.
    """
    cal = _calibrate(cfg)
    specs = trial_matrix(cfg)
    keep = out_dir is not None
    workers = workers if workers is not None else (cfg.workers or os.cpu_count() or 1)
    workers = max(1, min(workers, len(specs)))
    jobs = [(cfg, s, cal, keep) for s in specs]
    if workers == 1:
        results = [_trial_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_worker, jobs))

    summaries = {m: ExperimentSummary(m) for m in cfg.methods}
    for res in results:
        s = summaries[res.spec.method]
        s.thrust_rmse.append(res.thrust_rmse)
        s.estimate_rmse.append(res.estimate_rmse)
        s.pearson_r.append(res.estimate_pearson)
        s.charge_mAh.append(res.charge_mAh)
    nonconv = float(np.mean([r.nonconverged_fraction for r in results]))

    if out_dir is not None:
        out = Path(out_dir)
        for res in results:
            sp = res.spec
            write_trace(out / f"trace_{sp.method}_{sp.index:03d}.csv", res.trace, timing)
        write_csv(out / "trials.csv",
                  ("trial", "method", "seed", "wind_level", "profile", "initial_voltage",
                   "thrust_rmse", "estimate_rmse", "estimate_pearson", "charge_mAh"),
                  ((r.spec.index, r.spec.method, r.spec.seed, r.spec.wind_level, r.spec.profile,
                    r.spec.initial_voltage, r.thrust_rmse, r.estimate_rmse, r.estimate_pearson,
                    r.charge_mAh) for r in results))
        write_csv(out / "summary.csv", ("method", "metric", "axis", "mean", "median", "stddev"),
                  (row for m in cfg.methods for row in summaries[m].rows()))
    return BatchResult(summaries, [replace(r, trace=None) for r in results], nonconv)


def table_as_bench(name: str, path, coef: AeroCoefficients | None = None) -> Path:
    """Re-express a published estimate/measurement table as a bench CSV.

    Each row gets the speed at which the unscaled still-air model reproduces
    the tabulated estimate, and a unit lever so the scale reading equals the
    measured thrust. Calibrating from the result recovers the table's scale.
    """
    coef = (coef or AeroCoefficients.baseline()).with_scale(1.0)
    ct_still = solve_inflow(coef, 0.0).C_T
    throttle, est, meas = read_comparison(table_path(name))
    records = [BenchRecord(th, m, 1.0, 1.0, math.sqrt(e / ct_still))
               for th, e, m in zip(throttle, est, meas)]
    return write_bench(path, records)
