"""Per-rotor thrust estimator.

Each telemetry frame gives a measured power coefficient P_am / omega^3. The
stream inflow ratio is then found with a secant iteration so that the
modelled power coefficient matches it, warm-started from the previous frame.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

from .aero import (
    KQ_RATE,
    OMEGA_MIN,
    AeroCoefficients,
    InflowSolution,
    NoRealRoot,
    RotorGeometry,
    TelemetrySample,
    lambda_i_from_lambda_s,
)

STATUS_OK = "ok"
STATUS_MAX_ITER = "max_iter"
STATUS_BELOW_MIN_SPEED = "below_min_speed"
STATUS_NO_ROOT = "no_root"
STATUS_SECANT_STALL = "secant_stall"

LAMBDA_S_BOUND = 1.0


@dataclass(frozen=True)
class EstimatorConfig:
    max_iterations_N: int = 20
    initial_offset_Delta: float = 0.1
    convergence_eps: float = 1e-5
    omega_min: float = OMEGA_MIN
    kq_mode: str = KQ_RATE

    def __post_init__(self):
        if self.max_iterations_N < 2:
            raise ValueError("max_iterations_N must be >= 2")
        if not self.initial_offset_Delta > 0:
            raise ValueError("initial_offset_Delta must be positive")
        if not self.convergence_eps > 0:
            raise ValueError("convergence_eps must be positive")


@dataclass
class EstimatorState:
    old_lambda_s: float = 0.0
    last_solution: Optional[InflowSolution] = None
    sample_count: int = 0

    def reset(self):
        """Forget the warm start; call on arm/disarm."""
        self.old_lambda_s = 0.0
        self.last_solution = None
        self.sample_count = 0


@dataclass(frozen=True)
class ThrustEstimate:
    thrust_N: float
    C_T: float
    lambda_s: float
    iterations_used: int
    converged: bool
    compute_time: float
    status: str = STATUS_OK


def _held(state, coef, omega, status, t0):
    # Hold the last thrust coefficient, evaluated at the current speed.
    sol = state.last_solution
    C_T = sol.C_T if sol is not None else 0.0
    thrust = coef.thrust_scale * C_T * omega * omega if sol is not None else 0.0
    return ThrustEstimate(max(thrust, 0.0), C_T, state.old_lambda_s, 0, False,
                          time.perf_counter() - t0, status)


def estimate_step(state: EstimatorState, config: EstimatorConfig, geom: RotorGeometry,
                  coef: AeroCoefficients, sample: TelemetrySample) -> ThrustEstimate:
    t0 = time.perf_counter()
    state.sample_count += 1
    omega = sample.omega
    if omega <= config.omega_min:
        return _held(state, coef, omega, STATUS_BELOW_MIN_SPEED, t0)

    # Measured aerodynamic power coefficient (power balance, inlined for latency).
    if config.kq_mode == KQ_RATE:
        kq = geom.motor_Kq0 - geom.motor_Kq1 * sample.current_ia_dot
    else:
        kq = geom.motor_Kq0 - geom.motor_Kq1 * sample.current_ia
    p_am = kq * sample.current_ia * omega - geom.rotor_inertia_Ir * omega * sample.omega_dot
    cpam_t = p_am / (omega * omega * omega)

    c0, c1, c2, c3 = coef.c0, coef.c1, coef.c2, coef.c3
    d0, d1 = coef.d0, coef.d1
    # Residual is normalised by the profile-power floor c3 so eps is dimensionless.
    inv_c3 = 1.0 / c3
    hi = min(LAMBDA_S_BOUND, c2)
    lo = -LAMBDA_S_BOUND
    eps = config.convergence_eps
    n_max = config.max_iterations_N

    ls = state.old_lambda_s - config.initial_offset_Delta
    ls_prev = f_prev = 0.0
    lam_i = C_T = kappa = cpam = 0.0
    status = STATUS_MAX_ITER
    converged = False
    k = 0
    try:
        for k in range(n_max):
            if k == 1:
                ls = state.old_lambda_s
            lam_i = lambda_i_from_lambda_s(coef, ls)
            C_T = c1 * (c2 - (ls + lam_i))
            kappa = d0 + d1 * C_T
            cpam = c3 + C_T * (kappa * lam_i + ls) * c0
            f = (cpam_t - cpam) * inv_c3
            if k > 1 and abs(f - f_prev) < eps:
                status = STATUS_OK
                converged = True
                break
            if k == 0:
                ls_prev, f_prev = ls, f
                continue
            if k == n_max - 1:
                break
            df = f - f_prev
            if df == 0.0:
                status = STATUS_SECANT_STALL
                break
            ls_next = ls - f * (ls - ls_prev) / df
            if ls_next > hi:
                ls_next = hi
            elif ls_next < lo:
                ls_next = lo
            ls_prev, f_prev = ls, f
            ls = ls_next
    except NoRealRoot:
        return _held(state, coef, omega, STATUS_NO_ROOT, t0)

    if not math.isfinite(ls):
        return _held(state, coef, omega, STATUS_NO_ROOT, t0)

    state.old_lambda_s = ls
    state.last_solution = InflowSolution(ls, lam_i, C_T, kappa, cpam)
    thrust = coef.thrust_scale * C_T * omega * omega
    return ThrustEstimate(thrust, C_T, ls, k + 1, converged,
                          time.perf_counter() - t0, status)


def estimate_bank(states: Sequence[EstimatorState], config: EstimatorConfig,
                  geoms, coefs, samples: Sequence[TelemetrySample]) -> list[ThrustEstimate]:
    """Run one independent estimator per rotor.

    ``geoms`` and ``coefs`` may be a single object shared by all rotors or a
    per-rotor sequence.
    """
    n = len(states)
    if len(samples) != n:
        raise ValueError(f"expected {n} samples, got {len(samples)}")
    if isinstance(geoms, RotorGeometry):
        geoms = [geoms] * n
    if isinstance(coefs, AeroCoefficients):
        coefs = [coefs] * n
    return [estimate_step(s, config, g, c, x) for s, g, c, x in zip(states, geoms, coefs, samples)]


class RotorEstimator:
    """Estimator bound to one rotor's constants."""

    def __init__(self, geom: RotorGeometry, coef: AeroCoefficients,
                 config: EstimatorConfig | None = None):
        self.geom = geom
        self.coef = coef
        self.config = config or EstimatorConfig()
        self.state = EstimatorState()

    def step(self, sample: TelemetrySample) -> ThrustEstimate:
        return estimate_step(self.state, self.config, self.geom, self.coef, sample)

    def reset(self):
        self.state.reset()


def with_current_rate(samples: Sequence[TelemetrySample]) -> list[TelemetrySample]:
    """Fill ``current_ia_dot`` by backward difference; the first frame gets 0."""
    out = []
    prev = None
    for s in samples:
        if prev is None:
            rate = 0.0
        else:
            dt = s.timestamp - prev.timestamp
            if dt < 0:
                raise ValueError(f"timestamps decrease at t={s.timestamp}")
            rate = (s.current_ia - prev.current_ia) / dt if dt > 0 else 0.0
        out.append(TelemetrySample(s.omega, s.omega_dot, s.current_ia, rate, s.voltage, s.timestamp))
        prev = s
    return out
