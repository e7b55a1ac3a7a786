"""Synthetic rotor plant for closed-loop experiments.

The motor is a first-order lag from the normalised command to speed. Thrust
and aerodynamic power come from the same reduced BEMT chain the estimator
inverts, so with zero noise the estimator sees a consistent plant. Current is
synthesised by inverting the rotor power balance.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .aero import (
    KQ_CURRENT,
    AeroCoefficients,
    RotorGeometry,
    TelemetrySample,
    solve_inflow,
)
from .controller import (
    PRESETS,
    ControllerError,
    ControllerState,
    PidGains,
    StaticMapBaseline,
    calibrate_max_thrust,
    control_step,
    normalize_thrust,
)
from .estimator import EstimatorConfig, RotorEstimator

RPM_TO_RAD_S = 2.0 * math.pi / 60.0
MAX_DT = 0.01

WindSpec = Union[float, Sequence[Sequence[float]]]


@dataclass(frozen=True)
class DisturbanceProfile:
    """Wind, battery and sensor disturbances for one run.

    ``vertical_wind`` is the axial air speed through the disc, positive when it
    adds to the inflow (as in climb). Either a constant or ``(t, w)``
    breakpoints held piecewise constant. A first-order Gauss-Markov gust with
    standard deviation ``gust_sigma`` and correlation time ``gust_tau`` is
    added on top.
    """
    vertical_wind: WindSpec = 0.0
    gust_sigma: float = 0.0
    gust_tau: float = 0.5
    voltage_sag_rate: float = 0.0      # V per mAh drawn
    current_noise_sigma: float = 0.0   # A
    speed_noise_sigma: float = 0.0     # rad/s
    seed: int = 0

    def __post_init__(self):
        for name in ("gust_sigma", "voltage_sag_rate", "current_noise_sigma", "speed_noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.gust_tau > 0:
            raise ValueError("gust_tau must be positive")

    def mean_wind(self, t: float) -> float:
        w = self.vertical_wind
        if isinstance(w, (int, float)):
            return float(w)
        value = 0.0
        for t_k, w_k in w:
            if t >= t_k:
                value = float(w_k)
            else:
                break
        return value


@dataclass
class MotorPlant:
    geometry: RotorGeometry
    coef: AeroCoefficients
    kv_rating: float                 # rpm/V
    supply_voltage: float            # open-circuit voltage at full charge
    resistance: float = 0.0          # battery + wiring, ohm
    time_constant_tau_m: float = 0.03
    speed_omega: float = 0.0
    kq_mode: str = KQ_CURRENT
    # integration state
    time: float = 0.0
    current: float = 0.0
    consumed_mAh: float = 0.0
    _meas_current: Optional[float] = field(default=None, repr=False)
    _gust: float = field(default=0.0, repr=False)
    _rng: Optional[np.random.Generator] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.time_constant_tau_m > 0:
            raise ValueError("time_constant_tau_m must be positive")
        if self.speed_omega < 0:
            raise ValueError("speed_omega must be non-negative")
        # With the current-rate form, K_q0 - K_q1*di/dt turns negative at the
        # slew rates a lagged motor produces, so the power balance has no
        # physical current solution.
        if self.kq_mode != KQ_CURRENT and self.geometry.motor_Kq1 != 0.0:
            raise ValueError("plant supports kq_mode='current' only (or motor_Kq1 == 0)")

    def open_circuit_voltage(self) -> float:
        return self.supply_voltage

    def omega_max(self, voltage: float | None = None) -> float:
        v = self.supply_voltage if voltage is None else voltage
        return self.kv_rating * v * RPM_TO_RAD_S


@dataclass(frozen=True)
class SimStep:
    telemetry: TelemetrySample
    true_thrust_N: float
    true_lambda_s: float


def current_for_power(geom: RotorGeometry, p_m: float, omega: float) -> float:
    """Current that delivers shaft power ``p_m`` with K_q = K_q0 - K_q1*i_a."""
    q = p_m / omega
    k = geom.motor_Kq1
    b = geom.motor_Kq0
    if k == 0.0:
        return q / b
    disc = b * b - 4.0 * k * q
    if disc < 0.0:
        # beyond peak torque; saturate at the current giving maximum K_q*i
        return b / (2.0 * k)
    return 2.0 * q / (b + math.sqrt(disc))


def plant_step(plant: MotorPlant, command_u: float, disturbance: DisturbanceProfile,
               dt: float) -> SimStep:
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"dt must be in (0, {MAX_DT}], got {dt}")
    if not 0.0 <= command_u <= 1.0:
        raise ValueError(f"command_u must be in [0, 1], got {command_u}")
    if plant._rng is None:
        plant._rng = np.random.Generator(np.random.Philox(disturbance.seed))
    rng = plant._rng
    geom, coef = plant.geometry, plant.coef

    t = plant.time + dt
    v_oc = plant.supply_voltage - disturbance.voltage_sag_rate * plant.consumed_mAh
    v_term = v_oc - plant.resistance * plant.current
    omega_ss = command_u * plant.omega_max(max(v_term, 0.0))
    tau = plant.time_constant_tau_m
    omega = omega_ss + (plant.speed_omega - omega_ss) * math.exp(-dt / tau)
    omega_dot = (omega_ss - omega) / tau

    z_gust, z_i, z_w = rng.standard_normal(3).tolist()
    if disturbance.gust_sigma > 0.0:
        a = math.exp(-dt / disturbance.gust_tau)
        plant._gust = a * plant._gust + disturbance.gust_sigma * math.sqrt(1.0 - a * a) * z_gust
    wind = disturbance.mean_wind(t) + plant._gust

    if omega > 1e-9:
        lam_s = wind / (omega * geom.radius_R)
        lam_s = min(max(lam_s, -1.0), coef.c2)
        sol = solve_inflow(coef, lam_s)
        thrust = max(coef.thrust_scale * sol.C_T * omega * omega, 0.0)
        p_am = sol.C_Pam * omega ** 3
        p_m = p_am + geom.rotor_inertia_Ir * omega * omega_dot
        current = current_for_power(geom, p_m, omega)
    else:
        lam_s = 0.0
        thrust = 0.0
        current = 0.0

    plant.consumed_mAh += current * dt / 3.6
    plant.speed_omega = omega
    plant.current = current
    plant.time = t

    meas_current = current + disturbance.current_noise_sigma * z_i
    meas_omega = max(omega + disturbance.speed_noise_sigma * z_w, 0.0)
    prev_meas = plant._meas_current
    current_rate = 0.0 if prev_meas is None else (meas_current - prev_meas) / dt
    plant._meas_current = meas_current
    voltage = v_oc - plant.resistance * current

    sample = TelemetrySample(meas_omega, omega_dot, meas_current, current_rate, voltage, t)
    return SimStep(sample, thrust, lam_s)


@dataclass
class Trace:
    timestamp: np.ndarray
    setpoint: np.ndarray
    estimate: np.ndarray
    command: np.ndarray
    true_thrust: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    compute_us: np.ndarray
    current: np.ndarray
    voltage: np.ndarray
    flags: list
    charge_mAh: float = 0.0

    COLUMNS = ("timestamp", "setpoint", "estimate", "command", "true_thrust",
               "converged", "iter", "compute_us")

    def __len__(self):
        return len(self.timestamp)

    def same_as(self, other: "Trace") -> bool:
        """Equality ignoring wall-clock timing."""
        names = ("timestamp", "setpoint", "estimate", "command", "true_thrust",
                 "converged", "iterations", "current", "voltage")
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names) \
            and self.flags == other.flags


SetpointProfile = Callable[[float], float]


def constant_profile(value: float) -> SetpointProfile:
    return lambda t: value


def step_profile(before: float, after: float, t_step: float) -> SetpointProfile:
    return lambda t: before if t < t_step else after


def run_closed_loop(plant: MotorPlant, estimator: RotorEstimator,
                    controller: Union[ControllerState, StaticMapBaseline],
                    setpoint_profile: SetpointProfile, disturbance: DisturbanceProfile,
                    duration: float, rate_hz: float = 500.0) -> Trace:
    """Run plant, estimator and command policy in lock step.

    ``controller`` is either a calibrated ``ControllerState`` (thrust control)
    or a ``StaticMapBaseline``. Setpoints are relative thrust; the trace
    records thrusts in newtons using the policy's normaliser.
    """
    if not 100.0 <= rate_hz <= 2000.0:
        raise ValueError(f"rate_hz must be in [100, 2000], got {rate_hz}")
    dt = 1.0 / rate_hz
    n = int(round(duration * rate_hz))
    thrust_control = isinstance(controller, ControllerState)
    if thrust_control and controller.max_thrust_N is None:
        raise ValueError("controller must be calibrated before the run")
    t_max = controller.max_thrust_N

    cols = {name: np.zeros(n) for name in ("timestamp", "setpoint", "estimate", "command",
                                           "true_thrust", "compute_us", "current", "voltage")}
    converged = np.zeros(n, dtype=bool)
    iterations = np.zeros(n, dtype=np.int64)
    flags = []
    t0 = plant.time
    u = 0.0
    perf = time.perf_counter
    for k in range(n):
        step = plant_step(plant, u, disturbance, dt)
        tel = step.telemetry
        c0 = perf()
        est = estimator.step(tel)
        t = t0 + (k + 1) * dt
        sp = setpoint_profile(t)
        flag = est.status
        if thrust_control:
            try:
                cmd = control_step(controller, sp, normalize_thrust(controller, est.thrust_N), t)
                u = cmd.u
            except ControllerError as exc:
                flag = type(exc).__name__
        else:
            u = controller.command(sp, tel.voltage)
        elapsed = perf() - c0
        cols["timestamp"][k] = t
        cols["setpoint"][k] = sp * t_max
        cols["estimate"][k] = est.thrust_N
        cols["command"][k] = u
        cols["true_thrust"][k] = step.true_thrust_N
        cols["compute_us"][k] = elapsed * 1e6
        cols["current"][k] = tel.current_ia
        cols["voltage"][k] = tel.voltage
        converged[k] = est.converged
        iterations[k] = est.iterations_used
        flags.append(flag)
    return Trace(converged=converged, iterations=iterations, flags=flags,
                 charge_mAh=plant.consumed_mAh, **cols)


# ---------------------------------------------------------------------------
# platform presets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Platform:
    name: str
    geometry: RotorGeometry
    kv_rating: float
    thrust_scale: float
    gains: PidGains
    time_constant_tau_m: float
    supply_voltage: float = 16.8
    resistance: float = 0.02
    battery_capacity_mAh: float = 7200.0
    v_empty: float = 14.8

    def coefficients(self, rho: float | None = None) -> AeroCoefficients:
        rho = self.geometry.air_density_rho if rho is None else rho
        return AeroCoefficients.baseline(rho=rho, thrust_scale=self.thrust_scale)

    def make_plant(self, kq_mode: str = KQ_CURRENT, supply_voltage: float | None = None) -> MotorPlant:
        return MotorPlant(
            geometry=self.geometry,
            coef=self.coefficients(),
            kv_rating=self.kv_rating,
            supply_voltage=self.supply_voltage if supply_voltage is None else supply_voltage,
            resistance=self.resistance,
            time_constant_tau_m=self.time_constant_tau_m,
            kq_mode=kq_mode,
        )


# Rotor and battery data follow the two test vehicles (4S 7200 mAh packs).
# Inertia and motor lag are assumed values; thrust scales are the least-squares
# fits to the shipped bench tables.
PLATFORMS = {
    "250mm": Platform(
        name="250mm",
        geometry=RotorGeometry(radius_R=0.0635, blade_count_Nb=3, rotor_inertia_Ir=4e-6),
        kv_rating=2300.0,
        thrust_scale=0.10554,
        gains=PRESETS["250mm"],
        time_constant_tau_m=0.03,
    ),
    "500mm": Platform(
        name="500mm",
        geometry=RotorGeometry(radius_R=0.165, blade_count_Nb=2, rotor_inertia_Ir=4e-5),
        kv_rating=700.0,
        thrust_scale=1.64497,
        gains=PRESETS["500mm"],
        time_constant_tau_m=0.06,
    ),
}


def settle(plant: MotorPlant, command_u: float, disturbance: DisturbanceProfile,
           duration: float, dt: float = 0.002) -> SimStep:
    step = None
    for _ in range(int(round(duration / dt))):
        step = plant_step(plant, command_u, disturbance, dt)
    return step


def calibrate_thrust_control(platform: Platform, estimator_config: EstimatorConfig,
                             kq_mode: str = KQ_CURRENT, duration: float = 1.0,
                             rate_hz: float = 500.0) -> float:
    """Full-throttle run in still air; returns the maximum estimated thrust."""
    plant = platform.make_plant(kq_mode)
    est = RotorEstimator(platform.geometry, platform.coefficients(), estimator_config)
    quiet = DisturbanceProfile()
    dt = 1.0 / rate_hz
    estimates = [est.step(plant_step(plant, 1.0, quiet, dt).telemetry)
                 for _ in range(int(round(duration * rate_hz)))]
    return calibrate_max_thrust(estimates)


def calibrate_static_map(platform: Platform, kq_mode: str = KQ_CURRENT,
                         levels: Sequence[float] = tuple(np.linspace(0.1, 1.0, 10))) -> StaticMapBaseline:
    """Static thrust test: fit T = C_T0*w + C_T*w^2 to steady still-air points."""
    speeds, thrusts = [], []
    quiet = DisturbanceProfile()
    for u in levels:
        plant = platform.make_plant(kq_mode)
        s = settle(plant, float(u), quiet, 1.0)
        speeds.append(s.telemetry.omega)
        thrusts.append(s.true_thrust_N)
    w = np.asarray(speeds)
    T = np.asarray(thrusts)
    (C_T0, C_T), *_ = np.linalg.lstsq(np.column_stack([w, w * w]), T, rcond=None)
    v_ref = platform.supply_voltage
    return StaticMapBaseline(C_T0=float(C_T0), C_T=float(C_T), max_thrust_N=float(T.max()),
                             omega_max=platform.make_plant(kq_mode).omega_max(),
                             v_ref=v_ref, battery_gain=1.0 / v_ref)
