"""Rotor thrust control: feedforward PID on relative thrust, and the
open-loop quadratic thrust-to-speed map it replaces."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional


class ControllerError(ValueError):
    pass


class NotCalibrated(ControllerError):
    pass


class NonMonotonicTime(ControllerError):
    pass


class EmptyCalibration(ControllerError):
    pass


@dataclass(frozen=True)
class PidGains:
    Kff: float
    Kp: float
    Ki: float
    Kd: float = 0.0

    def __post_init__(self):
        for name in ("Kff", "Kp", "Ki", "Kd"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"gain {name} must be finite")
        if not 0.0 <= self.Kff <= 2.0:
            raise ValueError(f"Kff must be in [0, 2], got {self.Kff}")


PRESETS = {
    "250mm": PidGains(Kff=0.8, Kp=1.0, Ki=0.3, Kd=0.0),
    "500mm": PidGains(Kff=0.9, Kp=2.15, Ki=0.5, Kd=0.0),
}

# Derivative low-pass time constant, in controller periods.
D_FILTER_PERIODS = 4.0


@dataclass
class ControllerState:
    gains: PidGains
    max_thrust_N: Optional[float] = None
    integral_accum: float = 0.0
    prev_error: float = 0.0
    prev_timestamp: float = 0.0
    integral_limit: float = 1.0   # bound on |Ki * integral|
    d_filtered: float = 0.0
    primed: bool = False

    def reset(self):
        self.integral_accum = 0.0
        self.prev_error = 0.0
        self.d_filtered = 0.0
        self.primed = False


@dataclass(frozen=True)
class RotorCommand:
    u: float
    ff: float
    p: float
    i: float
    d: float

    @property
    def components(self):
        return (self.ff, self.p, self.i, self.d)


def normalize_thrust(state: ControllerState, thrust_N: float) -> float:
    if state.max_thrust_N is None:
        raise NotCalibrated("max_thrust_N not set; run calibrate_max_thrust first")
    rel = thrust_N / state.max_thrust_N
    return 0.0 if rel < 0.0 else (1.0 if rel > 1.0 else rel)


def control_step(state: ControllerState, T_sp: float, T_hat: float, timestamp: float) -> RotorCommand:
    """One PID-FF update on relative thrust.

    The integral uses trapezoidal accumulation in seconds and is frozen while
    the output is saturated in the direction the error pushes it.
    """
    dt = timestamp - state.prev_timestamp
    if not dt > 0.0:
        raise NonMonotonicTime(f"timestamp {timestamp} not after {state.prev_timestamp}")
    g = state.gains
    e = T_sp - T_hat
    if state.primed:
        e_prev = state.prev_error
        raw_d = (e - e_prev) / dt
        alpha = 1.0 / (1.0 + D_FILTER_PERIODS)
        d_filt = state.d_filtered + alpha * (raw_d - state.d_filtered)
    else:
        e_prev = e
        d_filt = 0.0

    ff = g.Kff * T_sp
    p = g.Kp * e
    d = g.Kd * d_filt
    integral = state.integral_accum + 0.5 * (e + e_prev) * dt
    i_term = g.Ki * integral
    lim = state.integral_limit
    if i_term > lim or i_term < -lim:
        i_term = lim if i_term > 0 else -lim
        integral = i_term / g.Ki
    u_raw = ff + p + i_term + d
    if (u_raw > 1.0 and e > 0.0) or (u_raw < 0.0 and e < 0.0):
        integral = state.integral_accum
        i_term = g.Ki * integral
        u_raw = ff + p + i_term + d
    u = 0.0 if u_raw < 0.0 else (1.0 if u_raw > 1.0 else u_raw)

    state.integral_accum = integral
    state.prev_error = e
    state.prev_timestamp = timestamp
    state.d_filtered = d_filt
    state.primed = True
    return RotorCommand(u, ff, p, i_term, d)


def static_map(C_T0: float, C_T: float, thrust: float, voltage: float | None = None,
               v_ref: float | None = None, battery_gain: float = 0.0) -> float:
    """Speed that produces ``thrust`` under T = C_T0*w + C_T*w^2.

    With ``voltage`` given, the speed is multiplied by
    ``1 + battery_gain * (v_ref - voltage)`` to compensate battery sag.
    """
    if not C_T > 0:
        raise ValueError("C_T must be positive")
    if thrust <= 0.0:
        return 0.0
    root = math.sqrt(C_T0 * C_T0 + 4.0 * C_T * thrust)
    # pick the form that adds like-signed terms
    if C_T0 >= 0.0:
        omega = 2.0 * thrust / (C_T0 + root)
    else:
        omega = (root - C_T0) / (2.0 * C_T)
    if voltage is not None and v_ref is not None and battery_gain:
        omega *= 1.0 + battery_gain * (v_ref - voltage)
    return omega


def calibrate_max_thrust(estimates: Iterable, state: ControllerState | None = None) -> float:
    """Largest estimated thrust seen at full throttle; stored on ``state`` if given."""
    best = None
    for est in estimates:
        value = est.thrust_N if hasattr(est, "thrust_N") else float(est)
        if best is None or value > best:
            best = value
    if best is None:
        raise EmptyCalibration("no estimates supplied")
    if state is not None:
        state.max_thrust_N = best
    return best


@dataclass
class StaticMapBaseline:
    """Open-loop baseline: relative thrust -> speed -> normalised command."""
    C_T0: float
    C_T: float
    max_thrust_N: float
    omega_max: float
    v_ref: float | None = None
    battery_gain: float = 0.0

    def command(self, T_sp: float, voltage: float | None = None) -> float:
        omega = static_map(self.C_T0, self.C_T, T_sp * self.max_thrust_N,
                           voltage, self.v_ref, self.battery_gain)
        u = omega / self.omega_max
        return 0.0 if u < 0.0 else (1.0 if u > 1.0 else u)
