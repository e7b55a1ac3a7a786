"""Rotor aerodynamic model: power balance and the reduced BEMT/momentum relations.

All speeds are rad/s. Coefficients follow the baseline set measured for a
950KV motor with a 10 in dual-blade propeller; other rotors reuse them with a
single ``thrust_scale`` factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

# Below this speed P/omega^3 is dominated by sensor noise.
OMEGA_MIN = 50.0

KQ_RATE = "rate"        # K_q = K_q0 - K_q1 * di_a/dt
KQ_CURRENT = "current"  # K_q = K_q0 - K_q1 * i_a


class AeroError(ValueError):
    pass


class BelowMinimumSpeed(AeroError):
    pass


class NoRealRoot(AeroError):
    pass


class NoAdmissibleRoot(NoRealRoot):
    pass


@dataclass(frozen=True)
class RotorGeometry:
    radius_R: float
    blade_count_Nb: int = 2
    tip_chord_c_tip: float = 0.0232
    tip_pitch_theta_tip: float = 0.2993
    lift_slope_Cl_alpha: float = 5.7
    profile_drag_Cd0: float = 0.0166
    air_density_rho: float = 1.225
    rotor_inertia_Ir: float = 2e-5
    motor_Kq0: float = 0.242
    motor_Kq1: float = 0.0014
    disc_area_A: float = field(init=False)

    def __post_init__(self):
        if not self.radius_R > 0:
            raise ValueError(f"radius_R must be positive, got {self.radius_R}")
        if self.blade_count_Nb not in (2, 3, 4):
            raise ValueError(f"blade_count_Nb must be 2, 3 or 4, got {self.blade_count_Nb}")
        if not self.air_density_rho > 0:
            raise ValueError("air_density_rho must be positive")
        if self.rotor_inertia_Ir < 0:
            raise ValueError("rotor_inertia_Ir must be non-negative")
        object.__setattr__(self, "disc_area_A", math.pi * self.radius_R ** 2)


@dataclass(frozen=True)
class AeroCoefficients:
    c0: float
    c1: float
    c2: float
    c3: float
    c4: float
    d0: float
    d1: float
    thrust_scale: float = 1.0

    def __post_init__(self):
        if not self.c1 > 0:
            raise ValueError("c1 must be positive")
        if not self.c3 > 0:
            raise ValueError("c3 must be positive")
        if not self.c4 > 0:
            raise ValueError("c4 must be positive")
        if not self.thrust_scale > 0:
            raise ValueError("thrust_scale must be positive")

    @classmethod
    def baseline(cls, rho: float = 1.225, thrust_scale: float = 1.0) -> "AeroCoefficients":
        """Published baseline set, with c4 = 2*rho*A*c0^2 and A = pi*c0^2."""
        c0 = 0.0724
        area = math.pi * c0 ** 2
        return cls(
            c0=c0,
            c1=6.1490e-5,
            c2=0.2993,
            c3=1.2998e-8,
            c4=2.0 * rho * area * c0 ** 2,
            d0=4.2959,
            d1=-1.7154e5,
            thrust_scale=thrust_scale,
        )

    @classmethod
    def from_geometry(cls, geom: RotorGeometry, d0: float = 4.2959, d1: float = -1.7154e5,
                      thrust_scale: float = 1.0) -> "AeroCoefficients":
        R = geom.radius_R
        rho = geom.air_density_rho
        return cls(
            c0=R,
            c1=0.5 * geom.blade_count_Nb * rho * geom.tip_chord_c_tip * R ** 3 * geom.lift_slope_Cl_alpha,
            c2=geom.tip_pitch_theta_tip,
            c3=0.5 * rho * geom.tip_chord_c_tip * geom.blade_count_Nb * geom.profile_drag_Cd0 * R ** 4,
            c4=2.0 * rho * geom.disc_area_A * R ** 2,
            d0=d0,
            d1=d1,
            thrust_scale=thrust_scale,
        )

    def with_scale(self, thrust_scale: float) -> "AeroCoefficients":
        return AeroCoefficients(self.c0, self.c1, self.c2, self.c3, self.c4,
                                self.d0, self.d1, thrust_scale)


# Geometry consistent with the baseline coefficients (c0 = R).
BASELINE_GEOMETRY = RotorGeometry(radius_R=0.0724)


@dataclass(frozen=True)
class TelemetrySample:
    omega: float
    omega_dot: float = 0.0
    current_ia: float = 0.0
    current_ia_dot: float = 0.0
    voltage: float = 0.0
    timestamp: float = 0.0


@dataclass(frozen=True)
class InflowSolution:
    lambda_s: float
    lambda_i: float
    C_T: float
    kappa: float
    C_Pam: float


def shaft_friction_power(geom: RotorGeometry, omega: float, omega_dot: float) -> float:
    return geom.rotor_inertia_Ir * omega * omega_dot


def torque_constant(geom: RotorGeometry, current_ia: float, current_ia_dot: float,
                    kq_mode: str = KQ_RATE) -> float:
    if kq_mode == KQ_RATE:
        return geom.motor_Kq0 - geom.motor_Kq1 * current_ia_dot
    if kq_mode == KQ_CURRENT:
        return geom.motor_Kq0 - geom.motor_Kq1 * current_ia
    raise ValueError(f"unknown kq_mode {kq_mode!r}")


def mechanical_power(geom: RotorGeometry, sample: TelemetrySample, kq_mode: str = KQ_RATE) -> float:
    kq = torque_constant(geom, sample.current_ia, sample.current_ia_dot, kq_mode)
    return kq * sample.current_ia * sample.omega


def aerodynamic_power(geom: RotorGeometry, sample: TelemetrySample, kq_mode: str = KQ_RATE) -> float:
    return (mechanical_power(geom, sample, kq_mode)
            - shaft_friction_power(geom, sample.omega, sample.omega_dot))


def cpam_measured(p_am: float, omega: float, omega_min: float = OMEGA_MIN) -> float:
    if omega <= omega_min:
        raise BelowMinimumSpeed(f"omega={omega:.3f} rad/s is at or below {omega_min} rad/s")
    return p_am / omega ** 3


def lambda_i_from_lambda_s(coef: AeroCoefficients, lambda_s: float) -> float:
    """Induced inflow from the quadratic obtained by equating the blade-element
    and momentum thrust coefficients.

    Both roots come from the cancellation-free form of the quadratic formula.
    The non-negative root is returned; if both are non-negative the smaller
    one wins.
    """
    a = coef.c4
    b = coef.c4 * lambda_s + coef.c1
    c = coef.c1 * (lambda_s - coef.c2)
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        raise NoRealRoot(f"negative discriminant {disc:.3e} at lambda_s={lambda_s}")
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    if q == 0.0:
        # b == 0 and c == 0: double root at zero
        return 0.0
    r1 = q / a
    r2 = c / q
    lo, hi = (r1, r2) if r1 <= r2 else (r2, r1)
    if lo >= 0.0:
        return lo
    if hi >= 0.0:
        return hi
    raise NoAdmissibleRoot(f"both induced-inflow roots negative at lambda_s={lambda_s}")


def ct_from_inflow(coef: AeroCoefficients, lambda_s: float, lambda_i: float) -> float:
    return coef.c1 * (coef.c2 - (lambda_s + lambda_i))


def kappa_from_ct(coef: AeroCoefficients, C_T: float) -> float:
    return coef.d0 + coef.d1 * C_T


def cpam_model(coef: AeroCoefficients, C_T: float, kappa: float, lambda_i: float,
               lambda_s: float) -> float:
    return coef.c3 + C_T * (kappa * lambda_i + lambda_s) * coef.c0


def static_thrust(C_T: float, omega: float, thrust_scale: float = 1.0) -> float:
    return thrust_scale * C_T * omega * omega


def solve_inflow(coef: AeroCoefficients, lambda_s: float) -> InflowSolution:
    """Forward chain: stream inflow -> induced inflow -> C_T -> kappa -> C_Pam."""
    lam_i = lambda_i_from_lambda_s(coef, lambda_s)
    C_T = ct_from_inflow(coef, lambda_s, lam_i)
    kappa = kappa_from_ct(coef, C_T)
    return InflowSolution(lambda_s, lam_i, C_T, kappa,
                          cpam_model(coef, C_T, kappa, lam_i, lambda_s))


def max_admissible_lambda_s(coef: AeroCoefficients) -> float:
    # Beyond c2 both induced-inflow roots are negative (windmilling).
    return coef.c2
