import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (BASE, baseline_c4, forward, full_scan_smallest_nonneg_root, quad_terms,
                     scan_smallest_nonneg_root)
from rotorthrust.aero import (
    BASELINE_GEOMETRY,
    KQ_CURRENT,
    KQ_RATE,
    AeroCoefficients,
    BelowMinimumSpeed,
    NoAdmissibleRoot,
    NoRealRoot,
    RotorGeometry,
    TelemetrySample,
    aerodynamic_power,
    cpam_measured,
    cpam_model,
    ct_from_inflow,
    kappa_from_ct,
    lambda_i_from_lambda_s,
    max_admissible_lambda_s,
    mechanical_power,
    shaft_friction_power,
    solve_inflow,
    static_thrust,
    torque_constant,
)

COEF = AeroCoefficients.baseline()


def test_baseline_coefficients():
    for name in ("c0", "c1", "c2", "c3", "d0", "d1"):
        assert getattr(COEF, name) == BASE[name]
    assert COEF.c4 == pytest.approx(baseline_c4(), rel=1e-15)
    assert COEF.c4 == pytest.approx(2.1148e-4, rel=1e-4)
    assert BASELINE_GEOMETRY.motor_Kq0 == BASE["Kq0"]
    assert BASELINE_GEOMETRY.motor_Kq1 == BASE["Kq1"]


def test_c4_follows_density():
    assert AeroCoefficients.baseline(rho=2.45).c4 == pytest.approx(2 * COEF.c4)


def test_from_geometry_c4_and_c0():
    g = RotorGeometry(radius_R=0.1)
    c = AeroCoefficients.from_geometry(g)
    assert c.c0 == 0.1
    assert c.c4 == pytest.approx(2 * 1.225 * math.pi * 0.01 * 0.01)
    assert c.c2 == g.tip_pitch_theta_tip


@pytest.mark.parametrize("kwargs", [
    dict(radius_R=0.0), dict(radius_R=0.1, blade_count_Nb=5),
    dict(radius_R=0.1, air_density_rho=0.0), dict(radius_R=0.1, rotor_inertia_Ir=-1.0),
])
def test_geometry_rejects(kwargs):
    with pytest.raises(ValueError):
        RotorGeometry(**kwargs)


@pytest.mark.parametrize("field", ["c1", "c3", "c4", "thrust_scale"])
def test_coefficients_must_be_positive(field):
    vals = dict(c0=0.07, c1=1e-5, c2=0.3, c3=1e-8, c4=1e-4, d0=4, d1=-1e5, thrust_scale=1.0)
    vals[field] = 0.0
    with pytest.raises(ValueError):
        AeroCoefficients(**vals)


def test_with_scale_keeps_the_rest():
    s = COEF.with_scale(0.5)
    assert s.thrust_scale == 0.5 and s.c1 == COEF.c1 and s.d1 == COEF.d1


# --- power balance ---------------------------------------------------------

def test_power_balance_hand_values():
    g = RotorGeometry(radius_R=0.1, rotor_inertia_Ir=1e-4, motor_Kq0=0.2, motor_Kq1=0.01)
    s = TelemetrySample(omega=100.0, omega_dot=50.0, current_ia=3.0, current_ia_dot=10.0)
    assert torque_constant(g, 3.0, 10.0, KQ_RATE) == pytest.approx(0.1)
    assert torque_constant(g, 3.0, 10.0, KQ_CURRENT) == pytest.approx(0.17)
    assert shaft_friction_power(g, 100.0, 50.0) == pytest.approx(0.5)
    assert mechanical_power(g, s, KQ_RATE) == pytest.approx(30.0)
    assert aerodynamic_power(g, s, KQ_RATE) == pytest.approx(29.5)
    assert aerodynamic_power(g, s, KQ_CURRENT) == pytest.approx(0.17 * 300 - 0.5)


def test_torque_constant_unknown_mode():
    with pytest.raises(ValueError):
        torque_constant(BASELINE_GEOMETRY, 1.0, 0.0, "bogus")


def test_cpam_measured():
    assert cpam_measured(8.0, 100.0) == pytest.approx(8e-6)
    with pytest.raises(BelowMinimumSpeed):
        cpam_measured(1.0, 50.0)
    with pytest.raises(BelowMinimumSpeed):
        cpam_measured(1.0, 10.0, omega_min=20.0)


# --- induced inflow --------------------------------------------------------

@pytest.mark.parametrize("ls", [-0.5, -0.2, 0.0, 0.05, 0.15, 0.29])
def test_induced_inflow_matches_full_grid_scan(ls):
    a, b, c = quad_terms(COEF.c1, COEF.c2, COEF.c4, ls)
    expected = full_scan_smallest_nonneg_root(a, b, c)
    assert lambda_i_from_lambda_s(COEF, ls) == pytest.approx(expected, abs=1e-6)


def test_two_stage_scan_equals_full_scan():
    rng = np.random.default_rng(5)
    for _ in range(4):
        c1 = COEF.c1 * rng.uniform(0.7, 1.3)
        c4 = COEF.c4 * rng.uniform(0.7, 1.3)
        ls = rng.uniform(-0.5, 0.29)
        a, b, c = quad_terms(c1, COEF.c2, c4, ls)
        assert scan_smallest_nonneg_root([a], [b], [c])[0] == pytest.approx(
            full_scan_smallest_nonneg_root(a, b, c), abs=2e-7)


def test_induced_inflow_zero_at_blade_pitch():
    assert lambda_i_from_lambda_s(COEF, COEF.c2) == pytest.approx(0.0, abs=1e-15)
    assert max_admissible_lambda_s(COEF) == COEF.c2


def test_windmilling_has_no_admissible_root():
    with pytest.raises(NoAdmissibleRoot):
        lambda_i_from_lambda_s(COEF, COEF.c2 + 0.05)


def test_negative_discriminant():
    # b^2 = 2.25 < 4ac = 10
    coef = AeroCoefficients(c0=0.07, c1=1.0, c2=-2.0, c3=1e-8, c4=1.0, d0=4, d1=-1e5)
    with pytest.raises(NoRealRoot) as info:
        lambda_i_from_lambda_s(coef, 0.5)
    assert not isinstance(info.value, NoAdmissibleRoot)


@settings(max_examples=300, deadline=None)
@given(ls=st.floats(-1.0, 0.2993), k1=st.floats(0.5, 2.0), k4=st.floats(0.5, 2.0))
def test_induced_inflow_is_a_nonnegative_root(ls, k1, k4):
    coef = AeroCoefficients(COEF.c0, COEF.c1 * k1, COEF.c2, COEF.c3, COEF.c4 * k4, COEF.d0, COEF.d1)
    li = lambda_i_from_lambda_s(coef, ls)
    a, b, c = quad_terms(coef.c1, coef.c2, coef.c4, ls)
    assert li >= 0
    assert abs(a * li * li + b * li + c) <= 1e-12 * max(abs(b), abs(c), 1e-300) + 1e-18
    assert li == pytest.approx(float(forward(ls, c1=coef.c1, c4=coef.c4)[0]), rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(ls=st.floats(-1.0, 0.2993))
def test_thrust_coefficient_equals_momentum_form(ls):
    # blade-element C_T and momentum C_T agree at the returned root
    sol = solve_inflow(COEF, ls)
    ct_momentum = COEF.c4 * (sol.lambda_s + sol.lambda_i) * sol.lambda_i
    assert sol.C_T == pytest.approx(ct_momentum, rel=1e-9, abs=1e-18)


# --- forward chain ---------------------------------------------------------

def test_forward_chain_pieces():
    ct = ct_from_inflow(COEF, 0.05, 0.1)
    assert ct == pytest.approx(COEF.c1 * (COEF.c2 - 0.15))
    assert kappa_from_ct(COEF, ct) == pytest.approx(COEF.d0 + COEF.d1 * ct)
    k = kappa_from_ct(COEF, ct)
    assert cpam_model(COEF, ct, k, 0.1, 0.05) == pytest.approx(COEF.c3 + ct * (k * 0.1 + 0.05) * COEF.c0)
    assert static_thrust(2e-5, 1000.0, 0.5) == pytest.approx(10.0)


@pytest.mark.parametrize("ls", np.linspace(-0.8, 0.29, 12).tolist())
def test_solve_inflow_matches_textbook_forward_model(ls):
    li, ct, cpam = forward(ls)
    sol = solve_inflow(COEF, ls)
    assert sol.lambda_i == pytest.approx(float(li), rel=1e-10)
    assert sol.C_T == pytest.approx(float(ct), rel=1e-9)
    assert sol.C_Pam == pytest.approx(float(cpam), rel=1e-9)


def test_power_coefficient_decreases_with_stream_inflow():
    ls = np.linspace(-1.0, COEF.c2, 2001)
    cpam = np.array([solve_inflow(COEF, x).C_Pam for x in ls])
    assert np.all(np.diff(cpam) < 0)
    assert cpam[-1] == pytest.approx(COEF.c3, rel=1e-9)


def test_thrust_falls_as_inflow_rises():
    cts = [solve_inflow(COEF, x).C_T for x in np.linspace(-0.5, COEF.c2, 50)]
    assert all(b < a for a, b in zip(cts, cts[1:]))
