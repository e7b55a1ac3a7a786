"""Model-based rotor thrust estimation and thrust control."""
from .aero import (
    BASELINE_GEOMETRY,
    AeroCoefficients,
    InflowSolution,
    RotorGeometry,
    TelemetrySample,
    solve_inflow,
)
from .controller import PRESETS, ControllerState, PidGains, control_step, static_map
from .estimator import EstimatorConfig, EstimatorState, RotorEstimator, ThrustEstimate, estimate_step

__version__ = "0.1.0"

__all__ = [
    "BASELINE_GEOMETRY", "AeroCoefficients", "InflowSolution", "RotorGeometry", "TelemetrySample",
    "solve_inflow", "PRESETS", "ControllerState", "PidGains", "control_step", "static_map",
    "EstimatorConfig", "EstimatorState", "RotorEstimator", "ThrustEstimate", "estimate_step",
]
