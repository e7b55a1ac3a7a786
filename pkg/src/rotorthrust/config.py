"""Experiment configuration: one INI file, every key known in advance.

Example::

    [experiment]
    preset = 250mm
    seed = 7
    trials = 16

    [disturbance]
    wind_levels = 3.05, 4.8

Unknown sections or keys are rejected with the offending line number.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .aero import KQ_CURRENT, KQ_RATE, AeroCoefficients
from .controller import PRESETS, PidGains
from .estimator import EstimatorConfig
from .sim import PLATFORMS, Platform

METHODS = ("thrust-control", "static-map")
PROFILES = ("hover", "steps", "sine", "step")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "250mm"
    seed: int = 1
    trials: int = 16
    rate_hz: float = 500.0
    duration_s: float = 20.0
    warmup_s: float = 15.0
    methods: tuple = METHODS
    workers: int = 0                     # 0 = one per CPU

    # estimator
    max_iterations: int = 20
    initial_offset: float = 0.1
    eps: float = 1e-5
    omega_min: float = 50.0
    kq_mode: str = KQ_CURRENT

    # controller gain overrides (None = preset value)
    gains_preset: str | None = None
    Kff: float | None = None
    Kp: float | None = None
    Ki: float | None = None
    Kd: float | None = None

    # rotor / coefficient / plant overrides
    rotor: dict = field(default_factory=dict)
    coefficients: dict = field(default_factory=dict)
    plant: dict = field(default_factory=dict)

    # disturbance
    wind_levels: tuple = (3.05,)
    wind_mean_ratio: float = 0.5
    gust_ratio: float = 0.5
    gust_tau: float = 1.0
    current_noise: float = 0.0
    speed_noise: float = 0.0
    voltage_sag_rate: float = 2.0 / 7200.0
    initial_voltage_min: float = 15.4
    initial_voltage_max: float = 16.8

    profiles: tuple = ("steps", "sine")

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(self.max_iterations, self.initial_offset, self.eps,
                               self.omega_min, self.kq_mode)

    def gains(self) -> PidGains:
        base = PRESETS[self.gains_preset or self.preset]
        overrides = {k: getattr(self, k) for k in ("Kff", "Kp", "Ki", "Kd") if getattr(self, k) is not None}
        return replace(base, **overrides)

    def platform(self) -> Platform:
        pf = PLATFORMS[self.preset]
        geom = replace(pf.geometry, **self.rotor) if self.rotor else pf.geometry
        changes = dict(self.plant)
        if "thrust_scale" in self.coefficients:
            changes["thrust_scale"] = self.coefficients["thrust_scale"]
        return replace(pf, geometry=geom, gains=self.gains(), **changes)

    def coefficients_obj(self) -> AeroCoefficients:
        pf = self.platform()
        base = pf.coefficients()
        return replace(base, **self.coefficients) if self.coefficients else base


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _words(text: str) -> tuple:
    return tuple(x.strip() for x in text.split(",") if x.strip())


# section -> key -> (attribute, parser)
_SCHEMA = {
    "experiment": {
        "preset": ("preset", str), "seed": ("seed", int), "trials": ("trials", int),
        "rate_hz": ("rate_hz", float), "duration_s": ("duration_s", float),
        "warmup_s": ("warmup_s", float), "methods": ("methods", _words),
        "workers": ("workers", int),
    },
    "estimator": {
        "max_iterations": ("max_iterations", int), "initial_offset": ("initial_offset", float),
        "eps": ("eps", float), "omega_min": ("omega_min", float), "kq_mode": ("kq_mode", str),
    },
    "controller": {
        "preset": ("gains_preset", str), "kff": ("Kff", float), "kp": ("Kp", float),
        "ki": ("Ki", float), "kd": ("Kd", float),
    },
    "disturbance": {
        "wind_levels": ("wind_levels", _floats), "wind_mean_ratio": ("wind_mean_ratio", float),
        "gust_ratio": ("gust_ratio", float), "gust_tau": ("gust_tau", float),
        "current_noise": ("current_noise", float), "speed_noise": ("speed_noise", float),
        "voltage_sag_rate": ("voltage_sag_rate", float),
        "initial_voltage_min": ("initial_voltage_min", float),
        "initial_voltage_max": ("initial_voltage_max", float),
    },
    "profiles": {"names": ("profiles", _words)},
}

_ROTOR_KEYS = {
    "radius": ("radius_R", float), "blade_count": ("blade_count_Nb", int),
    "tip_chord": ("tip_chord_c_tip", float), "tip_pitch": ("tip_pitch_theta_tip", float),
    "lift_slope": ("lift_slope_Cl_alpha", float), "profile_drag": ("profile_drag_Cd0", float),
    "air_density": ("air_density_rho", float), "inertia": ("rotor_inertia_Ir", float),
    "kq0": ("motor_Kq0", float), "kq1": ("motor_Kq1", float),
}
_COEF_KEYS = {k: (k, float) for k in ("c0", "c1", "c2", "c3", "c4", "d0", "d1", "thrust_scale")}
_PLANT_KEYS = {
    "kv": ("kv_rating", float), "supply_voltage": ("supply_voltage", float),
    "resistance": ("resistance", float), "tau_m": ("time_constant_tau_m", float),
}
_NESTED = {"rotor": _ROTOR_KEYS, "coefficients": _COEF_KEYS, "plant": _PLANT_KEYS}


def _line_of(lines, section, key=None):
    current = None
    for n, raw in enumerate(lines, 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip().lower()
            if key is None and current == section:
                return n
            continue
        if current == section and key is not None:
            name = s.split("=", 1)[0].split(":", 1)[0].strip().lower()
            if name == key:
                return n
    return 0


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    lines = text.splitlines()
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    if cp.defaults():
        raise ConfigError(f"{source}: keys outside a section are not allowed")
    values = {}
    for section in cp.sections():
        sec = section.lower()
        if sec in _SCHEMA:
            schema, nested = _SCHEMA[sec], None
        elif sec in _NESTED:
            schema, nested = _NESTED[sec], values.setdefault(sec, {})
        else:
            raise ConfigError(f"{source}:{_line_of(lines, sec)}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in schema:
                raise ConfigError(f"{source}:{_line_of(lines, sec, key)}: unknown key "
                                  f"'{key}' in [{section}]")
            attr, parse = schema[key]
            try:
                value = parse(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{source}:{_line_of(lines, sec, key)}: bad value for "
                                  f"'{key}' in [{section}]: {raw!r}") from exc
            if nested is None:
                values[attr] = value
            else:
                nested[attr] = value
    cfg = ExperimentConfig(**values)
    validate(cfg, source, lines)
    return cfg


def validate(cfg: ExperimentConfig, source: str = "<config>", lines=()) -> None:
    def fail(section, key, msg):
        line = _line_of(lines, section, key)
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: [{section}] {key}: {msg}")

    if cfg.preset not in PLATFORMS:
        fail("experiment", "preset", f"must be one of {sorted(PLATFORMS)}")
    if cfg.gains_preset is not None and cfg.gains_preset not in PRESETS:
        fail("controller", "preset", f"must be one of {sorted(PRESETS)}")
    if cfg.trials < 1:
        fail("experiment", "trials", "must be >= 1")
    if not 100.0 <= cfg.rate_hz <= 2000.0:
        fail("experiment", "rate_hz", "must be in [100, 2000]")
    if cfg.duration_s <= 0 or cfg.warmup_s < 0:
        fail("experiment", "duration_s", "durations must be positive")
    bad = [m for m in cfg.methods if m not in METHODS]
    if bad or not cfg.methods:
        fail("experiment", "methods", f"must be drawn from {METHODS}")
    if cfg.kq_mode not in (KQ_RATE, KQ_CURRENT):
        fail("estimator", "kq_mode", f"must be '{KQ_RATE}' or '{KQ_CURRENT}'")
    bad = [p for p in cfg.profiles if p not in PROFILES]
    if bad or not cfg.profiles:
        fail("profiles", "names", f"must be drawn from {PROFILES}")
    if not cfg.wind_levels:
        fail("disturbance", "wind_levels", "at least one level required")
    if cfg.initial_voltage_min > cfg.initial_voltage_max:
        fail("disturbance", "initial_voltage_min", "exceeds initial_voltage_max")
    try:
        cfg.estimator_config()
        cfg.platform()
        cfg.coefficients_obj()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(text, str(path))


def with_overrides(cfg: ExperimentConfig, **kwargs) -> ExperimentConfig:
    changes = {k: v for k, v in kwargs.items() if v is not None}
    if not changes:
        return cfg
    new = replace(cfg, **changes)
    validate(new, "command line")
    return new


def to_ini(cfg: ExperimentConfig) -> str:
    """Render a config back to INI (only non-default values)."""
    default = ExperimentConfig()
    out = []
    for section, schema in _SCHEMA.items():
        body = []
        for key, (attr, _) in schema.items():
            value = getattr(cfg, attr)
            if value == getattr(default, attr):
                continue
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            body.append(f"{key} = {value}")
        if body:
            out += [f"[{section}]"] + body + [""]
    for section, keys in _NESTED.items():
        data = getattr(cfg, section)
        body = [f"{k} = {data[attr]!r}" for k, (attr, _) in keys.items() if attr in data]
        if body:
            out += [f"[{section}]"] + body + [""]
    return "\n".join(out)


__all__ = ["ConfigError", "ExperimentConfig", "METHODS", "PROFILES", "load_config",
           "parse_config", "validate", "with_overrides", "to_ini"]
