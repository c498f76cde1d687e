"""Scenario configuration: a flat YAML mapping with documented keys.

Every omitted key takes its default; the defaults reproduce the published
two-link experiment (link parameters, filter tuning, sample time, noise
levels and controller gains).  Unknown keys, wrong types and violated
invariants raise :class:`ConfigError` naming the key and, when parsing text,
its line.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from typing import Any, Mapping, Optional

import numpy as np
import yaml

from .control import ControllerGains, ReferenceTrajectory
from .dynamics import ManipulatorParams
from .errors import ConfigurationError
from .estimation import ArekfTuning

__all__ = ["ConfigError", "ScenarioConfig", "parse_config", "render_config", "load_config", "apply_overrides"]


class ConfigError(ConfigurationError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        where = ""
        if key is not None:
            where = f"key '{key}'"
            if line is not None:
                where += f" (line {line})"
            where += ": "
        super().__init__(where + message)
        self.key = key
        self.line = line


FILTERS = ("ekf", "arekf", "both")
SOURCES = ("ekf", "arekf", "true")
PROFILES = ("constant", "sine")
INTEGRATORS = ("rk4", "euler")

_PER_JOINT = (
    "masses",
    "inertias",
    "lengths",
    "com_offsets",
    "mass_perturbation",
    "inertia_perturbation",
    "length_perturbation",
    "com_perturbation",
    "disturbance",
    "ref_amplitude",
    "ref_frequency",
    "ref_phase",
    "ref_offset",
)
_PER_STATE = ("x0", "belief_mean")

# config key -> dataclass field, where they differ
_KEY_TO_FIELD = {"lambda": "lam"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}


@dataclass(frozen=True)
class ScenarioConfig:
    # plant
    masses: tuple = (1.0, 1.0)
    inertias: tuple = (0.25, 0.25)
    lengths: tuple = (0.5, 0.5)
    com_offsets: tuple = (0.25, 0.25)
    g0: float = 9.81
    # timing
    ts: float = 0.005
    duration: float = 10.0
    integrator: str = "rk4"
    # noise (scalar multiples of the identity)
    process_noise_true: float = 1e-5
    measurement_noise_true: float = 1e-3
    process_noise_filter: float = 1e-9
    measurement_noise_filter: float = 1e-1
    # filter-model parameter errors, multiplicative
    mass_perturbation: tuple = (0.1, 0.1)
    inertia_perturbation: tuple = (0.0, 0.0)
    length_perturbation: tuple = (0.0, 0.0)
    com_perturbation: tuple = (0.0, 0.0)
    # disturbance torque d(t) and its declared bound
    disturbance: tuple = (1.0, 1.0)
    disturbance_profile: str = "constant"
    disturbance_frequency: float = 1.0
    delta: float = 1.5
    # reference q_d(t) = offset + amplitude * sin(frequency t + phase)
    ref_amplitude: tuple = (0.5, 0.5)
    ref_frequency: tuple = (1.0, 1.0)
    ref_phase: tuple = (0.0, math.pi / 2)
    ref_offset: tuple = (0.0, 0.0)
    # controller
    kd: float = 9.0
    lambda_gain: float = 3.0
    epsilon: float = 0.3
    controller_source: str = "arekf"
    # filters
    filter: str = "both"
    alpha: float = 0.9
    rho: float = 0.97
    gamma: float = 0.001
    lam: float = 0.7
    gamma_exponent: float = 1.0
    branch_test: str = "trace"
    max_doublings: int = 10
    analytic_jacobians: bool = True
    # initial conditions
    x0: tuple = (0.4, -0.3, 0.0, 0.0)
    belief_mean: tuple = (0.0, 0.0, 0.0, 0.0)
    belief_cov: float = 0.1
    # bookkeeping
    seed: int = 0
    transient_fraction: float = 0.1
    divergence_threshold: float = 1e6

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            key = _FIELD_TO_KEY.get(f.name, f.name)
            if f.type == "tuple":
                if isinstance(value, (str, bytes)) or not hasattr(value, "__iter__"):
                    raise ConfigError("expected a list of numbers", key)
                try:
                    value = tuple(float(_lenient_float(v)) for v in value)
                except (TypeError, ValueError):
                    raise ConfigError("expected a list of numbers", key) from None
                if not all(math.isfinite(v) for v in value):
                    raise ConfigError("values must be finite", key)
            elif f.type == "float":
                value = _lenient_float(value)
                if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
                    raise ConfigError("expected a number", key)
                value = float(value)
                if math.isnan(value):
                    raise ConfigError("value must not be NaN", key)
            elif f.type == "int":
                if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                    raise ConfigError("expected an integer", key)
                value = int(value)
            elif f.type == "bool":
                if not isinstance(value, bool):
                    raise ConfigError("expected true or false", key)
            elif f.type == "str":
                if not isinstance(value, str):
                    raise ConfigError("expected a string", key)
            object.__setattr__(self, f.name, value)
        self._validate()

    def _validate(self):
        n = len(self.masses)
        for name in _PER_JOINT:
            if len(getattr(self, name)) != n:
                raise ConfigError(f"expected {n} entries (one per joint)", name)
        for name in _PER_STATE:
            if len(getattr(self, name)) != 2 * n:
                raise ConfigError(f"expected {2 * n} entries (angles then velocities)", name)
        choices = {
            "filter": FILTERS,
            "controller_source": SOURCES,
            "disturbance_profile": PROFILES,
            "integrator": INTEGRATORS,
            "branch_test": ("trace", "eigen"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"must be one of {', '.join(allowed)}", name)
        checks = [
            ("ts", self.ts > 0 and math.isfinite(self.ts), "must be positive"),
            ("duration", self.duration >= self.ts and math.isfinite(self.duration), "must be at least ts"),
            ("process_noise_true", self.process_noise_true >= 0, "must be non-negative"),
            ("measurement_noise_true", self.measurement_noise_true >= 0, "must be non-negative"),
            ("process_noise_filter", self.process_noise_filter >= 0, "must be non-negative"),
            ("measurement_noise_filter", self.measurement_noise_filter > 0, "must be positive"),
            ("belief_cov", self.belief_cov > 0, "must be positive"),
            ("delta", self.delta >= 0, "must be non-negative"),
            ("epsilon", self.epsilon >= 0, "must be non-negative"),
            ("lambda_gain", self.lambda_gain > 0, "must be positive"),
            ("transient_fraction", 0 <= self.transient_fraction < 1, "must lie in [0, 1)"),
            ("divergence_threshold", self.divergence_threshold > 0, "must be positive"),
            ("seed", self.seed >= 0, "must be non-negative"),
        ]
        for key, ok, message in checks:
            if not ok:
                raise ConfigError(message, key)
        if not self.kd > self.delta:
            raise ConfigError("k_d must exceed delta", "kd")
        if self.controller_source != "true" and self.filter not in (self.controller_source, "both"):
            raise ConfigError(f"filter '{self.filter}' does not run '{self.controller_source}'", "controller_source")
        try:
            self.tuning()
        except ConfigurationError as exc:
            raise ConfigError(str(exc), _tuning_key(str(exc))) from None
        try:
            self.params()
            self.filter_params()
        except ConfigurationError as exc:
            raise ConfigError(str(exc), "masses") from None

    # -- derived objects -----------------------------------------------------
    def params(self) -> ManipulatorParams:
        return ManipulatorParams(self.masses, self.inertias, self.lengths, self.com_offsets, self.g0)

    def filter_params(self) -> ManipulatorParams:
        return self.params().scaled(
            self.mass_perturbation, self.inertia_perturbation, self.length_perturbation, self.com_perturbation
        )

    def tuning(self) -> ArekfTuning:
        return ArekfTuning(
            self.alpha, self.rho, self.gamma, self.lam, self.gamma_exponent, self.branch_test, self.max_doublings
        )

    def gains(self) -> ControllerGains:
        return ControllerGains(self.kd, self.lambda_gain, self.epsilon, self.delta)

    def reference(self) -> ReferenceTrajectory:
        return ReferenceTrajectory.sinusoid(self.ref_amplitude, self.ref_frequency, self.ref_phase, self.ref_offset)

    def disturbance_at(self, t: float) -> np.ndarray:
        d = np.asarray(self.disturbance)
        if self.disturbance_profile == "sine":
            return d * math.sin(self.disturbance_frequency * t)
        return d.copy()

    @property
    def n_steps(self) -> int:
        """Number of trace records, ``floor(duration / ts) + 1``."""
        return int(math.floor(self.duration / self.ts + 1e-9)) + 1

    def with_overrides(self, **overrides) -> "ScenarioConfig":
        return apply_overrides(self, overrides)

    def to_mapping(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[_FIELD_TO_KEY.get(f.name, f.name)] = list(value) if isinstance(value, tuple) else value
        return out


def _lenient_float(value):
    # YAML 1.1 reads "1e-5" (no dot) as a string
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _tuning_key(message: str) -> str:
    for key in ("alpha", "rho", "gamma", "lambda", "branch_test", "max_doublings"):
        if message.startswith(key):
            return key
    return "alpha"


VALID_KEYS = frozenset(_FIELD_TO_KEY.get(f.name, f.name) for f in fields(ScenarioConfig))


def _key_lines(text: str) -> dict:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return {}
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value if isinstance(k, yaml.ScalarNode)}


def _from_mapping(mapping: Mapping[str, Any], lines: Optional[dict] = None, base: Optional[ScenarioConfig] = None):
    lines = lines or {}
    kwargs = {}
    for key, value in mapping.items():
        if key not in VALID_KEYS:
            raise ConfigError("unknown key", str(key), lines.get(key))
        kwargs[_KEY_TO_FIELD.get(key, key)] = value
    try:
        if base is None:
            return ScenarioConfig(**kwargs)
        return dataclasses.replace(base, **kwargs)
    except ConfigError as exc:
        if exc.line is None and exc.key in lines:
            raise ConfigError(str(exc).split(": ", 1)[-1], exc.key, lines[exc.key]) from None
        raise


def parse_config(text: str) -> ScenarioConfig:
    """Parse a YAML configuration document; an empty document gives the defaults."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed document: {exc}", None, None if mark is None else mark.line + 1) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping of keys to values")
    return _from_mapping(data, _key_lines(text))


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def render_config(config: ScenarioConfig) -> str:
    return yaml.safe_dump(config.to_mapping(), sort_keys=False, default_flow_style=None)


def apply_overrides(config: ScenarioConfig, overrides: Mapping[str, Any]) -> ScenarioConfig:
    """Replace keys of ``config``; string values are parsed as YAML scalars/lists."""
    parsed = {}
    for key, value in overrides.items():
        if isinstance(value, str):
            try:
                value = yaml.safe_load(value)
            except yaml.YAMLError:
                raise ConfigError("value is not valid YAML", key) from None
        parsed[key] = value
    return _from_mapping(parsed, base=config)
