"""Discontinuous Lyapunov-based tracking controller.

    u = D(q) zeta_ddot + C(q, dq) zeta_dot + G(q) - k_d * sw(sigma)

with ``zeta_dot = dq_d - Lambda (q - q_d)`` and ``sigma = dq - zeta_dot``.
``sw`` is the unit vector ``sigma / |sigma|`` or its boundary-layer
saturated version.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .dynamics import JointState, Manipulator, ManipulatorParams, model_for
from .errors import ConfigurationError, ControllerError, TheoremInapplicableError

__all__ = [
    "ControllerGains",
    "ReferenceSample",
    "ReferenceTrajectory",
    "SlidingTerms",
    "sliding_variable",
    "saturation",
    "switching_term",
    "control_law",
    "feedforward_torque",
    "lyapunov_value",
    "settling_bound",
]


@dataclass(frozen=True)
class ControllerGains:
    kd: float = 9.0
    lambda_gain: float = 3.0
    epsilon: float = 0.3
    delta: float = 1.5

    def __post_init__(self):
        if not self.kd > 0:
            raise ConfigurationError("kd must be positive")
        if not self.lambda_gain > 0:
            raise ConfigurationError("lambda_gain must be positive")
        if not self.epsilon >= 0:
            raise ConfigurationError("epsilon must be non-negative")
        if not self.delta >= 0:
            raise ConfigurationError("delta must be non-negative")

    @property
    def theorem_applies(self) -> bool:
        return self.kd > self.delta


class ReferenceSample(NamedTuple):
    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Desired joint position, velocity and acceleration as functions of time."""

    position: Callable[[float], np.ndarray]
    velocity: Callable[[float], np.ndarray]
    acceleration: Callable[[float], np.ndarray]

    def at(self, t: float) -> ReferenceSample:
        return ReferenceSample(
            np.asarray(self.position(t), dtype=float),
            np.asarray(self.velocity(t), dtype=float),
            np.asarray(self.acceleration(t), dtype=float),
        )

    @classmethod
    def sinusoid(
        cls,
        amplitude: Sequence[float] = (0.5, 0.5),
        frequency: Sequence[float] = (1.0, 1.0),
        phase: Sequence[float] = (0.0, math.pi / 2),
        offset: Sequence[float] = (0.0, 0.0),
    ) -> "ReferenceTrajectory":
        """``q_d(t) = offset + amplitude * sin(frequency * t + phase)`` per joint.

        The defaults give ``[0.5 sin t, 0.5 cos t]``.
        """
        a, w, p, c = (np.asarray(v, dtype=float) for v in (amplitude, frequency, phase, offset))
        if not (a.shape == w.shape == p.shape == c.shape) or a.ndim != 1:
            raise ConfigurationError("reference amplitude/frequency/phase/offset must share one length")
        return cls(
            lambda t: c + a * np.sin(w * t + p),
            lambda t: a * w * np.cos(w * t + p),
            lambda t: -a * w**2 * np.sin(w * t + p),
        )


class SlidingTerms(NamedTuple):
    sigma: np.ndarray
    zeta_dot: np.ndarray
    zeta_ddot: np.ndarray


def _lambda(gains) -> float:
    return gains.lambda_gain if isinstance(gains, ControllerGains) else float(gains)


def sliding_variable(est: JointState, ref: ReferenceSample, gains) -> SlidingTerms:
    """Sliding variable and reference velocity/acceleration for the estimate ``est``.

    ``gains`` is a :class:`ControllerGains` or the scalar Lambda gain.
    """
    lam = _lambda(gains)
    q_err = est.q - ref.q
    if q_err.shape != ref.dq.shape or est.dq.shape != ref.dq.shape:
        raise ConfigurationError("state and reference dimensions differ")
    zeta_dot = ref.dq - lam * q_err
    zeta_ddot = ref.ddq - lam * (est.dq - ref.dq)
    return SlidingTerms(est.dq - zeta_dot, zeta_dot, zeta_ddot)


def saturation(sigma, epsilon: float) -> np.ndarray:
    """Vector boundary layer: ``sigma/|sigma|`` outside radius ``epsilon``, ``sigma/epsilon`` inside."""
    sigma = np.asarray(sigma, dtype=float)
    if not epsilon > 0:
        raise ConfigurationError("saturation needs epsilon > 0")
    norm = float(np.linalg.norm(sigma))
    if norm >= epsilon:
        return sigma / norm
    return sigma / epsilon


def switching_term(sigma, epsilon: float) -> np.ndarray:
    """``saturation`` for ``epsilon > 0``; the bare unit vector (0 at the origin) otherwise."""
    sigma = np.asarray(sigma, dtype=float)
    if epsilon > 0:
        return saturation(sigma, epsilon)
    norm = float(np.linalg.norm(sigma))
    return sigma / norm if norm > 0 else np.zeros_like(sigma)


def _model(params) -> Manipulator:
    return params if isinstance(params, Manipulator) else model_for(params)


def feedforward_torque(params, est: JointState, terms: SlidingTerms) -> np.ndarray:
    model = _model(params)
    return (
        model.mass_matrix(est.q) @ terms.zeta_ddot
        + model.coriolis_matrix(est.q, est.dq) @ terms.zeta_dot
        + model.gravity_vector(est.q)
    )


def control_law(
    params: ManipulatorParams | Manipulator,
    est: JointState,
    ref: ReferenceSample,
    gains: ControllerGains,
) -> np.ndarray:
    terms = sliding_variable(est, ref, gains)
    u = feedforward_torque(params, est, terms) - gains.kd * switching_term(terms.sigma, gains.epsilon)
    if not np.all(np.isfinite(u)):
        raise ControllerError("controller produced a non-finite torque")
    return u


def lyapunov_value(params: ManipulatorParams | Manipulator, est, sigma) -> float:
    """``0.5 sigma^T D(q) sigma``; ``est`` is a joint state or an angle vector."""
    q = est.q if isinstance(est, JointState) else est
    sigma = np.asarray(sigma, dtype=float)
    return 0.5 * float(sigma @ _model(params).mass_matrix(q) @ sigma)


def settling_bound(gains, delta: float, lambda_max: float, sigma0_norm: float) -> float:
    """Upper bound on the time for ``sigma`` to reach zero.

    ``sqrt(2 lambda_max) |sigma0| / a`` with ``a = (k_d - delta) sqrt(2 / lambda_max)``,
    i.e. ``lambda_max |sigma0| / (k_d - delta)``.
    """
    kd = gains.kd if isinstance(gains, ControllerGains) else float(gains)
    kd_hat = kd - delta
    if not kd_hat > 0:
        raise TheoremInapplicableError(f"k_d = {kd} does not exceed the disturbance bound {delta}")
    rate = kd_hat * math.sqrt(2.0 / lambda_max)
    return math.sqrt(2.0 * lambda_max) * sigma0_norm / rate
