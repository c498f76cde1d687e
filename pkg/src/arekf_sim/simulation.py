"""Seeded closed-loop experiment: plant, noise, filters, controller, metrics.

Per sample ``k`` (time ``k * ts``):

1. measure ``y_k = x_k + r_k``;
2. run the enabled filters (update only at ``k = 0``, predict + update after);
3. compute ``u_k`` from the controller's designated state source;
4. advance the plant one sample with ``u_k`` and ``d(t_k)`` held, then add
   discrete process noise ``w_k``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .config import ScenarioConfig
from .control import control_law, lyapunov_value, sliding_variable
from .dynamics import JointState, Manipulator, model_for
from .errors import ArekfSimError, ConfigurationError, SimulationBlowUp
from .estimation import (
    AdaptiveRobustEKF,
    ExtendedKalmanFilter,
    GaussianBelief,
    NonlinearModel,
)

log = logging.getLogger(__name__)

__all__ = [
    "plant_step",
    "build_filter_model",
    "SimTrace",
    "MetricsReport",
    "FilterMetrics",
    "run_scenario",
    "compute_metrics",
    "settling_time",
    "lyapunov_decrease_margins",
]


def _state_derivative(model: Manipulator, x: np.ndarray, u, d) -> np.ndarray:
    n = model.n
    return np.concatenate([x[n:], model.forward_dynamics(x[:n], x[n:], u, d)])


def plant_step(params, state, u, d, ts: float, integrator: str = "rk4", step: Optional[int] = None):
    """Advance the continuous dynamics by ``ts`` with torque and disturbance held constant.

    ``state`` may be a :class:`JointState` (returned as such) or a stacked
    ``[q, dq]`` vector.
    """
    if not ts > 0:
        raise ConfigurationError("ts must be positive")
    model = params if isinstance(params, Manipulator) else model_for(params)
    as_joint = isinstance(state, JointState)
    x = state.as_vector() if as_joint else np.asarray(state, dtype=float)
    if integrator not in ("rk4", "euler"):
        raise ConfigurationError(f"unknown integrator {integrator!r}")
    try:
        if integrator == "rk4":
            k1 = _state_derivative(model, x, u, d)
            k2 = _state_derivative(model, x + 0.5 * ts * k1, u, d)
            k3 = _state_derivative(model, x + 0.5 * ts * k2, u, d)
            k4 = _state_derivative(model, x + ts * k3, u, d)
            x_next = x + (ts / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            x_next = x + ts * _state_derivative(model, x, u, d)
    except (ArithmeticError, ValueError) as exc:
        # math.cos(inf) raises ValueError
        if isinstance(exc, ConfigurationError):
            raise
        raise SimulationBlowUp(f"plant integration failed: {exc}", step) from exc
    if not np.all(np.isfinite(x_next)):
        raise SimulationBlowUp("plant state became non-finite", step)
    return JointState.from_vector(x_next) if as_joint else x_next


def build_filter_model(config: ScenarioConfig) -> NonlinearModel:
    """Euler-discretized dynamics with the perturbed parameters; full-state measurement.

    The disturbance torque is deliberately not part of this model.
    """
    model = model_for(config.filter_params())
    n = model.n
    ts = config.ts
    eye = np.eye(2 * n)

    def f(x, u):
        x = np.asarray(x, dtype=float)
        return x + ts * _state_derivative(model, x, u, None)

    def F(x, u):
        x = np.asarray(x, dtype=float)
        a_q, a_dq = model.forward_dynamics_jacobian(x[:n], x[n:], u)
        J = eye.copy()
        J[:n, n:] += ts * np.eye(n)
        J[n:, :n] += ts * a_q
        J[n:, n:] += ts * a_dq
        return J

    analytic = config.analytic_jacobians
    return NonlinearModel(
        f=f,
        g=lambda x: np.array(x, dtype=float),
        Q=config.process_noise_filter * eye,
        R=config.measurement_noise_filter * eye,
        F=F if analytic else None,
        G=(lambda x: eye) if analytic else None,
    )


@dataclass
class SimTrace:
    """Per-sample records of one run; arrays have one row per sample."""

    t: np.ndarray
    x_true: np.ndarray
    y: np.ndarray
    q_ref: np.ndarray
    dq_ref: np.ndarray
    estimates: dict
    covariance_diag: dict
    innovations: dict
    nees: dict
    robust: np.ndarray
    sigma: np.ndarray
    sigma_true: np.ndarray
    u: np.ndarray
    d: np.ndarray
    V: np.ndarray
    diverged: bool = False
    failed_step: Optional[int] = None
    error: Optional[str] = None

    def __len__(self):
        return len(self.t)

    def truncated(self, count: int) -> "SimTrace":
        cut = lambda a: a[:count]  # noqa: E731
        return SimTrace(
            self.t[:count],
            self.x_true[:count],
            self.y[:count],
            self.q_ref[:count],
            self.dq_ref[:count],
            {k: cut(v) for k, v in self.estimates.items()},
            {k: cut(v) for k, v in self.covariance_diag.items()},
            {k: cut(v) for k, v in self.innovations.items()},
            {k: cut(v) for k, v in self.nees.items()},
            self.robust[:count],
            self.sigma[:count],
            self.sigma_true[:count],
            self.u[:count],
            self.d[:count],
            self.V[:count],
            self.diverged,
            self.failed_step,
            self.error,
        )


@dataclass
class FilterMetrics:
    rmse: list
    nees: float


@dataclass
class MetricsReport:
    filters: dict
    tracking_rmse: list
    settling_time: Optional[float]
    reach_time: Optional[float]
    settled: bool
    max_abs_u: float
    diverged: bool
    failed_step: Optional[int] = None
    robust_fraction: Optional[float] = None
    sigma0_norm: float = 0.0
    window_start: float = 0.0
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


def _filters_for(config: ScenarioConfig) -> list:
    return ["ekf", "arekf"] if config.filter == "both" else [config.filter]


def run_scenario(config: ScenarioConfig) -> tuple[SimTrace, MetricsReport]:
    """Run one seeded experiment; on blow-up the partial trace carries the divergence flag."""
    plant = model_for(config.params())
    n = plant.n
    nx = 2 * n
    N = config.n_steps
    ts = config.ts
    rng = np.random.default_rng(config.seed)
    sq_w = math.sqrt(config.process_noise_true)
    sq_r = math.sqrt(config.measurement_noise_true)
    reference = config.reference()
    gains = config.gains()

    fmodel = build_filter_model(config)
    prior = GaussianBelief(np.asarray(config.belief_mean), config.belief_cov * np.eye(nx))
    names = _filters_for(config)
    filters = {}
    for name in names:
        if name == "ekf":
            filters[name] = ExtendedKalmanFilter(fmodel, prior)
        else:
            filters[name] = AdaptiveRobustEKF(fmodel, prior, config.tuning())

    nan = lambda *shape: np.full(shape, np.nan)  # noqa: E731
    trace = SimTrace(
        t=ts * np.arange(N),
        x_true=nan(N, nx),
        y=nan(N, nx),
        q_ref=nan(N, n),
        dq_ref=nan(N, n),
        estimates={k: nan(N, nx) for k in names},
        covariance_diag={k: nan(N, nx) for k in names},
        innovations={k: nan(N, nx) for k in names},
        nees={k: nan(N) for k in names},
        robust=np.zeros(N, dtype=bool),
        sigma=nan(N, n),
        sigma_true=nan(N, n),
        u=nan(N, n),
        d=nan(N, n),
        V=nan(N),
    )

    x = np.asarray(config.x0, dtype=float)
    u_prev = np.zeros(n)
    k = 0
    try:
        for k in range(N):
            t = trace.t[k]
            r = sq_r * rng.standard_normal(nx)
            w = sq_w * rng.standard_normal(nx)
            y = x + r
            trace.x_true[k] = x
            trace.y[k] = y
            for name, filt in filters.items():
                belief = filt.correct(y) if k == 0 else filt.step(u_prev, y)
                trace.estimates[name][k] = belief.mean
                trace.covariance_diag[name][k] = np.diag(belief.cov)
                trace.innovations[name][k] = filt.innovation
                trace.nees[name][k] = belief.nees(x)
                if np.linalg.norm(belief.mean) > config.divergence_threshold:
                    raise SimulationBlowUp(f"{name} estimate exceeded the divergence threshold", k)
            if "arekf" in filters:
                trace.robust[k] = filters["arekf"].last_prior.robust

            ref = reference.at(t)
            trace.q_ref[k] = ref.q
            trace.dq_ref[k] = ref.dq
            true_state = JointState.from_vector(x)
            if config.controller_source == "true":
                est = true_state
            else:
                est = JointState.from_vector(trace.estimates[config.controller_source][k])
            u = control_law(plant, est, ref, gains)
            sigma = sliding_variable(est, ref, gains).sigma
            trace.sigma[k] = sigma
            trace.sigma_true[k] = sliding_variable(true_state, ref, gains).sigma
            trace.V[k] = lyapunov_value(plant, est, sigma)
            d = config.disturbance_at(t)
            trace.u[k] = u
            trace.d[k] = d

            if k + 1 < N:
                x = plant_step(plant, x, u, d, ts, config.integrator, step=k) + w
                if np.linalg.norm(x) > config.divergence_threshold:
                    raise SimulationBlowUp("plant state exceeded the divergence threshold", k + 1)
                u_prev = u
    except ArekfSimError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        step = getattr(exc, "step", None)
        step = k if step is None else step
        log.warning("scenario diverged at step %d: %s", step, exc)
        trace = trace.truncated(step)
        trace.diverged = True
        trace.failed_step = step
        trace.error = str(exc)

    return trace, compute_metrics(trace, config)


def settling_time(t: np.ndarray, sigma: np.ndarray, epsilon: float) -> tuple[Optional[float], Optional[float]]:
    """``(reach, settle)``: first entry into ``|sigma| <= epsilon`` and entry after which it stays."""
    if len(t) == 0:
        return None, None
    inside = np.linalg.norm(sigma, axis=1) <= epsilon
    if not inside.any():
        return None, None
    reach = float(t[np.argmax(inside)])
    if not inside[-1]:
        return reach, None
    outside = np.flatnonzero(~inside)
    settle = float(t[0]) if outside.size == 0 else float(t[outside[-1] + 1])
    return reach, settle


def lyapunov_decrease_margins(trace: SimTrace, ts: float, kd_hat: float, epsilon: float) -> np.ndarray:
    """Per-step slack of ``dV/dt <= -kd_hat |sigma|`` for steps starting outside the layer.

    ``dV/dt`` is the one-step difference ``(V[k+1] - V[k]) / ts`` and the
    right-hand side is integrated over the step with the trapezoid rule.
    Negative entries are violations.
    """
    norm = np.linalg.norm(trace.sigma, axis=1)
    dV = np.diff(trace.V) / ts
    rhs = -kd_hat * 0.5 * (norm[:-1] + norm[1:])
    outside = norm[:-1] > epsilon
    return (rhs - dV)[outside]


def compute_metrics(trace: SimTrace, config: ScenarioConfig) -> MetricsReport:
    N = len(trace)
    start = int(config.transient_fraction * N)
    window = slice(start, N)
    filters = {}
    for name, est in trace.estimates.items():
        err = est[window] - trace.x_true[window]
        rmse = np.sqrt(np.mean(err**2, axis=0)) if N > start else np.full(est.shape[1], np.nan)
        nees = float(np.mean(trace.nees[name][window])) if N > start else float("nan")
        filters[name] = FilterMetrics([float(v) for v in rmse], nees)
    n = trace.q_ref.shape[1]
    if N > start:
        track = np.sqrt(np.mean((trace.x_true[window, :n] - trace.q_ref[window]) ** 2, axis=0))
    else:
        track = np.full(n, np.nan)
    eps = config.epsilon if config.epsilon > 0 else 1e-3
    reach, settle = settling_time(trace.t, trace.sigma, eps)
    robust_fraction = float(np.mean(trace.robust)) if "arekf" in trace.estimates and N else None
    return MetricsReport(
        filters=filters,
        tracking_rmse=[float(v) for v in track],
        settling_time=settle,
        reach_time=reach,
        settled=settle is not None,
        max_abs_u=float(np.max(np.abs(trace.u))) if N else 0.0,
        diverged=trace.diverged,
        failed_step=trace.failed_step,
        robust_fraction=robust_fraction,
        sigma0_norm=float(np.linalg.norm(trace.sigma[0])) if N else 0.0,
        window_start=float(trace.t[start]) if N > start else float("nan"),
        error=trace.error,
    )
