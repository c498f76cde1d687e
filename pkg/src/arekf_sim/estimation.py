"""Discrete-time nonlinear Gaussian filters: EKF and adaptive robust EKF.

Both filters work on a :class:`NonlinearModel`

    x_k = f(x_{k-1}, u_{k-1}) + w_{k-1},   w ~ N(0, Q)
    y_k = g(x_k) + r_k,                    r ~ N(0, R)

and exchange :class:`GaussianBelief` values.  The robust filter keeps a
running estimate of the real innovation covariance and, whenever the
predicted innovation covariance falls short of ``alpha`` times that estimate,
replaces the prior covariance by an inflated matrix ``Xi`` before the
measurement update.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, FilterDivergenceError, NumericError, TuningError

log = logging.getLogger(__name__)

__all__ = [
    "NonlinearModel",
    "GaussianBelief",
    "ArekfTuning",
    "InnovationStats",
    "RobustPrior",
    "numeric_jacobian",
    "psd_sqrt",
    "ekf_predict",
    "ekf_update",
    "update_innovation_stats",
    "robust_prior",
    "arekf_predict",
    "arekf_update",
    "ExtendedKalmanFilter",
    "AdaptiveRobustEKF",
]


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def numeric_jacobian(fun: Callable, x, step=None) -> np.ndarray:
    """Central-difference Jacobian of ``fun`` at ``x``.

    ``step`` may be a scalar or per-component array; the default is
    ``1e-6 * max(1, |x_i|)``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if step is None:
        h = 1e-6 * np.maximum(1.0, np.abs(x))
    else:
        h = np.broadcast_to(np.asarray(step, dtype=float), x.shape)
        if np.any(h <= 0):
            raise ConfigurationError("finite-difference step must be positive")
    cols = []
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h[j]
        xm[j] -= h[j]
        fp = np.atleast_1d(np.asarray(fun(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(fun(xm), dtype=float))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NumericError("map returned non-finite values during differentiation")
        cols.append((fp - fm) / (2 * h[j]))
    return np.column_stack(cols)


def psd_sqrt(M: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Symmetric square root; eigenvalues below ``floor`` are clamped to zero."""
    w, V = np.linalg.eigh(symmetrize(M))
    w = np.where(w < floor, 0.0, w)
    return (V * np.sqrt(w)) @ V.T


@dataclass
class NonlinearModel:
    """Process map ``f(x, u)``, measurement map ``g(x)`` and noise covariances.

    ``F`` and ``G`` are optional analytic Jacobians; when absent they are
    obtained by central differences.
    """

    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    Q: np.ndarray
    R: np.ndarray
    F: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    G: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jacobian_step: Optional[float] = None

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for name, M in (("Q", self.Q), ("R", self.R)):
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T):
                raise ConfigurationError(f"{name} must be a symmetric square matrix")
        if np.linalg.eigvalsh(self.Q)[0] < -1e-12:
            raise ConfigurationError("Q must be positive semi-definite")
        if np.linalg.eigvalsh(self.R)[0] <= 0:
            raise ConfigurationError("R must be positive definite")

    def process_jacobian(self, x, u) -> np.ndarray:
        if self.F is not None:
            return np.atleast_2d(np.asarray(self.F(x, u), dtype=float))
        return numeric_jacobian(lambda z: self.f(z, u), x, self.jacobian_step)

    def measurement_jacobian(self, x) -> np.ndarray:
        if self.G is not None:
            return np.atleast_2d(np.asarray(self.G(x), dtype=float))
        return numeric_jacobian(self.g, x, self.jacobian_step)


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.array(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ConfigurationError("covariance shape does not match the mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", symmetrize(cov))

    def nees(self, truth) -> float:
        e = np.asarray(truth, dtype=float) - self.mean
        return float(e @ np.linalg.solve(self.cov, e))


@dataclass(frozen=True)
class ArekfTuning:
    """Tuning of the robust filter.

    ``gamma_exponent`` is the power of ``gamma`` in front of the square-root
    factor of the robustness matrix; with the default 1 the two gamma factors
    cancel.  ``branch_test`` is ``"trace"`` or ``"eigen"``.
    """

    alpha: float = 0.9
    rho: float = 0.97
    gamma: float = 0.001
    lam: float = 0.7
    gamma_exponent: float = 1.0
    branch_test: str = "trace"
    max_doublings: int = 10

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError("alpha must be positive")
        if not 0 < self.rho <= 1:
            raise ConfigurationError("rho must lie in (0, 1]")
        if self.gamma == 0 or not math.isfinite(self.gamma):
            raise ConfigurationError("gamma must be finite and non-zero")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ConfigurationError("lambda must be positive")
        if self.branch_test not in ("trace", "eigen"):
            raise ConfigurationError("branch_test must be 'trace' or 'eigen'")
        if self.max_doublings < 0:
            raise ConfigurationError("max_doublings must be non-negative")


@dataclass(frozen=True)
class InnovationStats:
    """Running estimate of the real innovation covariance (``None`` before the first sample)."""

    pbar_y: Optional[np.ndarray] = None
    t: int = 0


def update_innovation_stats(stats: InnovationStats, innovation, rho: float) -> InnovationStats:
    """One step of ``Pbar_t = (rho Pbar_{t-1} + y y^T) / (rho + 1)``, seeded with ``y0 y0^T``."""
    v = np.asarray(innovation, dtype=float).reshape(-1)
    outer = np.outer(v, v)
    if stats.pbar_y is None:
        return InnovationStats(outer, 0)
    if stats.pbar_y.shape != outer.shape:
        raise ConfigurationError("innovation dimension changed between steps")
    return InnovationStats((rho * stats.pbar_y + outer) / (rho + 1.0), stats.t + 1)


@dataclass(frozen=True)
class RobustPrior:
    """Predicted belief plus the (possibly inflated) covariance used by the update."""

    mean: np.ndarray
    cov: np.ndarray
    xi: np.ndarray
    robust: bool = False
    lam: float = float("nan")
    innovation: Optional[np.ndarray] = field(default=None, repr=False)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FilterDivergenceError("filter produced non-finite values")


def ekf_predict(model: NonlinearModel, belief: GaussianBelief, u) -> GaussianBelief:
    F = model.process_jacobian(belief.mean, u)
    mean = np.asarray(model.f(belief.mean, u), dtype=float).reshape(-1)
    cov = F @ belief.cov @ F.T + model.Q
    _check_finite(mean, cov)
    return GaussianBelief(mean, cov)


def ekf_update(model: NonlinearModel, prior: GaussianBelief, y) -> tuple[GaussianBelief, np.ndarray]:
    """Measurement update; returns the posterior and the innovation ``y - g(mean)``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    H = model.measurement_jacobian(prior.mean)
    innovation = y - np.asarray(model.g(prior.mean), dtype=float).reshape(-1)
    S = H @ prior.cov @ H.T + model.R
    try:
        K = np.linalg.solve(S, H @ prior.cov).T
    except np.linalg.LinAlgError as exc:
        raise FilterDivergenceError("innovation covariance is singular") from exc
    mean = prior.mean + K @ innovation
    cov = (np.eye(mean.size) - K @ H) @ prior.cov
    _check_finite(mean, cov)
    return GaussianBelief(mean, cov), innovation


def _nominal(py: np.ndarray, pbar: np.ndarray, tuning: ArekfTuning) -> bool:
    if math.isinf(tuning.alpha):
        return True
    if tuning.branch_test == "trace":
        return float(np.trace(py)) > tuning.alpha * float(np.trace(pbar))
    return float(np.linalg.eigvalsh(symmetrize(py - tuning.alpha * pbar))[0]) > 0.0


def _robust_xi(P: np.ndarray, tuning: ArekfTuning, step=None) -> tuple[np.ndarray, float]:
    try:
        P_inv = symmetrize(np.linalg.inv(P))
    except np.linalg.LinAlgError as exc:
        raise TuningError("prior covariance is singular", step) from exc
    gain = abs(tuning.gamma) ** (2 * tuning.gamma_exponent - 2)
    lam = tuning.lam
    for _ in range(tuning.max_doublings + 1):
        root = psd_sqrt(P_inv - P_inv / lam)
        info = P_inv - gain * (root.T @ root)
        w = np.linalg.eigvalsh(symmetrize(info))
        if w[0] > 0:
            xi = symmetrize(np.linalg.inv(info))
            margin = np.linalg.eigvalsh(symmetrize(lam * P - xi))[0]
            if margin >= -1e-9 * lam * np.linalg.norm(P, 2):
                return xi, lam
        log.debug("robust prior: inflating lambda %.4g -> %.4g", lam, 2 * lam)
        lam *= 2.0
    raise TuningError("robust prior covariance is not positive definite", step)


def robust_prior(
    model: NonlinearModel,
    predicted: GaussianBelief,
    y,
    tuning: ArekfTuning,
    stats: InnovationStats,
    step: Optional[int] = None,
) -> tuple[RobustPrior, InnovationStats]:
    """Innovation bookkeeping and branch selection on an already predicted belief."""
    y = np.asarray(y, dtype=float).reshape(-1)
    H = model.measurement_jacobian(predicted.mean)
    innovation = y - np.asarray(model.g(predicted.mean), dtype=float).reshape(-1)
    stats = update_innovation_stats(stats, innovation, tuning.rho)
    P = predicted.cov
    py = H @ P @ H.T + model.R
    if _nominal(py, stats.pbar_y, tuning):
        return RobustPrior(predicted.mean, P, P, False, float("nan"), innovation), stats
    xi, lam = _robust_xi(P, tuning, step)
    _check_finite(xi)
    return RobustPrior(predicted.mean, P, xi, True, lam, innovation), stats


def arekf_predict(
    model: NonlinearModel,
    belief: GaussianBelief,
    u,
    y,
    tuning: ArekfTuning,
    stats: InnovationStats,
    step: Optional[int] = None,
) -> tuple[RobustPrior, InnovationStats]:
    """Time update followed by the robust prior selection for measurement ``y``."""
    return robust_prior(model, ekf_predict(model, belief, u), y, tuning, stats, step)


def arekf_update(model: NonlinearModel, prior, y) -> tuple[GaussianBelief, np.ndarray]:
    """Measurement update in information form using ``prior.xi``.

    A plain :class:`GaussianBelief` is accepted and treated as ``xi = cov``.
    """
    xi = getattr(prior, "xi", prior.cov)
    y = np.asarray(y, dtype=float).reshape(-1)
    H = model.measurement_jacobian(prior.mean)
    innovation = y - np.asarray(model.g(prior.mean), dtype=float).reshape(-1)
    py = H @ xi @ H.T + model.R
    try:
        K = np.linalg.solve(py, H @ xi).T
        R_inv = np.linalg.inv(model.R)
        cov = np.linalg.inv(np.linalg.inv(xi) + H.T @ R_inv @ H)
    except np.linalg.LinAlgError as exc:
        raise FilterDivergenceError("innovation covariance is singular") from exc
    mean = prior.mean + K @ innovation
    _check_finite(mean, cov)
    return GaussianBelief(mean, cov), innovation


class ExtendedKalmanFilter:
    """Stateful wrapper: ``correct`` for the first sample, ``step`` afterwards."""

    name = "ekf"

    def __init__(self, model: NonlinearModel, belief: GaussianBelief):
        self.model = model
        self.belief = belief
        self.innovation: Optional[np.ndarray] = None
        self.k = 0

    def correct(self, y) -> GaussianBelief:
        self.belief, self.innovation = ekf_update(self.model, self.belief, y)
        return self.belief

    def step(self, u, y) -> GaussianBelief:
        self.k += 1
        prior = ekf_predict(self.model, self.belief, u)
        self.belief, self.innovation = ekf_update(self.model, prior, y)
        return self.belief


class AdaptiveRobustEKF(ExtendedKalmanFilter):
    name = "arekf"

    def __init__(self, model: NonlinearModel, belief: GaussianBelief, tuning: ArekfTuning):
        super().__init__(model, belief)
        self.tuning = tuning
        self.stats = InnovationStats()
        self.robust_steps = 0
        self.last_prior: Optional[RobustPrior] = None

    def _apply(self, predicted: GaussianBelief, y) -> GaussianBelief:
        prior, self.stats = robust_prior(self.model, predicted, y, self.tuning, self.stats, self.k)
        self.robust_steps += prior.robust
        self.last_prior = prior
        self.belief, self.innovation = arekf_update(self.model, prior, y)
        return self.belief

    def correct(self, y) -> GaussianBelief:
        return self._apply(self.belief, y)

    def step(self, u, y) -> GaussianBelief:
        self.k += 1
        return self._apply(ekf_predict(self.model, self.belief, u), y)
