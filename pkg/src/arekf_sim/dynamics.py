"""Rigid-body dynamics of serial manipulators.

The equations of motion are written as

    D(q) ddq + C(q, dq) dq + G(q) = u + d

with ``d`` a bounded load/disturbance torque.  :class:`Manipulator` holds the
joint-count independent machinery (forward dynamics, inertia bounds, energy,
linearization); :class:`PlanarElbow` is the closed-form two-link planar elbow
with the Christoffel-symbol Coriolis matrix, so that ``dD/dt - 2C`` is
skew-symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, DynamicsError

__all__ = [
    "ManipulatorParams",
    "JointState",
    "DynamicsTerms",
    "InertiaBounds",
    "Manipulator",
    "PlanarElbow",
    "DEFAULT_PARAMS",
    "model_for",
    "mass_matrix",
    "coriolis_matrix",
    "gravity_vector",
    "dynamics_terms",
    "forward_dynamics",
    "inertia_bounds",
]


def _as_tuple(values, name: str) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1:
        raise ConfigurationError(f"{name} must be a flat sequence")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class ManipulatorParams:
    """Per-link physical parameters (SI units)."""

    masses: tuple[float, ...] = (1.0, 1.0)
    inertias: tuple[float, ...] = (0.25, 0.25)
    lengths: tuple[float, ...] = (0.5, 0.5)
    com_offsets: tuple[float, ...] = (0.25, 0.25)
    g0: float = 9.81

    def __post_init__(self):
        for name in ("masses", "inertias", "lengths", "com_offsets"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name), name))
        object.__setattr__(self, "g0", float(self.g0))
        n = len(self.masses)
        if n < 1 or any(
            len(getattr(self, k)) != n for k in ("inertias", "lengths", "com_offsets")
        ):
            raise ConfigurationError("masses, inertias, lengths and com_offsets must share one length")
        values = self.masses + self.inertias + self.lengths + self.com_offsets
        if not all(math.isfinite(v) for v in values) or not math.isfinite(self.g0):
            raise ConfigurationError("manipulator parameters must be finite")
        if min(self.masses) <= 0 or min(self.inertias) <= 0 or min(self.lengths) <= 0:
            raise ConfigurationError("masses, inertias and lengths must be strictly positive")
        for lc, l in zip(self.com_offsets, self.lengths):
            if not 0 < lc <= l:
                raise ConfigurationError("center-of-mass offsets must satisfy 0 < l_c <= l")

    @property
    def n_joints(self) -> int:
        return len(self.masses)

    def scaled(
        self,
        masses: Sequence[float] | float = 0.0,
        inertias: Sequence[float] | float = 0.0,
        lengths: Sequence[float] | float = 0.0,
        com_offsets: Sequence[float] | float = 0.0,
    ) -> "ManipulatorParams":
        """Return a copy with multiplicative perturbations ``(1 + p)`` applied."""

        def apply(base, pert):
            pert = np.broadcast_to(np.asarray(pert, dtype=float), (len(base),))
            return tuple(b * (1.0 + p) for b, p in zip(base, pert))

        try:
            return replace(
                self,
                masses=apply(self.masses, masses),
                inertias=apply(self.inertias, inertias),
                lengths=apply(self.lengths, lengths),
                com_offsets=apply(self.com_offsets, com_offsets),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"perturbation does not match joint count: {exc}") from exc


DEFAULT_PARAMS = ManipulatorParams()


@dataclass(frozen=True)
class JointState:
    """Joint angles ``q`` (rad) and velocities ``dq`` (rad/s)."""

    q: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        dq = np.array(self.dq, dtype=float).reshape(-1)
        if q.size < 1 or q.shape != dq.shape:
            raise ConfigurationError("q and dq must be non-empty and of equal length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(dq))):
            raise ConfigurationError("joint state must be finite")
        q.flags.writeable = False
        dq.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "dq", dq)

    @classmethod
    def from_vector(cls, x) -> "JointState":
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size % 2:
            raise ConfigurationError("state vector must have even length")
        n = x.size // 2
        return cls(x[:n], x[n:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.dq])

    @property
    def n(self) -> int:
        return self.q.size


class DynamicsTerms(NamedTuple):
    D: np.ndarray
    C: np.ndarray
    G: np.ndarray


class InertiaBounds(NamedTuple):
    alpha1: float
    alpha2: float
    lambda_min: float
    lambda_max: float


class Manipulator:
    """Joint-count independent part of the rigid-body model.

    Subclasses provide ``mass_matrix``, ``coriolis_matrix``, ``gravity_vector``
    and their partial derivatives; everything else is derived here.
    """

    max_condition = 1e12

    def __init__(self, params: ManipulatorParams):
        self.params = params
        self.n = params.n_joints

    # -- to be provided by concrete models ---------------------------------
    def mass_matrix(self, q) -> np.ndarray:
        raise NotImplementedError

    def coriolis_matrix(self, q, dq) -> np.ndarray:
        raise NotImplementedError

    def gravity_vector(self, q) -> np.ndarray:
        raise NotImplementedError

    def mass_matrix_partials(self, q) -> np.ndarray:
        """``out[j] = dD/dq_j``."""
        raise NotImplementedError

    def coriolis_torque_partials(self, q, dq) -> tuple[np.ndarray, np.ndarray]:
        """Jacobians of ``C(q, dq) dq`` with respect to ``q`` and ``dq``."""
        raise NotImplementedError

    def gravity_jacobian(self, q) -> np.ndarray:
        raise NotImplementedError

    def potential_energy(self, q) -> float:
        raise NotImplementedError

    # -- derived -------------------------------------------------------------
    def _check(self, v, name="q") -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size != self.n:
            raise ConfigurationError(f"{name} has length {v.size}, expected {self.n}")
        return v

    def terms(self, q, dq) -> DynamicsTerms:
        return DynamicsTerms(self.mass_matrix(q), self.coriolis_matrix(q, dq), self.gravity_vector(q))

    def _solve(self, D, rhs):
        if np.linalg.cond(D) > self.max_condition:
            raise DynamicsError("inertia matrix is numerically singular")
        return np.linalg.solve(D, rhs)

    def forward_dynamics(self, q, dq, u, d=None) -> np.ndarray:
        """Joint accelerations ``D^-1 (u + d - C dq - G)``."""
        q = self._check(q)
        dq = self._check(dq, "dq")
        rhs = self._check(u, "u").copy()
        if d is not None:
            rhs += self._check(d, "d")
        rhs -= self.coriolis_matrix(q, dq) @ dq + self.gravity_vector(q)
        return self._solve(self.mass_matrix(q), rhs)

    def inverse_dynamics(self, q, dq, ddq) -> np.ndarray:
        return self.mass_matrix(q) @ ddq + self.coriolis_matrix(q, dq) @ dq + self.gravity_vector(q)

    def forward_dynamics_jacobian(self, q, dq, u, d=None) -> tuple[np.ndarray, np.ndarray]:
        """Partials of the joint acceleration with respect to ``q`` and ``dq``."""
        D = self.mass_matrix(q)
        ddq = self.forward_dynamics(q, dq, u, d)
        dD = self.mass_matrix_partials(q)
        dc_dq, dc_ddq = self.coriolis_torque_partials(q, dq)
        dG = self.gravity_jacobian(q)
        rhs_q = -dc_dq - dG - np.einsum("jik,k->ij", dD, ddq)
        return self._solve(D, rhs_q), self._solve(D, -dc_ddq)

    def mass_matrix_rate(self, q, dq) -> np.ndarray:
        """``dD/dt`` along the velocity ``dq``."""
        return np.einsum("jik,j->ik", self.mass_matrix_partials(q), np.asarray(dq, dtype=float))

    def kinetic_energy(self, q, dq) -> float:
        dq = np.asarray(dq, dtype=float)
        return 0.5 * float(dq @ self.mass_matrix(q) @ dq)

    def total_energy(self, q, dq) -> float:
        return self.kinetic_energy(q, dq) + self.potential_energy(q)

    def inertia_bounds(self, grid: Iterable) -> InertiaBounds:
        lo, hi = math.inf, -math.inf
        count = 0
        for q in grid:
            eig = np.linalg.eigvalsh(self.mass_matrix(q))
            if eig[0] <= 0:
                raise DynamicsError(f"inertia matrix not positive definite at q={np.asarray(q)}")
            lo = min(lo, float(eig[0]))
            hi = max(hi, float(eig[-1]))
            count += 1
        if count == 0:
            raise ConfigurationError("inertia bounds need at least one sample")
        return InertiaBounds(lo, hi, lo, hi)

    def config_grid(self, samples: int = 100) -> np.ndarray:
        """Uniform grid over the torus ``[0, 2 pi)^n`` (only joints after the first matter)."""
        axis = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
        mesh = np.meshgrid(*([axis] * self.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


class PlanarElbow(Manipulator):
    """Two-link planar elbow with in-plane gravity (angles from the horizontal)."""

    def __init__(self, params: ManipulatorParams = DEFAULT_PARAMS):
        if params.n_joints != 2:
            raise ConfigurationError("the planar elbow model needs exactly two links")
        super().__init__(params)
        m1, m2 = params.masses
        i1, i2 = params.inertias
        l1, _ = params.lengths
        c1, c2 = params.com_offsets
        self._a = m2 * l1 * c2
        self._k11 = m1 * c1**2 + m2 * (l1**2 + c2**2) + i1 + i2
        self._k12 = m2 * c2**2 + i2
        self._g1 = (m1 * c1 + m2 * l1) * params.g0
        self._g2 = m2 * c2 * params.g0
        self._l1 = l1

    def mass_matrix(self, q):
        q = self._check(q)
        ac = self._a * math.cos(q[1])
        d12 = self._k12 + ac
        return np.array([[self._k11 + 2 * ac, d12], [d12, self._k12]])

    def coriolis_matrix(self, q, dq):
        q = self._check(q)
        dq = self._check(dq, "dq")
        h = -self._a * math.sin(q[1])
        return np.array([[h * dq[1], h * (dq[0] + dq[1])], [-h * dq[0], 0.0]])

    def gravity_vector(self, q):
        q = self._check(q)
        c12 = math.cos(q[0] + q[1])
        return np.array([self._g1 * math.cos(q[0]) + self._g2 * c12, self._g2 * c12])

    def potential_energy(self, q):
        q = self._check(q)
        return self._g1 * math.sin(q[0]) + self._g2 * math.sin(q[0] + q[1])

    def mass_matrix_partials(self, q):
        q = self._check(q)
        s = -self._a * math.sin(q[1])
        out = np.zeros((2, 2, 2))
        out[1] = [[2 * s, s], [s, 0.0]]
        return out

    def coriolis_torque_partials(self, q, dq):
        q = self._check(q)
        dq = self._check(dq, "dq")
        h = -self._a * math.sin(q[1])
        dh = -self._a * math.cos(q[1])
        d_q = np.zeros((2, 2))
        d_q[0, 1] = dh * (2 * dq[0] * dq[1] + dq[1] ** 2)
        d_q[1, 1] = -dh * dq[0] ** 2
        d_dq = np.array([[2 * h * dq[1], 2 * h * (dq[0] + dq[1])], [-2 * h * dq[0], 0.0]])
        return d_q, d_dq

    def gravity_jacobian(self, q):
        q = self._check(q)
        s12 = self._g2 * math.sin(q[0] + q[1])
        return -np.array([[self._g1 * math.sin(q[0]) + s12, s12], [s12, s12]])

    def forward_dynamics(self, q, dq, u, d=None):
        q = self._check(q)
        dq = self._check(dq, "dq")
        u = self._check(u, "u")
        c2, s2 = math.cos(q[1]), math.sin(q[1])
        h = -self._a * s2
        c12 = math.cos(q[0] + q[1])
        b1 = u[0] - h * (2 * dq[0] * dq[1] + dq[1] ** 2) - self._g1 * math.cos(q[0]) - self._g2 * c12
        b2 = u[1] + h * dq[0] ** 2 - self._g2 * c12
        if d is not None:
            d = self._check(d, "d")
            b1 += d[0]
            b2 += d[1]
        d11 = self._k11 + 2 * self._a * c2
        d12 = self._k12 + self._a * c2
        d22 = self._k12
        det = d11 * d22 - d12 * d12
        # cond(D) >= (trace^2 / det) for 2x2 SPD; cheap singularity guard
        if det <= 0 or (d11 + d22) ** 2 > self.max_condition * det:
            raise DynamicsError("inertia matrix is numerically singular")
        return np.array([(d22 * b1 - d12 * b2) / det, (d11 * b2 - d12 * b1) / det])

    def com_positions(self, q) -> np.ndarray:
        """Planar coordinates of the two link centers of mass (rows)."""
        q = self._check(q)
        l1 = self._l1
        c1, c2 = self.params.com_offsets
        return np.array(
            [
                [c1 * math.cos(q[0]), c1 * math.sin(q[0])],
                [l1 * math.cos(q[0]) + c2 * math.cos(q[0] + q[1]), l1 * math.sin(q[0]) + c2 * math.sin(q[0] + q[1])],
            ]
        )


def model_for(params: ManipulatorParams) -> Manipulator:
    """Concrete dynamics model for ``params``."""
    if params.n_joints == 2:
        return PlanarElbow(params)
    raise ConfigurationError(f"no closed-form model for {params.n_joints} joints")


def _q(state_or_q):
    return state_or_q.q if isinstance(state_or_q, JointState) else state_or_q


def mass_matrix(params: ManipulatorParams, q) -> np.ndarray:
    return model_for(params).mass_matrix(_q(q))


def coriolis_matrix(params: ManipulatorParams, state: JointState) -> np.ndarray:
    return model_for(params).coriolis_matrix(state.q, state.dq)


def gravity_vector(params: ManipulatorParams, q) -> np.ndarray:
    return model_for(params).gravity_vector(_q(q))


def dynamics_terms(params: ManipulatorParams, state: JointState) -> DynamicsTerms:
    return model_for(params).terms(state.q, state.dq)


def forward_dynamics(params: ManipulatorParams, state: JointState, u, d=None) -> np.ndarray:
    return model_for(params).forward_dynamics(state.q, state.dq, u, d)


def inertia_bounds(params: ManipulatorParams, grid: Iterable | None = None) -> InertiaBounds:
    """Min/max eigenvalues of ``D(q)`` over ``grid`` (default: 100 x 100 torus grid)."""
    model = model_for(params)
    if grid is None:
        grid = model.config_grid(100)
    return model.inertia_bounds(grid)
