import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from arekf_sim.dynamics import (
    DEFAULT_PARAMS,
    JointState,
    ManipulatorParams,
    PlanarElbow,
    coriolis_matrix,
    forward_dynamics,
    gravity_vector,
    inertia_bounds,
    mass_matrix,
)
from arekf_sim.errors import ConfigurationError, DynamicsError

P = DEFAULT_PARAMS
angles = st.floats(-2 * math.pi, 2 * math.pi, allow_nan=False)
rates = st.floats(-5.0, 5.0, allow_nan=False)


def test_mass_matrix_at_zero():
    D = mass_matrix(P, [0.0, 0.0])
    np.testing.assert_allclose(D, [[1.125, 0.4375], [0.4375, 0.3125]], rtol=0, atol=1e-15)
    np.testing.assert_allclose(D, oracles.mass_matrix(P, [0.0, 0.0]), atol=1e-14)


def test_mass_matrix_coupling_vanishes_at_right_angle():
    D = mass_matrix(P, [0.0, math.pi / 2])
    assert D[0, 1] == pytest.approx(0.3125, abs=1e-15)
    assert D[1, 0] == D[0, 1]


def test_mass_matrix_depends_only_on_elbow_angle():
    np.testing.assert_allclose(mass_matrix(P, [1.3, 0.7]), mass_matrix(P, [-2.0, 0.7]))


def test_coriolis_zero_velocity():
    C = coriolis_matrix(P, JointState([0.3, 1.1], [0.0, 0.0]))
    assert np.all(C == 0.0)


def test_coriolis_reference_value():
    C = coriolis_matrix(P, JointState([0.0, math.pi / 2], [1.0, 1.0]))
    np.testing.assert_allclose(C, [[-0.125, -0.25], [0.125, 0.0]], atol=1e-15)
    np.testing.assert_allclose(C, oracles.christoffel_coriolis(P, [0.0, math.pi / 2], [1.0, 1.0]), atol=1e-9)


def test_gravity_values():
    np.testing.assert_allclose(gravity_vector(P, [math.pi / 2, 0.0]), [0.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(gravity_vector(P, [0.0, 0.0]), [9.81 * 1.0, 9.81 * 0.25], rtol=1e-15)
    weightless = ManipulatorParams(g0=0.0)
    for q in ([0.1, 0.2], [3.0, -1.0]):
        assert np.all(gravity_vector(weightless, q) == 0.0)


def test_gravity_is_potential_gradient():
    rng = np.random.default_rng(3)
    for q in rng.uniform(-np.pi, np.pi, size=(50, 2)):
        np.testing.assert_allclose(gravity_vector(P, q), oracles.gravity(P, q), rtol=1e-6, atol=1e-8)


def test_forward_dynamics_reference_solve():
    state = JointState([0.0, 0.0], [0.0, 0.0])
    ddq = forward_dynamics(P, state, [1.0, 0.0], [0.0, 0.0])
    D = np.array([[1.125, 0.4375], [0.4375, 0.3125]])
    G = np.array([9.81, 2.4525])
    np.testing.assert_allclose(D @ ddq + G, [1.0, 0.0], atol=1e-12)


def test_forward_dynamics_equilibria():
    rest = JointState([math.pi / 2, 0.0], [0.0, 0.0])
    np.testing.assert_allclose(forward_dynamics(P, rest, [0.0, 0.0], [0.0, 0.0]), 0.0, atol=1e-14)
    moving = JointState([0.4, -1.2], [0.7, -0.3])
    model = PlanarElbow(P)
    d = np.array([0.3, -0.2])
    u = model.coriolis_matrix(moving.q, moving.dq) @ moving.dq + model.gravity_vector(moving.q) - d
    np.testing.assert_allclose(forward_dynamics(P, moving, u, d), 0.0, atol=1e-12)


def test_generic_and_closed_form_forward_dynamics_agree():
    model = PlanarElbow(P)
    from arekf_sim.dynamics import Manipulator

    rng = np.random.default_rng(11)
    for _ in range(20):
        q, dq, u, d = rng.normal(size=(4, 2))
        np.testing.assert_allclose(
            model.forward_dynamics(q, dq, u, d), Manipulator.forward_dynamics(model, q, dq, u, d), rtol=1e-12, atol=1e-12
        )


def test_singular_inertia_guard():
    model = PlanarElbow(P)
    model.max_condition = 1.0
    with pytest.raises(DynamicsError):
        model.forward_dynamics([0.0, 0.0], [0.0, 0.0], [0.0, 0.0])


def test_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        mass_matrix(P, [0.0, 0.0, 0.0])
    with pytest.raises(ConfigurationError):
        JointState([0.0, 0.0], [0.0])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(masses=(0.0, 1.0)),
        dict(inertias=(0.25, -1.0)),
        dict(com_offsets=(0.25, 0.6)),
        dict(lengths=(0.5,)),
    ],
)
def test_invalid_params(kwargs):
    with pytest.raises(ConfigurationError):
        ManipulatorParams(**kwargs)


def test_inertia_bounds_single_sample():
    D0 = np.array([[1.125, 0.4375], [0.4375, 0.3125]])
    lo, hi = oracles.two_by_two_eigenvalues(D0)
    b = inertia_bounds(P, [[0.0, 0.0]])
    assert b.lambda_min == pytest.approx(lo, rel=1e-12)
    assert b.lambda_max == pytest.approx(hi, rel=1e-12)
    assert (b.alpha1, b.alpha2) == (b.lambda_min, b.lambda_max)


def test_inertia_bounds_max_at_straight_arm():
    grid = [[0.0, a] for a in np.linspace(0, 2 * np.pi, 360, endpoint=False)]
    b = inertia_bounds(P, grid)
    assert b.lambda_max == pytest.approx(np.linalg.eigvalsh(mass_matrix(P, [0.0, 0.0]))[-1], rel=1e-12)
    assert b.lambda_min > 0


def test_inertia_bounds_scale_with_mass():
    c = 2.5
    scaled = ManipulatorParams(masses=(c, c), inertias=(0.25 * c, 0.25 * c))
    grid = [[0.0, a] for a in np.linspace(0, 2 * np.pi, 50)]
    b1, b2 = inertia_bounds(P, grid), inertia_bounds(scaled, grid)
    assert b2.lambda_min == pytest.approx(c * b1.lambda_min, rel=1e-12)
    assert b2.lambda_max == pytest.approx(c * b1.lambda_max, rel=1e-12)


def test_property_one_on_full_grid():
    model = PlanarElbow(P)
    grid = model.config_grid(100)
    b = model.inertia_bounds(grid)
    for q in grid[::97]:
        w = np.linalg.eigvalsh(model.mass_matrix(q))
        assert b.alpha1 - 1e-12 <= w[0] and w[-1] <= b.alpha2 + 1e-12


def test_inertia_bounds_empty_grid():
    with pytest.raises(ConfigurationError):
        inertia_bounds(P, [])


@settings(max_examples=200, deadline=None)
@given(q1=angles, q2=angles)
def test_mass_matrix_symmetric_positive_definite(q1, q2):
    D = mass_matrix(P, [q1, q2])
    assert abs(D[0, 1] - D[1, 0]) <= 1e-12
    assert np.linalg.eigvalsh(D)[0] > 0


@settings(max_examples=200, deadline=None)
@given(q1=angles, q2=angles, v1=rates, v2=rates, s1=rates, s2=rates)
def test_skew_symmetry(q1, q2, v1, v2, s1, s2):
    model = PlanarElbow(P)
    q, dq, s = np.array([q1, q2]), np.array([v1, v2]), np.array([s1, s2])
    h = 1e-6
    D_dot = (model.mass_matrix(q + h * dq) - model.mass_matrix(q - h * dq)) / (2 * h)
    N = D_dot - 2 * model.coriolis_matrix(q, dq)
    assert abs(s @ N @ s) <= 1e-9 * (s @ s) + 1e-300
    np.testing.assert_allclose(model.mass_matrix_rate(q, dq), D_dot, atol=1e-8)


@settings(max_examples=100, deadline=None)
@given(q1=angles, q2=angles, v1=rates, v2=rates, u1=rates, u2=rates)
def test_forward_dynamics_residual(q1, q2, v1, v2, u1, u2):
    model = PlanarElbow(P)
    q, dq, u = np.array([q1, q2]), np.array([v1, v2]), np.array([u1, u2])
    d = np.array([0.5, -0.25])
    ddq = model.forward_dynamics(q, dq, u, d)
    residual = model.inverse_dynamics(q, dq, ddq) - u - d
    scale = max(1.0, np.linalg.norm(u + d), np.linalg.norm(model.gravity_vector(q)))
    assert np.linalg.norm(residual) <= 1e-9 * scale


def test_forward_dynamics_jacobian_matches_differences():
    from arekf_sim.estimation import numeric_jacobian

    model = PlanarElbow(P)
    rng = np.random.default_rng(5)
    for _ in range(20):
        q, dq, u = rng.normal(size=(3, 2))
        a_q, a_dq = model.forward_dynamics_jacobian(q, dq, u)
        nq = numeric_jacobian(lambda z: model.forward_dynamics(z, dq, u), q)
        ndq = numeric_jacobian(lambda z: model.forward_dynamics(q, z, u), dq)
        np.testing.assert_allclose(a_q, nq, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(a_dq, ndq, rtol=1e-5, atol=1e-6)


def test_energy_is_conserved_without_input():
    from arekf_sim.simulation import plant_step

    model = PlanarElbow(P)
    x = np.array([0.4, -0.3, 0.0, 0.0])
    e0 = model.total_energy(x[:2], x[2:])
    zero = np.zeros(2)
    for _ in range(2000):
        x = plant_step(model, x, zero, zero, 0.005)
    e1 = model.total_energy(x[:2], x[2:])
    assert abs(e1 - e0) / abs(e0) < 1e-6


def test_energy_matches_oracle():
    rng = np.random.default_rng(8)
    model = PlanarElbow(P)
    for q, dq in rng.normal(size=(10, 2, 2)):
        assert model.kinetic_energy(q, dq) == pytest.approx(oracles.kinetic_energy(P, q, dq), rel=1e-12)
        assert model.potential_energy(q) == pytest.approx(oracles.potential_energy(P, q), rel=1e-12, abs=1e-12)
