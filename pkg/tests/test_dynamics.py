import numpy as np
import pytest

from fricid.dynamics import (LinkInertialParams, PlanarArm, base_param_reduction,
                             sampled_regressor, solve_mass)
from fricid.errors import NumericalError, ParameterError, SamplingError
from fricid.integrators import rk4_integrate

from oracles import lagrangian_torque_2dof


def test_point_mass_pendulum_inertia():
    m, l = 2.0, 0.7
    arm = PlanarArm([LinkInertialParams(mass=m, length=l, com=(l, 0.0, 0.0))])
    for q in (-2.0, 0.0, 1.3):
        np.testing.assert_allclose(arm.mass_matrix(np.array([q])), [[m * l * l]], rtol=1e-14)


def test_nonphysical_mass_rejected():
    with pytest.raises(ParameterError):
        LinkInertialParams(mass=0.0, length=1.0)
    with pytest.raises(ParameterError):
        LinkInertialParams(mass=1.0, length=1.0, inertia=(-1.0, 0.1, 0.1, 0, 0, 0))


def test_mass_matrix_matches_lagrangian_at_zero(arm2, two_link_dicts):
    l1, l2 = two_link_dicts
    q = np.zeros(2)
    m = arm2.mass_matrix(q)
    for i in range(2):
        e = np.eye(2)[i]
        col = lagrangian_torque_2dof(q, np.zeros(2), e, l1, l2, 0.0)
        np.testing.assert_allclose(m[:, i], col, rtol=1e-12, atol=1e-14)


def test_mass_matrix_symmetric_positive_definite(arm2, rng):
    q = rng.uniform(-np.pi, np.pi, (1000, 2))
    m = arm2.mass_matrix(q)
    assert np.array_equal(m, np.swapaxes(m, -1, -2))
    assert np.all(np.linalg.eigvalsh(m) > 0)


def test_bias_zero_at_rest_and_gravity_zero_hanging(pendulum, arm2, rng):
    q = rng.normal(size=(10, 2))
    c, _ = arm2.bias_and_gravity(q, np.zeros((10, 2)))
    assert np.all(c == 0.0)
    _, g = pendulum.bias_and_gravity(np.zeros(1), np.zeros(1))
    assert g[0] == 0.0


def test_gravity_independent_of_velocity(arm2, rng):
    q = rng.normal(size=2)
    _, g1 = arm2.bias_and_gravity(q, rng.normal(size=2))
    _, g2 = arm2.bias_and_gravity(q, rng.normal(size=2))
    assert np.array_equal(g1, g2)


def test_bias_and_gravity_match_lagrangian(arm2, two_link_dicts, rng):
    l1, l2 = two_link_dicts
    for _ in range(20):
        q, qd = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2)
        c, g = arm2.bias_and_gravity(q, qd)
        ref_g = lagrangian_torque_2dof(q, np.zeros(2), np.zeros(2), l1, l2, 9.81)
        ref_cg = lagrangian_torque_2dof(q, qd, np.zeros(2), l1, l2, 9.81)
        np.testing.assert_allclose(g, ref_g, atol=1e-10)
        np.testing.assert_allclose(c, ref_cg - ref_g, atol=1e-10)


def test_inverse_dynamics_null_case(arm2):
    arm0 = PlanarArm(arm2.links, gravity=0.0)
    tau = arm0.inverse_dynamics(np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2))
    assert np.all(tau == 0.0)


def test_inverse_dynamics_matches_lagrangian(arm2, two_link_dicts, rng):
    l1, l2 = two_link_dicts
    for _ in range(20):
        q, qd, qdd = (rng.uniform(-3, 3, 2) for _ in range(3))
        tau_f = rng.normal(size=2)
        tau = arm2.inverse_dynamics(q, qd, qdd, tau_f)
        ref = lagrangian_torque_2dof(q, qd, qdd, l1, l2, 9.81) + tau_f
        np.testing.assert_allclose(tau, ref, atol=1e-10)


def test_forward_inverse_round_trip(arm2, pendulum, rng):
    for arm in (arm2, pendulum):
        n = arm.n_dof
        q, qd, qdd = (rng.uniform(-3, 3, (50, n)) for _ in range(3))
        tau_f = rng.normal(size=(50, n))
        tau = arm.inverse_dynamics(q, qd, qdd, tau_f)
        np.testing.assert_allclose(arm.forward_dynamics(q, qd, tau, tau_f), qdd, atol=1e-10)


def test_forward_dynamics_matches_lagrangian(arm2, two_link_dicts, rng):
    l1, l2 = two_link_dicts
    q, qd, tau = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2), rng.normal(size=2)
    qdd = arm2.forward_dynamics(q, qd, tau)
    np.testing.assert_allclose(lagrangian_torque_2dof(q, qd, qdd, l1, l2, 9.81), tau, atol=1e-10)


def test_ill_conditioned_mass_matrix_raises():
    m = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]])
    with pytest.raises(NumericalError):
        solve_mass(m, np.ones(2))


def test_regressor_consistent_with_inverse_dynamics(arm2, pendulum, rng):
    for arm in (arm2, pendulum):
        n = arm.n_dof
        fc, fv = rng.uniform(0.1, 1, n), rng.uniform(0.1, 1, n)
        theta = arm.standard_vector(fc, fv)
        q, qd, qdd = (rng.uniform(-3, 3, (100, n)) for _ in range(3))
        tau_f = fc * np.sign(qd) + fv * qd
        y = arm.regressor(q, qd, qdd)
        np.testing.assert_allclose(y @ theta, arm.inverse_dynamics(q, qd, qdd, tau_f), atol=1e-10)
        lump = arm.lumped_regressor(q, qd, qdd)
        np.testing.assert_allclose(lump @ arm.lumped, arm.inverse_dynamics(q, qd, qdd), atol=1e-10)


def test_regressor_zero_acceleration_columns(pendulum):
    y = pendulum.regressor(np.zeros(1), np.zeros(1), np.zeros(1))
    assert y[0, 5] == 0.0  # ZZ multiplies qdd


def test_regressor_friction_columns(arm2):
    qd = np.array([-0.7, 1.9])
    y = arm2.regressor(np.zeros(2), qd, np.zeros(2))
    assert y[0, 20] == -1.0 and y[0, 21] == -0.7
    assert y[1, 22] == 1.0 and y[1, 23] == 1.9
    assert y[0, 22] == 0.0 and y[1, 20] == 0.0


def test_base_reduction_pendulum_without_gravity(pendulum):
    flat = PlanarArm(pendulum.links, gravity=0.0)
    mapping = base_param_reduction(sampled_regressor(flat, 200, seed=3))
    # lumped inertia, Coulomb, viscous
    assert mapping.rank == 3
    names = np.array(flat.standard_names())[mapping.independent]
    assert set(names) == {"ZZ1", "fc1", "fv1"}


def test_base_reduction_with_gravity(pendulum, arm2):
    assert base_param_reduction(sampled_regressor(pendulum, 200, seed=3)).rank == 5
    # ZZR1, MXR1, MY1, ZZ2, MX2, MY2 plus four friction coefficients
    assert base_param_reduction(sampled_regressor(arm2, 300, seed=3)).rank == 10


def test_duplicated_column_reduces_rank_by_one(arm2):
    y = sampled_regressor(arm2, 300, seed=4)
    base = base_param_reduction(y)
    red = base.reduce_regressor(y)
    dup = np.hstack([red, red[:, [2]]])
    assert base_param_reduction(dup).rank == dup.shape[1] - 1


def test_reduced_model_predicts_held_out(arm2, rng):
    mapping = base_param_reduction(sampled_regressor(arm2, 300, seed=5), seed=5)
    theta = arm2.standard_vector([0.3, 0.2], [0.1, 0.05])
    theta_b = mapping.base_from_standard(theta)
    q, qd, qdd = arm2.sample_states(200, seed=99)
    y = arm2.regressor(q, qd, qdd)
    np.testing.assert_allclose(mapping.reduce_regressor(y) @ theta_b, y @ theta, atol=1e-8)
    red = mapping.reduce_regressor(y).reshape(-1, mapping.rank)
    assert np.linalg.matrix_rank(red) == mapping.rank


def test_reduction_rejects_too_few_rows(arm2):
    with pytest.raises(SamplingError):
        base_param_reduction(sampled_regressor(arm2, 5, seed=1))


def test_mapping_reproducible_from_seed(arm2):
    a = base_param_reduction(sampled_regressor(arm2, 300, seed=8))
    b = base_param_reduction(sampled_regressor(arm2, 300, seed=8))
    assert np.array_equal(a.independent, b.independent)
    assert np.array_equal(a.regroup, b.regroup)


def test_id_jacobians_match_finite_differences(arm2, pendulum, rng):
    for arm in (arm2, pendulum):
        n = arm.n_dof
        q, qd, qdd = (rng.uniform(-2, 2, n) for _ in range(3))
        jq, jqd = arm.inverse_dynamics_jacobians(q, qd, qdd)
        h = 1e-6
        for k in range(n):
            e = np.eye(n)[k] * h
            fd_q = (arm.inverse_dynamics(q + e, qd, qdd) - arm.inverse_dynamics(q - e, qd, qdd)) / (2 * h)
            fd_qd = (arm.inverse_dynamics(q, qd + e, qdd) - arm.inverse_dynamics(q, qd - e, qdd)) / (2 * h)
            np.testing.assert_allclose(jq[:, k], fd_q, atol=1e-7)
            np.testing.assert_allclose(jqd[:, k], fd_qd, atol=1e-7)


def _free_motion(arm):
    n = arm.n_dof

    def f(x):
        q, qd = x[:n], x[n:]
        return np.concatenate([qd, arm.forward_dynamics(q, qd, np.zeros(n))])
    return f


def test_energy_conservation_rk4(arm2, pendulum):
    for arm, x0 in ((pendulum, np.array([1.0, 0.0])), (arm2, np.array([0.8, -0.4, 0.0, 0.5]))):
        n = arm.n_dof
        traj = rk4_integrate(_free_motion(arm), x0, 0.004, 2500)
        e = arm.kinetic_energy(traj[:, :n], traj[:, n:]) + arm.potential_energy(traj[:, :n])
        scale = np.max(np.abs(e - arm.potential_energy(np.zeros(n))))
        assert np.max(np.abs(e - e[0])) / scale < 1e-6


def test_skew_symmetry_of_mdot_minus_2c(arm2):
    traj = rk4_integrate(_free_motion(arm2), np.array([0.8, -0.4, 1.0, 0.5]), 0.004, 200)
    h = 1e-6
    for x in traj[::20]:
        q, qd = x[:2], x[2:]
        mdot = (arm2.mass_matrix(q + h * qd) - arm2.mass_matrix(q - h * qd)) / (2 * h)
        n_mat = mdot - 2 * arm2.coriolis_matrix(q, qd)
        assert abs(qd @ n_mat @ qd) < 1e-8
        np.testing.assert_allclose(arm2.coriolis_matrix(q, qd) @ qd, arm2.bias_and_gravity(q, qd)[0],
                                   atol=1e-12)
