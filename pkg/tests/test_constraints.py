import numpy as np
import pytest

from gvssim import constraints as con
from gvssim import dynamics as dyn
from gvssim import kinematics as kin

from conftest import random_configuration


def consistent_state(model, rng, scale=0.05):
    """Random configuration on the closure manifold, with a feasible velocity."""
    q0 = con.assemble_closure(model, model.anchor_q)
    cache = kin.forward_kinematics(model, q0, rates=False)
    A, _, _ = con.constraint_jacobian(model, cache)
    P, _, _ = con.projector(A)
    q = con.assemble_closure(model, q0 + scale * (P @ rng.standard_normal(16)))
    cache = kin.forward_kinematics(model, q, rates=False)
    A, _, _ = con.constraint_jacobian(model, cache)
    P, _, _ = con.projector(A)
    qd = P @ rng.standard_normal(16)
    return q, qd


def test_anchor_is_consistent(default_model):
    m = default_model
    cache = kin.forward_kinematics(m, m.anchor_q, rates=False)
    _, _, Phi = con.constraint_jacobian(m, cache)
    assert np.linalg.norm(Phi) < 1e-12


def test_closure_returns_consistent_point_unchanged(default_model):
    m = default_model
    q0 = con.assemble_closure(m, m.anchor_q)
    q1 = con.assemble_closure(m, q0)
    np.testing.assert_allclose(q1, q0, atol=1e-12)


def test_closure_ignores_null_space_perturbations(default_model):
    m = default_model
    rng = np.random.default_rng(80)
    q0 = con.assemble_closure(m, m.anchor_q)
    cache = kin.forward_kinematics(m, q0, rates=False)
    A, _, _ = con.constraint_jacobian(m, cache)
    P, _, _ = con.projector(A)
    dq = 1e-3 * (P @ rng.standard_normal(16))
    cache2 = kin.forward_kinematics(m, q0 + dq, rates=False)
    _, _, Phi = con.constraint_jacobian(m, cache2)
    # moving along the feasible subspace leaves the residual second order
    assert np.linalg.norm(Phi) < 5e-6
    q1 = con.assemble_closure(m, q0 + dq)
    assert np.linalg.norm(q1 - (q0 + dq)) < 5e-6


def test_closure_newton_converges_quadratically(default_model):
    m = default_model
    rng = np.random.default_rng(81)
    q0 = con.assemble_closure(m, m.anchor_q)
    q_bad = q0 + 1e-3 * rng.standard_normal(16)
    residuals = []
    q = q_bad.copy()
    for _ in range(6):
        cache = kin.forward_kinematics(m, q, rates=False)
        A, _, Phi = con.constraint_jacobian(m, cache)
        residuals.append(np.linalg.norm(Phi))
        step, *_ = np.linalg.lstsq(A, Phi, rcond=1e-10)
        q = q - step
    assert residuals[-1] < 1e-12
    # quadratic tail: each iteration roughly squares the residual
    assert residuals[2] < 10 * residuals[1] ** 2 / max(residuals[0], 1e-30)
    q_solved = con.assemble_closure(m, q_bad)
    cache = kin.forward_kinematics(m, q_solved, rates=False)
    _, _, Phi = con.constraint_jacobian(m, cache)
    assert np.linalg.norm(Phi) < 1e-10


def test_constraint_jacobian_rank(default_model):
    m = default_model
    cd = con.constraint_data(m, kin.forward_kinematics(m, m.anchor_q, np.zeros(16)))
    assert cd.A.shape == (12, 16)
    assert cd.rank == 12


def test_feasible_velocity_annihilated(default_model):
    m = default_model
    rng = np.random.default_rng(82)
    q, qd = consistent_state(m, rng)
    cache = kin.forward_kinematics(m, q, qd)
    cd = con.constraint_data(m, cache)
    assert np.linalg.norm(cd.A @ qd) < 1e-10


def test_residual_rate_matches_jacobian(default_model):
    # finite difference of Phi along qd equals A qd at a consistent state
    m = default_model
    rng = np.random.default_rng(83)
    q, _ = consistent_state(m, rng)
    qd = rng.standard_normal(16)
    eps = 1e-7

    def phi_at(qq):
        cache = kin.forward_kinematics(m, qq, rates=False)
        _, _, Phi = con.constraint_jacobian(m, cache)
        return Phi

    fd = (phi_at(q + eps * qd) - phi_at(q - eps * qd)) / (2 * eps)
    cache = kin.forward_kinematics(m, q, qd)
    A, _, _ = con.constraint_jacobian(m, cache)
    assert np.max(np.abs(fd - A @ qd)) < 1e-6


def test_constraint_jacobian_rate_matches_central_difference(default_model):
    m = default_model
    rng = np.random.default_rng(84)
    q, qd = consistent_state(m, rng)
    dt = 1e-6
    cache = kin.forward_kinematics(m, q, qd)
    _, A_dot, _ = con.constraint_jacobian(m, cache)
    Ap, _, _ = con.constraint_jacobian(
        m, kin.forward_kinematics(m, q + dt * qd, rates=False)
    )
    Am, _, _ = con.constraint_jacobian(
        m, kin.forward_kinematics(m, q - dt * qd, rates=False)
    )
    assert np.max(np.abs(A_dot - (Ap - Am) / (2 * dt))) < 1e-5


def test_projector_canonical_block():
    A = np.hstack([np.eye(12), np.zeros((12, 4))])
    P, rank, _ = con.projector(A)
    expected = np.zeros((16, 16))
    expected[12:, 12:] = np.eye(4)
    np.testing.assert_allclose(P, expected, atol=1e-14)
    assert rank == 12


def test_projector_zero_matrix():
    P, rank, _ = con.projector(np.zeros((12, 16)))
    np.testing.assert_allclose(P, np.eye(16))
    assert rank == 0


def test_projector_identities_random():
    rng = np.random.default_rng(85)
    for _ in range(50):
        A = rng.standard_normal((12, 16))
        P, rank, _ = con.projector(A)
        assert rank == 12
        assert np.linalg.norm(P @ P - P) < 1e-10
        assert np.linalg.norm(P.T - P) < 1e-10
        assert np.linalg.norm(A @ P) < 1e-10
        assert np.linalg.norm(P @ A.T) < 1e-10


def test_projector_identities_on_model_states(default_model):
    m = default_model
    rng = np.random.default_rng(86)
    for _ in range(10):
        q, _ = consistent_state(m, rng)
        cd = con.constraint_data(m, kin.forward_kinematics(m, q, np.zeros(16)))
        assert np.linalg.norm(cd.P @ cd.P - cd.P, ord="fro") < 1e-10
        assert np.linalg.norm(cd.P.T - cd.P, ord="fro") < 1e-10
        assert np.linalg.norm(cd.A @ cd.P, ord="fro") < 1e-10


def equilibrium_tension(model, q, qd, cd, d):
    """Generalized force that exactly balances the dynamics at rest."""
    return d.K @ q + d.D @ qd - d.F_g - d.F_ext


def test_constrained_accel_equilibrium(default_model):
    m = default_model
    rng = np.random.default_rng(87)
    q, _ = consistent_state(m, rng)
    qd = np.zeros(16)
    cache = kin.forward_kinematics(m, q, qd)
    cd = con.constraint_data(m, cache)
    d = dyn.assemble_dynamics(m, cache, m.theta_true)
    tau = equilibrium_tension(m, q, qd, cd, d)
    qdd, lam = con.constrained_accel(m, d, cd, q, qd, tau)
    assert np.linalg.norm(qdd) < 1e-8
    assert np.linalg.norm(cd.A.T @ lam) < 1e-6  # no residual reaction needed


def test_constrained_accel_satisfies_acceleration_constraint(default_model):
    m = default_model
    rng = np.random.default_rng(88)
    q, qd = consistent_state(m, rng)
    cache = kin.forward_kinematics(m, q, qd)
    cd = con.constraint_data(m, cache)
    d = dyn.assemble_dynamics(m, cache, m.theta_true)
    tau = 0.01 * rng.standard_normal(16)
    qdd, _ = con.constrained_accel(m, d, cd, q, qd, tau)
    # Phi and A qd are already ~0, so the Baumgarte terms vanish
    assert np.linalg.norm(cd.A @ qdd + cd.A_dot @ qd) < 1e-8


def test_projected_equation_annihilates_multipliers(default_model):
    m = default_model
    rng = np.random.default_rng(89)
    q, qd = consistent_state(m, rng)
    cache = kin.forward_kinematics(m, q, qd)
    cd = con.constraint_data(m, cache)
    d = dyn.assemble_dynamics(m, cache, m.theta_true)
    tau = 0.01 * rng.standard_normal(16)
    qdd, lam = con.constrained_accel(m, d, cd, q, qd, tau)
    residual = cd.P @ (
        d.M @ qdd + d.C @ qd + d.K @ q + d.D @ qd - tau - d.F_g - d.F_ext
    )
    assert np.linalg.norm(residual) < 1e-8


def test_multiplier_matches_independent_formula(default_model):
    m = default_model
    rng = np.random.default_rng(90)
    q, qd = consistent_state(m, rng)
    cache = kin.forward_kinematics(m, q, qd)
    cd = con.constraint_data(m, cache)
    d = dyn.assemble_dynamics(m, cache, m.theta_true)
    tau = 0.02 * rng.standard_normal(16)
    qdd, lam = con.constrained_accel(m, d, cd, q, qd, tau)
    h = tau + d.F_ext + d.F_g - d.C @ qd - d.K @ q - d.D @ qd
    Minv = np.linalg.inv(d.M)
    S = cd.A @ Minv @ cd.A.T
    stab = (
        -cd.A_dot @ qd
        - 2 * con.BAUMGARTE_ALPHA * (cd.A @ qd)
        - con.BAUMGARTE_BETA**2 * cd.Phi
    )
    lam_ref = np.linalg.pinv(S) @ (stab - cd.A @ Minv @ h)
    np.testing.assert_allclose(lam, lam_ref, atol=1e-8 * max(1.0, np.max(np.abs(lam_ref))))


def test_velocity_projection_restores_feasibility(default_model):
    m = default_model
    rng = np.random.default_rng(91)
    q, qd = consistent_state(m, rng)
    cache = kin.forward_kinematics(m, q, qd)
    cd = con.constraint_data(m, cache)
    d = dyn.assemble_dynamics(m, cache, m.theta_true)
    qd_bad = qd + 1e-3 * rng.standard_normal(16)
    qd_fixed = con.project_velocity(d.M, cd.A, qd_bad)
    assert np.linalg.norm(cd.A @ qd_fixed) < 1e-12
    # the projection only removes constraint-violating motion
    assert np.linalg.norm(cd.A @ (qd_bad - qd_fixed)) == pytest.approx(
        np.linalg.norm(cd.A @ qd_bad), rel=1e-9
    )


def test_closure_failure_reports_residual(default_model):
    m = default_model
    with pytest.raises(con.ClosureError) as err:
        con.assemble_closure(m, m.anchor_q + 10.0, max_iter=1)
    assert err.value.residual > 0.0
