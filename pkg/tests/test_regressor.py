import numpy as np
import pytest

from gvssim import dynamics as dyn
from gvssim import kinematics as kin
from gvssim import regressor as reg
from gvssim.liegroup import exp_so3, Pose
from gvssim.model import build_system

from conftest import random_configuration


def cache_at(model, q, qd=None):
    if qd is None:
        qd = np.zeros(model.n_coords)
    return kin.forward_kinematics(model, q, qd)


def random_theta(rng, n_links=3):
    return np.abs(rng.standard_normal(4 * n_links)) + 0.05


def test_selector_completeness(default_model):
    # assembling with the explicit selector decomposition reproduces the
    # direct diagonal screw inertia
    m = default_model
    rng = np.random.default_rng(60)
    q = random_configuration(m, rng)
    cache = cache_at(m, q)
    theta = random_theta(rng)
    selectors = dyn.selector_matrices()
    n = m.n_coords
    M_sel = np.zeros((n, n))
    for k in range(m.n_links):
        tab = m.tables[k]
        lk = cache.links[k]
        s = m.coord_slices[k]
        for g, st in enumerate(tab.gauss_stations):
            J = lk.J[st]
            w = tab.gauss_weights[g]
            for i, E in enumerate(selectors):
                M_sel[s, s] += w * theta[4 * k + i] * (J.T @ E @ J)
    M_direct = dyn.assemble_mass(m, cache, theta)
    np.testing.assert_allclose(M_sel, M_direct, atol=1e-12)


def test_regressor_M_zero_argument(default_model):
    m = default_model
    cache = cache_at(m, random_configuration(m, np.random.default_rng(61)))
    Y = reg.regressor_M(m, cache, np.zeros(16))
    np.testing.assert_allclose(Y, np.zeros((16, 12)))


def test_regressor_M_matches_assembly(default_model):
    m = default_model
    rng = np.random.default_rng(62)
    for _ in range(100):
        q = random_configuration(m, rng)
        a = rng.standard_normal(16)
        theta = random_theta(rng)
        cache = cache_at(m, q)
        lhs = reg.regressor_M(m, cache, a) @ theta
        rhs = dyn.assemble_mass(m, cache, theta) @ a
        assert np.max(np.abs(lhs - rhs)) < 1e-10 * max(1.0, np.max(np.abs(rhs)))


def test_regressor_M_additive(default_model):
    m = default_model
    rng = np.random.default_rng(63)
    cache = cache_at(m, random_configuration(m, rng))
    a1, a2 = rng.standard_normal(16), rng.standard_normal(16)
    Y = reg.regressor_M
    np.testing.assert_allclose(
        Y(m, cache, a1 + a2), Y(m, cache, a1) + Y(m, cache, a2), atol=1e-12
    )


def test_regressor_C_zero_cases(default_model):
    m = default_model
    rng = np.random.default_rng(64)
    q = random_configuration(m, rng)
    # zero state velocity -> zero regardless of the argument
    cache0 = cache_at(m, q, np.zeros(16))
    np.testing.assert_allclose(
        reg.regressor_C(m, cache0, rng.standard_normal(16)), np.zeros((16, 12)),
        atol=1e-18,
    )
    # zero argument -> zero
    cache = cache_at(m, q, rng.standard_normal(16))
    np.testing.assert_allclose(
        reg.regressor_C(m, cache, np.zeros(16)), np.zeros((16, 12)), atol=1e-18
    )


def test_regressor_C_matches_assembly(default_model):
    m = default_model
    rng = np.random.default_rng(65)
    for _ in range(50):
        q = random_configuration(m, rng)
        qd = rng.standard_normal(16)
        v = rng.standard_normal(16)
        theta = random_theta(rng)
        cache = cache_at(m, q, qd)
        lhs = reg.regressor_C(m, cache, v) @ theta
        rhs = dyn.assemble_coriolis(m, cache, theta) @ v
        assert np.max(np.abs(lhs - rhs)) < 1e-10 * max(1.0, np.max(np.abs(rhs)))


def test_regressor_g_zero_gravity():
    from conftest import make_cantilever

    m = make_cantilever(gravity=(0, 0, 0, 0, 0, 0))
    cache = cache_at(m, random_configuration(m, np.random.default_rng(66)))
    np.testing.assert_allclose(reg.regressor_g(m, cache), np.zeros((4, 4)))


def test_regressor_g_matches_assembly(default_model):
    m = default_model
    rng = np.random.default_rng(67)
    for _ in range(50):
        q = random_configuration(m, rng)
        theta = random_theta(rng)
        cache = cache_at(m, q)
        lhs = reg.regressor_g(m, cache) @ theta
        rhs = dyn.gravity_force(m, cache, theta)
        assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1.0, np.max(np.abs(rhs)))


def test_regressor_g_frame_covariance(default_model):
    # rotating gravity and every base frame together leaves the generalized
    # gravity load unchanged
    m = default_model
    R = exp_so3(np.array([0.3, -0.7, 0.5]))
    g_rot = np.concatenate((R @ m.gravity[:3], R @ m.gravity[3:]))
    rotated = build_system(
        links=m.links,
        base_poses=tuple(Pose(R @ b.R, R @ b.p) for b in m.base_poses),
        loop_joints=m.loop_joints,
        tendons=m.tendons,
        gravity=g_rot,
        inertia_scale=m.inertia_scale,
        beta_damping=m.beta_damping,
        anchor_q=m.anchor_q,
    )
    rng = np.random.default_rng(68)
    q = random_configuration(m, rng)
    theta = random_theta(rng)
    f_orig = dyn.gravity_force(m, cache_at(m, q), theta)
    f_rot = dyn.gravity_force(rotated, cache_at(rotated, q), theta)
    np.testing.assert_allclose(f_rot, f_orig, atol=1e-9)
    Y_orig = reg.regressor_g(m, cache_at(m, q))
    Y_rot = reg.regressor_g(rotated, cache_at(rotated, q))
    np.testing.assert_allclose(Y_rot @ theta, Y_orig @ theta, atol=1e-9)


def test_control_regressor_zero_theta(default_model):
    m = default_model
    rng = np.random.default_rng(69)
    cache = cache_at(m, random_configuration(m, rng), rng.standard_normal(16))
    Y = reg.control_regressor(m, cache, rng.standard_normal(16), rng.standard_normal(16))
    np.testing.assert_allclose(Y @ np.zeros(12), np.zeros(16))


def test_control_regressor_at_state_equals_combined(default_model):
    # with reference arguments equal to the state, Y theta reproduces the
    # equation-of-motion inertial terms
    m = default_model
    rng = np.random.default_rng(70)
    q = random_configuration(m, rng)
    qd = rng.standard_normal(16)
    qdd = rng.standard_normal(16)
    theta = random_theta(rng)
    cache = cache_at(m, q, qd)
    d = dyn.assemble_dynamics(m, cache, theta)
    lhs = reg.control_regressor(m, cache, qd, qdd) @ theta
    rhs = d.M @ qdd + d.C @ qd - d.F_g
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * max(1.0, np.max(np.abs(rhs))))


def test_control_regressor_identity_random_arguments(default_model):
    m = default_model
    rng = np.random.default_rng(71)
    for _ in range(50):
        q = random_configuration(m, rng)
        qd = rng.standard_normal(16)
        v = rng.standard_normal(16)
        a = rng.standard_normal(16)
        theta = random_theta(rng)
        cache = cache_at(m, q, qd)
        d = dyn.assemble_dynamics(m, cache, theta)
        lhs = reg.control_regressor(m, cache, v, a) @ theta
        rhs = d.M @ a + d.C @ v - d.F_g
        denom = max(np.linalg.norm(d.M @ a), 1e-12)
        assert np.linalg.norm(lhs - rhs) / denom < 1e-9
