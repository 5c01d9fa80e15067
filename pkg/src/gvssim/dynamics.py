"""Generalized dynamics assembly by Gaussian quadrature over each link:
inertia, Coriolis, stiffness, damping, gravity, concentrated external
wrenches, the tendon actuation map, and tendon displacements.

The equations of motion read

    M(q) qdd + C(q, qd) qd + K q + D qd = tau + F_ext + F_g (+ constraints).

The Coriolis matrix is assembled in a skew-consistent factorization:
starting from the coadjoint form C0 = int J^T (Ms Jdot + coad(eta) Ms J) dX,
it is rebalanced to

    C = 0.5 Mdot + (w qd^T - qd w^T) / (qd^T qd),   w = (C0 - 0.5 Mdot) qd,

which leaves the Coriolis force C qd unchanged (since qd^T (C0 - 0.5 Mdot) qd
is identically zero) while making Mdot - 2C exactly skew-symmetric for every
vector, the property the adaptive-control energy argument relies on.  The
rebalancing is applied per inertial-parameter block, so the factorization
stays linear in the parameters and the regressors reproduce it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import KinematicsCache, kinematics_at
from .model import SystemModel

# rows selected by the four per-link inertial parameters (Jx, Jy, Jz, A)
SELECTOR_ROWS = (
    np.array([0]),
    np.array([1]),
    np.array([2]),
    np.array([3, 4, 5]),
)


def selector_matrices():
    """The four 6x6 diagonal selectors; they sum to the identity."""
    out = []
    for rows in SELECTOR_ROWS:
        E = np.zeros((6, 6))
        E[rows, rows] = 1.0
        out.append(E)
    return tuple(out)


def screw_inertia_diag(theta_block) -> np.ndarray:
    """Screw inertia diagonal (tx, ty, tz, tA, tA, tA) of one link."""
    tx, ty, tz, tA = theta_block
    return np.array([tx, ty, tz, tA, tA, tA])


@dataclass
class AssembledDynamics:
    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    D: np.ndarray
    F_g: np.ndarray
    F_ext: np.ndarray
    M_dot: np.ndarray = field(repr=False, default=None)


def _gauss_arrays(model, cache, link):
    tab = model.tables[link]
    lk = cache.links[link]
    g = tab.gauss_stations
    return tab.gauss_weights, lk.R[g], lk.p[g], lk.J[g], (
        lk.Jdot[g] if lk.Jdot is not None else None
    ), (lk.eta[g] if lk.eta is not None else None)


def _gravity_local(R, p, gravity):
    """Ad_{g}^{-1} applied to the spatial gravity twist, batched over stations."""
    g_ang = gravity[:3]
    g_lin = gravity[3:]
    out = np.empty((R.shape[0], 6))
    Rt = R.transpose(0, 2, 1)
    out[:, :3] = Rt @ g_ang
    out[:, 3:] = np.einsum("gij,gj->gi", Rt, g_lin - np.cross(p, g_ang))
    return out


def _coad_batch(eta, y):
    """coad(eta_g) @ y_g for stacked twists (g, 6)."""
    om, v = eta[:, :3], eta[:, 3:]
    out = np.empty_like(y)
    out[:, :3] = np.cross(om, y[:, :3]) + np.cross(v, y[:, 3:])
    out[:, 3:] = np.cross(om, y[:, 3:])
    return out


def assemble_mass(model: SystemModel, cache: KinematicsCache, theta) -> np.ndarray:
    """Generalized inertia: sum over links of int J^T Ms J dX."""
    n = model.n_coords
    M = np.zeros((n, n))
    for k in range(model.n_links):
        w, _, _, J, _, _ = _gauss_arrays(model, cache, k)
        m6 = screw_inertia_diag(model.theta_block(np.asarray(theta), k))
        s = model.coord_slices[k]
        M[s, s] += np.einsum("g,gri,r,grj->ij", w, J, m6, J, optimize=True)
    return M


def mass_rate(model: SystemModel, cache: KinematicsCache, theta) -> np.ndarray:
    """Analytic d/dt of the generalized inertia along the cached velocity."""
    n = model.n_coords
    Md = np.zeros((n, n))
    for k in range(model.n_links):
        w, _, _, J, Jdot, _ = _gauss_arrays(model, cache, k)
        m6 = screw_inertia_diag(model.theta_block(np.asarray(theta), k))
        s = model.coord_slices[k]
        half = np.einsum("g,gri,r,grj->ij", w, Jdot, m6, J, optimize=True)
        Md[s, s] += half + half.T
    return Md


def coriolis_coad_force(model: SystemModel, cache: KinematicsCache, theta) -> np.ndarray:
    """Coadjoint-form Coriolis force int J^T (Ms Jdot qd + coad(eta) Ms eta) dX."""
    qd = cache.qd
    n = model.n_coords
    f = np.zeros(n)
    for k in range(model.n_links):
        w, _, _, J, Jdot, eta = _gauss_arrays(model, cache, k)
        m6 = screw_inertia_diag(model.theta_block(np.asarray(theta), k))
        qd_l = qd[model.coord_slices[k]]
        rate = Jdot @ qd_l
        integrand = m6 * rate + _coad_batch(eta, m6 * eta)
        f[model.coord_slices[k]] += np.einsum(
            "g,gri,gr->i", w, J, integrand, optimize=True
        )
    return f


def skew_consistent_coriolis(M_dot, coad_force, qd):
    """Rebalanced Coriolis matrix from the inertia rate and the coadjoint-form
    Coriolis force; leaves C qd intact and makes Mdot - 2C skew."""
    C = 0.5 * M_dot.copy()
    nrm2 = float(qd @ qd)
    if nrm2 > 1e-280:
        w = coad_force - 0.5 * (M_dot @ qd)
        C += (np.outer(w, qd) - np.outer(qd, w)) / nrm2
    return C


def assemble_coriolis(model: SystemModel, cache: KinematicsCache, theta) -> np.ndarray:
    """Skew-consistent Coriolis matrix at the cached state."""
    if cache.qd is None:
        raise ValueError("Coriolis assembly needs a cache built with velocities")
    Md = mass_rate(model, cache, theta)
    f0 = coriolis_coad_force(model, cache, theta)
    return skew_consistent_coriolis(Md, f0, cache.qd)


def assemble_stiffness_damping(model: SystemModel):
    """Constant generalized stiffness and Kelvin-Voigt damping matrices."""
    return model.stiffness, model.damping


def gravity_force(model: SystemModel, cache: KinematicsCache, theta) -> np.ndarray:
    """Generalized gravity load int J^T Ms Ad_g^{-1} G dX summed over links."""
    n = model.n_coords
    f = np.zeros(n)
    for k in range(model.n_links):
        w, R, p, J, _, _ = _gauss_arrays(model, cache, k)
        m6 = screw_inertia_diag(model.theta_block(np.asarray(theta), k))
        grav = _gravity_local(R, p, model.gravity)
        f[model.coord_slices[k]] += np.einsum(
            "g,gri,gr->i", w, J, m6 * grav, optimize=True
        )
    return f


@dataclass(frozen=True)
class ConcentratedWrench:
    """Point wrench (moment first, then force) applied at backbone abscissa."""

    link: int
    X: float
    wrench: np.ndarray

    def __post_init__(self):
        if len(self.wrench) != 6:
            raise ValueError("wrench must be a 6-vector")


def external_force(model: SystemModel, q, wrenches) -> np.ndarray:
    """Sum of J(X)^T F_p over the applied concentrated wrenches."""
    f = np.zeros(model.n_coords)
    for wr in wrenches:
        spec = model.links[wr.link]
        if not 0.0 <= wr.X <= spec.length:
            raise ValueError(f"wrench abscissa {wr.X} outside link {wr.link}")
        _, _, J, _, _ = kinematics_at(model, q, wr.link, wr.X)
        f += J.T @ np.asarray(wr.wrench, dtype=float)
    return f


def tendon_map(model: SystemModel, cache: KinematicsCache | None = None) -> np.ndarray:
    """Generalized force per unit tension for each tendon channel."""
    return model.tendon_matrix


def _tendon_path_length(model, link, q, direction, offset):
    """Routed length of a straight tendon at local radial offset ``d``:
    int |v(X) + w(X) x d| dX with the link's quadrature."""
    spec = model.links[link]
    tab = model.tables[link]
    q_strain = q[model.strain_slice(link)]
    xi = tab.B_station[tab.gauss_stations] @ q_strain + spec.xi_star
    d = offset * direction
    tangent = xi[:, 3:] + np.cross(xi[:, :3], d[None, :])
    return float(tab.gauss_weights @ np.linalg.norm(tangent, axis=1))


def tendon_displacements(model: SystemModel, q) -> np.ndarray:
    """Signed half-difference of the two path-length changes in each
    antagonistic pair; zero in the reference configuration."""
    q = np.asarray(q, dtype=float)
    out = np.empty(len(model.tendons))
    for c, ch in enumerate(model.tendons):
        plus = _tendon_path_length(model, ch.link, q, ch.direction, ch.offset)
        minus = _tendon_path_length(model, ch.link, q, -ch.direction, ch.offset)
        out[c] = 0.5 * (plus - minus)
    return out


def assemble_dynamics(
    model: SystemModel,
    cache: KinematicsCache,
    theta,
    wrenches=(),
) -> AssembledDynamics:
    """One-pass assembly of every state-dependent generalized quantity."""
    theta = np.asarray(theta, dtype=float)
    qd = cache.qd
    n = model.n_coords
    M = np.zeros((n, n))
    Md = np.zeros((n, n))
    f_coad = np.zeros(n)
    F_g = np.zeros(n)
    for k in range(model.n_links):
        w, R, p, J, Jdot, eta = _gauss_arrays(model, cache, k)
        m6 = screw_inertia_diag(model.theta_block(theta, k))
        s = model.coord_slices[k]
        mJ = m6[None, :, None] * J
        M[s, s] += np.einsum("gri,grj->ij", J * w[:, None, None], mJ, optimize=True)
        half = np.einsum("gri,grj->ij", Jdot * w[:, None, None], mJ, optimize=True)
        Md[s, s] += half + half.T
        qd_l = qd[s]
        integrand = m6 * (Jdot @ qd_l) + _coad_batch(eta, m6 * eta)
        f_coad[s] += np.einsum("g,gri,gr->i", w, J, integrand, optimize=True)
        grav = _gravity_local(R, p, model.gravity)
        F_g[s] += np.einsum("g,gri,gr->i", w, J, m6 * grav, optimize=True)
    C = skew_consistent_coriolis(Md, f_coad, qd)
    F_ext = external_force(model, cache.q, wrenches) if wrenches else np.zeros(n)
    return AssembledDynamics(
        M=M, C=C, K=model.stiffness, D=model.damping, F_g=F_g, F_ext=F_ext, M_dot=Md
    )


def kinetic_energy(model: SystemModel, cache: KinematicsCache, theta) -> float:
    total = 0.0
    for k in range(model.n_links):
        w, _, _, _, _, eta = _gauss_arrays(model, cache, k)
        m6 = screw_inertia_diag(model.theta_block(np.asarray(theta), k))
        total += 0.5 * float(np.einsum("g,gr,r,gr->", w, eta, m6, eta))
    return total


def gravity_potential(model: SystemModel, cache: KinematicsCache, theta) -> float:
    """Potential of the distributed weight; gravity twist must be a pure
    linear acceleration for this to be meaningful."""
    g_lin = model.gravity[3:]
    total = 0.0
    for k in range(model.n_links):
        w, _, p, _, _, _ = _gauss_arrays(model, cache, k)
        rhoA = float(np.asarray(theta)[4 * k + 3])
        total -= rhoA * float(w @ (p @ g_lin))
    return total


def total_energy(model: SystemModel, cache: KinematicsCache, theta) -> float:
    """Kinetic + elastic + gravitational energy at the cached state."""
    q = cache.q
    elastic = 0.5 * float(q @ (model.stiffness @ q))
    return kinetic_energy(model, cache, theta) + elastic + gravity_potential(
        model, cache, theta
    )
