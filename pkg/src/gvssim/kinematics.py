"""Forward kinematics along each backbone by Magnus stepping, geometric
Jacobians and their time derivatives, and the task output (object midpoint
position and its Jacobian).

Jacobians are propagated with the exact differential of the discrete
exponential chain: across one interval with increment Omega(q),

    J <- Ad(exp(Omega))^-1 (J + T(Omega) dOmega/dq),

where T is the right tangent (dexp) operator.  The time derivative follows by
differentiating the same recursion, so J and Jdot are consistent with the
discrete flow to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .liegroup import (
    Pose,
    ad,
    adjoint_inv,
    exp_se3,
    magnus_from_samples,
    tangent_right,
)
from .model import SystemModel

_SQ3_12 = np.sqrt(3.0) / 12.0
_GAUSS2 = (0.5 - np.sqrt(3.0) / 6.0, 0.5 + np.sqrt(3.0) / 6.0)


def tangent_with_rate(Omega, Omega_dot, tol=1e-13, max_terms=24):
    """Right tangent operator T(Omega) and its time derivative along
    Omega_dot, from one augmented 12x12 power series.

    The block matrix [[A, Adot], [0, A]] with A = -ad(Omega) has k-th power
    [[A^k, d(A^k)], [0, A^k]], so summing its series gives T in the diagonal
    blocks and dT/dt in the upper-right block.
    """
    aug = np.zeros((12, 12))
    A = -ad(Omega)
    aug[:6, :6] = A
    aug[6:, 6:] = A
    aug[:6, 6:] = -ad(Omega_dot)
    out = np.eye(12)
    term = np.eye(12)
    for k in range(1, max_terms):
        term = term @ aug / (k + 1.0)
        out += term
        if np.max(np.abs(term)) < tol:
            break
    return out[:6, :6], out[:6, 6:]


@dataclass
class LinkKinematics:
    """Per-station kinematic data of one link; columns of J/Jdot are the
    link's own coordinates."""

    R: np.ndarray       # (n_st, 3, 3)
    p: np.ndarray       # (n_st, 3)
    xi: np.ndarray      # (n_st, 6)
    J: np.ndarray       # (n_st, 6, nk)
    Jdot: np.ndarray | None
    eta: np.ndarray | None

    def pose(self, station: int) -> Pose:
        return Pose(self.R[station], self.p[station])


@dataclass
class KinematicsCache:
    q: np.ndarray
    qd: np.ndarray | None
    links: list[LinkKinematics]

    def tip_pose(self, model: SystemModel, link: int) -> Pose:
        return self.links[link].pose(model.tables[link].tip_station)


class _Chain:
    """Sequential pose/Jacobian/Jacobian-rate propagation along one link."""

    def __init__(self, base: Pose, nk: int, rates: bool, with_J: bool):
        self.R = base.R.copy()
        self.p = base.p.copy()
        self.with_J = with_J
        self.rates = rates
        self.J = np.zeros((6, nk)) if with_J else None
        self.Jdot = np.zeros((6, nk)) if rates else None

    def step(self, Omega, Z, Omega_dot=None, Zdot=None):
        # J <- Ad(E)^-1 J + T(Omega) Z, with vee(E^-1 dE) = T(Omega) dOmega
        E = exp_se3(Omega)
        if self.with_J:
            AdEinv = adjoint_inv(E)
            if self.rates:
                T, Tdot = tangent_with_rate(Omega, Omega_dot)
                nu = T @ Omega_dot
                AdJ = AdEinv @ self.J
                inner = AdEinv @ self.Jdot - ad(nu) @ AdJ + Tdot @ Z
                if Zdot is not None:
                    inner = inner + T @ Zdot
                self.J = AdJ + T @ Z
                self.Jdot = inner
            else:
                self.J = AdEinv @ self.J + tangent_right(Omega) @ Z
        # g <- g * E
        self.p = self.R @ E.p + self.p
        self.R = self.R @ E.R


def _link_kinematics(model: SystemModel, link: int, q, qd, rates, with_J=True):
    spec = model.links[link]
    tab = model.tables[link]
    nk = spec.n_coords
    off = 6 if spec.free_base_joint else 0
    q_local = q[model.coord_slices[link]]
    q_strain = q_local[off:]
    qd_local = qd[model.coord_slices[link]] if qd is not None else None

    n_st = len(tab.stations_X)
    out = LinkKinematics(
        R=np.empty((n_st, 3, 3)),
        p=np.empty((n_st, 3)),
        xi=tab.B_station @ q_strain + spec.xi_star,
        J=np.empty((n_st, 6, nk)) if with_J else np.empty((n_st, 0, 0)),
        Jdot=np.empty((n_st, 6, nk)) if rates else None,
        eta=np.empty((n_st, 6)) if rates else None,
    )

    chain = _Chain(model.base_poses[link], nk, rates, with_J)
    station = 0
    if spec.free_base_joint:
        Z = np.zeros((6, nk))
        Z[:, :6] = np.eye(6)
        chain.step(
            q_local[:6],
            Z,
            qd_local[:6] if rates else None,
            None,
        )
        _record(out, chain, station, qd_local, rates, with_J)
        station += 1

    xi_star = spec.xi_star
    for j in range(len(tab.interval_h)):
        h = tab.interval_h[j]
        B1 = tab.B_colloc[j, 0]
        B2 = tab.B_colloc[j, 1]
        xi1 = B1 @ q_strain + xi_star
        xi2 = B2 @ q_strain + xi_star
        Omega = magnus_from_samples(xi1, xi2, h)
        Omega_dot = None
        Zdot = None
        if with_J:
            Z = np.zeros((6, nk))
            Z[:, off:] = 0.5 * h * (B1 + B2) + (_SQ3_12 * h * h) * (
                ad(xi1) @ B2 - ad(xi2) @ B1
            )
            if rates:
                xid1 = B1 @ qd_local[off:]
                xid2 = B2 @ qd_local[off:]
                Zdot = np.zeros((6, nk))
                Zdot[:, off:] = (_SQ3_12 * h * h) * (ad(xid1) @ B2 - ad(xid2) @ B1)
                Omega_dot = Z @ qd_local
        else:
            Z = None
        chain.step(Omega, Z, Omega_dot, Zdot)
        _record(out, chain, station, qd_local, rates, with_J)
        station += 1
    return out


def _record(out, chain, station, qd_local, rates, with_J):
    out.R[station] = chain.R
    out.p[station] = chain.p
    if with_J:
        out.J[station] = chain.J
        if rates:
            out.Jdot[station] = chain.Jdot
            out.eta[station] = chain.J @ qd_local


def forward_kinematics(model: SystemModel, q, qd=None, rates=None,
                       with_jacobians=True) -> KinematicsCache:
    """Chain Magnus increments from each base to every station of every link.

    With ``qd`` given (and ``rates`` not disabled) the cache also carries
    Jacobian time derivatives and body velocities.
    """
    q = np.asarray(q, dtype=float)
    qd = None if qd is None else np.asarray(qd, dtype=float)
    if rates is None:
        rates = qd is not None
    links = [
        _link_kinematics(model, k, q, qd, rates, with_jacobians)
        for k in range(model.n_links)
    ]
    return KinematicsCache(q=q, qd=qd, links=links)


def embed_columns(model: SystemModel, link: int, local: np.ndarray) -> np.ndarray:
    """Scatter link-local Jacobian columns into the global coordinate width."""
    out = np.zeros(local.shape[:-1] + (model.n_coords,))
    out[..., model.coord_slices[link]] = local
    return out


def strain_at(model: SystemModel, q, link: int, X: float) -> np.ndarray:
    """Strain twist xi(X) = B(X) q + xi* on one link."""
    spec = model.links[link]
    if not 0.0 <= X <= spec.length:
        raise ValueError(f"abscissa {X} outside [0, {spec.length}]")
    q_strain = np.asarray(q, dtype=float)[model.strain_slice(link)]
    return spec.basis.evaluate(X, spec.length) @ q_strain + spec.xi_star


def kinematics_at(model: SystemModel, q, link: int, X: float, qd=None):
    """Pose, strain, Jacobian (and rates, if qd is given) at an arbitrary
    abscissa of one link.  Slow path: re-chains from the base."""
    spec = model.links[link]
    if not 0.0 <= X <= spec.length:
        raise ValueError(f"abscissa {X} outside [0, {spec.length}]")
    q = np.asarray(q, dtype=float)
    qd = None if qd is None else np.asarray(qd, dtype=float)
    rates = qd is not None
    tab = model.tables[link]
    nk = spec.n_coords
    off = 6 if spec.free_base_joint else 0
    q_local = q[model.coord_slices[link]]
    q_strain = q_local[off:]
    qd_local = qd[model.coord_slices[link]] if rates else None

    chain = _Chain(model.base_poses[link], nk, rates, True)
    if spec.free_base_joint:
        Z = np.zeros((6, nk))
        Z[:, :6] = np.eye(6)
        chain.step(q_local[:6], Z, qd_local[:6] if rates else None, None)

    knots = np.concatenate(([0.0], np.cumsum(tab.interval_h)))
    for j in range(len(tab.interval_h)):
        x0, x1 = knots[j], knots[j + 1]
        if X <= x0 + 1e-14:
            break
        hi = min(x1, X)
        h = hi - x0
        B1 = spec.basis.evaluate(x0 + _GAUSS2[0] * h, spec.length)
        B2 = spec.basis.evaluate(x0 + _GAUSS2[1] * h, spec.length)
        xi1 = B1 @ q_strain + spec.xi_star
        xi2 = B2 @ q_strain + spec.xi_star
        Omega = magnus_from_samples(xi1, xi2, h)
        Z = np.zeros((6, nk))
        Z[:, off:] = 0.5 * h * (B1 + B2) + (_SQ3_12 * h * h) * (
            ad(xi1) @ B2 - ad(xi2) @ B1
        )
        Omega_dot = None
        Zdot = None
        if rates:
            xid1 = B1 @ qd_local[off:]
            xid2 = B2 @ qd_local[off:]
            Zdot = np.zeros((6, nk))
            Zdot[:, off:] = (_SQ3_12 * h * h) * (ad(xid1) @ B2 - ad(xid2) @ B1)
            Omega_dot = Z @ qd_local
        chain.step(Omega, Z, Omega_dot, Zdot)
        if hi >= X - 1e-14:
            break

    g = Pose(chain.R, chain.p)
    xi = spec.basis.evaluate(X, spec.length) @ q_strain + spec.xi_star
    J = embed_columns(model, link, chain.J)
    if not rates:
        return g, xi, J, None, None
    Jdot = embed_columns(model, link, chain.Jdot)
    return g, xi, J, Jdot, J @ qd


def pose_at(model: SystemModel, q, link: int, X: float) -> Pose:
    g, *_ = kinematics_at(model, q, link, X)
    return g


def jacobian(model: SystemModel, q, link: int, X: float) -> np.ndarray:
    """Geometric body Jacobian (6 x n) of the frame at abscissa X."""
    _, _, J, _, _ = kinematics_at(model, q, link, X)
    return J


def jacobian_dot(model: SystemModel, q, qd, link: int, X: float) -> np.ndarray:
    """Analytic time derivative of :func:`jacobian` along qd."""
    _, _, _, Jdot, _ = kinematics_at(model, q, link, X, qd=qd)
    return Jdot


def object_link(model: SystemModel) -> int:
    """Index of the manipulated link (the one with a free base joint)."""
    free = [k for k, spec in enumerate(model.links) if spec.free_base_joint]
    if len(free) != 1:
        raise ValueError("model does not have exactly one free-base link")
    return free[0]


def midpoint_station(model: SystemModel, link: int) -> int:
    """Station index at the middle of a link (requires a node at L/2)."""
    tab = model.tables[link]
    X_mid = 0.5 * model.links[link].length
    hits = np.flatnonzero(np.abs(tab.stations_X - X_mid) < 1e-12)
    if len(hits) == 0:
        raise ValueError("no quadrature station at the link midpoint")
    return int(hits[0])


def task_from_cache(model: SystemModel, cache: KinematicsCache):
    """Midpoint position of the object and its world-frame translational
    Jacobian, from a built cache."""
    k = object_link(model)
    st = midpoint_station(model, k)
    lk = cache.links[k]
    x = lk.p[st].copy()
    J_task = embed_columns(model, k, lk.R[st] @ lk.J[st][3:, :])
    return x, J_task


def task_output(model: SystemModel, q) -> np.ndarray:
    """World position of the object midpoint."""
    k = object_link(model)
    st = midpoint_station(model, k)
    cache = forward_kinematics(model, q, with_jacobians=False)
    return cache.links[k].p[st].copy()


def task_jacobian(model: SystemModel, q) -> np.ndarray:
    """3 x n map from generalized velocities to the midpoint world velocity."""
    cache = forward_kinematics(model, q, rates=False)
    _, J_task = task_from_cache(model, cache)
    return J_task
