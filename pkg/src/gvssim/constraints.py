"""Loop-closure machinery: position-level residual, constraint Jacobian and
its rate, the orthogonal projector onto the feasible motion subspace,
consistent-configuration assembly, and the constrained forward dynamics.

Velocity-level closure for a rigid joint between frames a and b reads
B_p^T (J_a - Ad_{g_a^-1 g_b} J_b) qd = 0 with B_p = I (weld); stacking both
joints gives A(q) qd = 0.  The position residual of a joint is the twist
logarithm of the relative pose of its two frames, so d/dt Phi = A qd at
closure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import AssembledDynamics
from .kinematics import KinematicsCache, embed_columns, forward_kinematics, kinematics_at
from .liegroup import Pose, ad, adjoint, adjoint_inv, log_se3
from .model import SystemModel

BAUMGARTE_ALPHA = 20.0
BAUMGARTE_BETA = 20.0
SVD_RELATIVE_TOL = 1e-10


class ClosureError(RuntimeError):
    """Raised when the loop-closure Newton iteration fails to converge."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"loop closure did not converge: |Phi| = {residual:.3e} "
            f"after {iterations} iterations"
        )
        self.residual = residual
        self.iterations = iterations


@dataclass
class ConstraintData:
    A: np.ndarray
    A_dot: np.ndarray | None
    P: np.ndarray
    rank: int
    Phi: np.ndarray
    singular_values: np.ndarray


def _station_for(model: SystemModel, link: int, X: float) -> int | None:
    tab = model.tables[link]
    hits = np.flatnonzero(np.abs(tab.stations_X - X) < 1e-12)
    if len(hits) == 0:
        return None
    st = int(hits[0])
    if st == 0 and tab.base_station != 0 and X == 0.0:
        # fixed-base link stores no X=0 station; caller must use the slow path
        return None
    return st


def _joint_frame(model, cache, link, X, offset: Pose, rates: bool):
    """Pose, Jacobian, and rate of a constrained frame (backbone frame at X
    composed with a constant offset)."""
    st = _station_for(model, link, X)
    if st is not None:
        lk = cache.links[link]
        g = lk.pose(st)
        J = embed_columns(model, link, lk.J[st])
        Jdot = embed_columns(model, link, lk.Jdot[st]) if rates else None
    else:
        g, _, J, Jdot, _ = kinematics_at(model, cache.q, link, X, cache.qd)
    Ad_off_inv = adjoint_inv(offset)
    g_f = g @ offset
    J_f = Ad_off_inv @ J
    Jdot_f = Ad_off_inv @ Jdot if rates else None
    return g_f, J_f, Jdot_f


def constraint_jacobian(model: SystemModel, cache: KinematicsCache):
    """Stacked weld-joint constraint Jacobian A and its time derivative
    (A_dot is None when the cache has no velocities)."""
    rates = cache.qd is not None
    n = model.n_coords
    nc = model.n_constraints
    A = np.zeros((nc, n))
    A_dot = np.zeros((nc, n)) if rates else None
    Phi = np.zeros(nc)
    for i, joint in enumerate(model.loop_joints):
        g_a, J_a, Jd_a = _joint_frame(
            model, cache, joint.link_a, joint.X_a, joint.offset_a, rates
        )
        g_b, J_b, Jd_b = _joint_frame(
            model, cache, joint.link_b, joint.X_b, joint.offset_b, rates
        )
        rows = slice(6 * i, 6 * i + 6)
        h = g_a.inverse() @ g_b
        Ad_h = adjoint(h)
        A[rows] = J_a - Ad_h @ J_b
        Phi[rows] = log_se3(g_b.inverse() @ g_a)
        if rates:
            eta_a = J_a @ cache.qd
            eta_b = J_b @ cache.qd
            nu = eta_b - adjoint_inv(h) @ eta_a
            A_dot[rows] = Jd_a - Ad_h @ (ad(nu) @ J_b + Jd_b)
    return A, A_dot, Phi


def projector(A: np.ndarray, rtol: float = SVD_RELATIVE_TOL):
    """Orthogonal projector P = I - A^+ A onto the null space of A, with the
    numerical rank from a relative singular-value cutoff."""
    n = A.shape[1]
    if not np.any(A):
        return np.eye(n), 0, np.zeros(min(A.shape))
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(s > rtol * s[0]))
    Vr = Vt[:rank]
    P = np.eye(n) - Vr.T @ Vr
    return P, rank, s


def constraint_data(model: SystemModel, cache: KinematicsCache) -> ConstraintData:
    A, A_dot, Phi = constraint_jacobian(model, cache)
    P, rank, s = projector(A)
    return ConstraintData(
        A=A, A_dot=A_dot, P=P, rank=rank, Phi=Phi, singular_values=s
    )


def assemble_closure(
    model: SystemModel,
    q_guess,
    tol: float = 1e-10,
    max_iter: int = 100,
    damping: float = 1.0,
):
    """Damped Newton iteration on the position residual Phi(q) = 0.

    Uses minimal-norm pseudoinverse steps, so the result stays close to the
    guess along the unconstrained directions.
    """
    q = np.asarray(q_guess, dtype=float).copy()
    residual = np.inf
    for it in range(max_iter):
        cache = forward_kinematics(model, q, rates=False)
        A, _, Phi = constraint_jacobian(model, cache)
        residual = float(np.linalg.norm(Phi))
        if residual < tol:
            return q
        step, *_ = np.linalg.lstsq(A, Phi, rcond=SVD_RELATIVE_TOL)
        q -= damping * step
    raise ClosureError(residual, max_iter)


def constrained_accel(
    model: SystemModel,
    dyn: AssembledDynamics,
    cd: ConstraintData,
    q,
    qd,
    tau,
    alpha: float = BAUMGARTE_ALPHA,
    beta: float = BAUMGARTE_BETA,
):
    """Forward dynamics with loop-closure reactions.

    Solves M qdd = h + A^T lambda together with the Baumgarte-stabilized
    acceleration constraint A qdd = -A_dot qd - 2 alpha A qd - beta^2 Phi,
    through the Schur complement on the (positive definite) inertia.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    h = tau + dyn.F_ext + dyn.F_g - dyn.C @ qd - dyn.K @ q - dyn.D @ qd
    A = cd.A
    if A.shape[0] == 0:
        return np.linalg.solve(dyn.M, h), np.zeros(0)
    rhs_c = -cd.A_dot @ qd - 2.0 * alpha * (A @ qd) - beta * beta * cd.Phi

    # full saddle system: much better conditioned than its Schur complement
    n = dyn.M.shape[0]
    nc = A.shape[0]
    kkt = np.zeros((n + nc, n + nc))
    kkt[:n, :n] = dyn.M
    kkt[:n, n:] = -A.T
    kkt[n:, :n] = A
    rhs = np.concatenate((h, rhs_c))
    try:
        sol = np.linalg.solve(kkt, rhs)
        sol += np.linalg.solve(kkt, rhs - kkt @ sol)  # one refinement pass
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
        return sol[:n], sol[n:]
    except np.linalg.LinAlgError:
        pass

    # rank-deficient constraints: pseudoinverse of the Schur complement
    try:
        L = np.linalg.cholesky(dyn.M)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(
            "generalized inertia is not positive definite: "
            f"min eig {np.linalg.eigvalsh(dyn.M).min():.3e}"
        ) from exc

    def m_solve(B):
        return np.linalg.solve(L.T, np.linalg.solve(L, B))

    Minv_h = m_solve(h)
    Minv_At = m_solve(A.T)
    S = A @ Minv_At
    lam = np.linalg.pinv(S, rcond=SVD_RELATIVE_TOL) @ (rhs_c - A @ Minv_h)
    qdd = Minv_h + Minv_At @ lam
    return qdd, lam


def project_velocity(M: np.ndarray, A: np.ndarray, qd, refinements: int = 2):
    """Impulse-consistent removal of the constraint-violating velocity:
    qd <- qd - M^-1 A^T (A M^-1 A^T)^-1 A qd, iterated to push the residual
    to round-off despite the squared conditioning of the Schur complement."""
    qd = np.asarray(qd, dtype=float).copy()
    if A.shape[0] == 0:
        return qd
    L = np.linalg.cholesky(M)

    def m_solve(B):
        return np.linalg.solve(L.T, np.linalg.solve(L, B))

    Minv_At = m_solve(A.T)
    S = A @ Minv_At
    use_pinv = False
    try:
        S_factor = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        use_pinv = True
        S_pinv = np.linalg.pinv(S, rcond=SVD_RELATIVE_TOL)
    for _ in range(1 + refinements):
        viol = A @ qd
        if use_pinv:
            impulse = S_pinv @ viol
        else:
            impulse = np.linalg.solve(S_factor.T, np.linalg.solve(S_factor, viol))
        qd -= Minv_At @ impulse
    return qd
