"""Task-space reference generation, sliding variable, the three projected
control laws (adaptive / nominal / baseline), the adaptation update, the
Lyapunov diagnostic, and least-squares tendon tension allocation.

The adaptive law commands, inside the feasible motion subspace,

    tau_p = P K q + P D qd - P F_ext + P Y(q, qd, qd_r, qdd_r) theta_hat - Ks s,

with s = qd - qd_r, qd_r = P Jtask^+ (xd_dot + Lambda e), and the estimate
update theta_hat' = theta_hat - dt * Gamma Y^T P s.  The nominal variant
freezes theta_hat; the baseline variant drops the regressor term entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANTS = ("adaptive", "nominal", "baseline")


def _check_spd(name, mat):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square")
    if np.max(np.abs(mat - mat.T)) > 1e-12 * max(1.0, np.max(np.abs(mat))):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat).min() <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    return mat


@dataclass
class Gains:
    """Controller gains; all matrices are validated symmetric positive
    definite at construction."""

    Lambda: np.ndarray
    Ks: np.ndarray
    Gamma: np.ndarray
    tension_bound: float = 20.0
    ref_velocity_max: float = np.inf

    def __post_init__(self):
        self.Lambda = _check_spd("Lambda", self.Lambda)
        self.Ks = _check_spd("Ks", self.Ks)
        self.Gamma = _check_spd("Gamma", self.Gamma)
        if self.tension_bound <= 0.0:
            raise ValueError("tension bound must be positive")
        if self.ref_velocity_max <= 0.0:
            raise ValueError("reference velocity bound must be positive")
        self.Gamma_inv = np.linalg.inv(self.Gamma)


def regulation_gains(n_coords: int = 16, n_params: int = 12,
                     ref_velocity_max: float = np.inf) -> Gains:
    """Default gain set for the set-point scenario."""
    return Gains(
        Lambda=1.5e5 * np.diag([20.0, 1.0, 5.0]),
        Ks=0.07 * np.eye(n_coords),
        Gamma=1e-4 * np.eye(n_params),
        tension_bound=20.0,
        ref_velocity_max=ref_velocity_max,
    )


def tracking_gains(n_coords: int = 16, n_params: int = 12,
                   ref_velocity_max: float = np.inf) -> Gains:
    """Default gain set for the trajectory-tracking scenario."""
    return Gains(
        Lambda=1e5 * np.eye(3),
        Ks=0.07 * np.eye(n_coords),
        Gamma=1e-4 * np.eye(n_params),
        tension_bound=20.0,
        ref_velocity_max=ref_velocity_max,
    )


@dataclass
class ControllerState:
    """Mutable per-run controller memory."""

    variant: str
    theta_hat: np.ndarray
    qd_r_prev: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown controller variant '{self.variant}'")
        self.theta_hat = np.asarray(self.theta_hat, dtype=float).copy()


def reference_velocity(x, xd_dot, x_d, Lambda, v_max: float = np.inf):
    """First-order reference x_r_dot = xd_dot + Lambda (x_d - x), with its
    magnitude saturated at v_max to keep the demanded motion realizable."""
    out = np.asarray(xd_dot, dtype=float) + Lambda @ (x_d - x)
    norm = float(np.linalg.norm(out))
    if norm > v_max:
        out = out * (v_max / norm)
    return out


def joint_reference(J_task, P, x_r_dot, qd_r_prev, dt, damping_rel: float = 1e-6):
    """Feasible joint-space reference velocity and its backward-difference
    acceleration.

    Returns (qd_r, qdd_r, diagnostics) where diagnostics carries the damped
    pseudoinverse condition number and the task-space residual of the
    projected reference.
    """
    U, sv, Vt = np.linalg.svd(J_task, full_matrices=False)
    lam = damping_rel * sv[0]
    inv = sv / (sv * sv + lam * lam)
    qd_r = P @ (Vt.T @ (inv * (U.T @ x_r_dot)))
    if qd_r_prev is None:
        qdd_r = np.zeros_like(qd_r)
    else:
        qdd_r = (qd_r - qd_r_prev) / dt
    diagnostics = {
        "task_cond": float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf,
        "task_residual": float(np.linalg.norm(J_task @ qd_r - x_r_dot)),
    }
    return qd_r, qdd_r, diagnostics


def sliding_variable(qd, qd_r, P=None, tol: float = 1e-8):
    """s = qd - qd_r; with P given, verifies the feasibility identity Ps = s."""
    s = np.asarray(qd, dtype=float) - np.asarray(qd_r, dtype=float)
    if P is not None:
        drift = float(np.linalg.norm(P @ s - s))
        if drift > tol:
            raise RuntimeError(
                f"sliding variable left the feasible subspace: |Ps - s| = {drift:.3e}"
            )
    return s


def control_law(variant, q, qd, K, D, P, Y, theta_hat, s, Ks, F_ext=None):
    """Projected control force for the requested variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown controller variant '{variant}'")
    tau_p = P @ (K @ q) + P @ (D @ qd) - Ks @ s
    if F_ext is not None:
        tau_p = tau_p - P @ F_ext
    if variant != "baseline":
        tau_p = tau_p + P @ (Y @ theta_hat)
    return tau_p


def adaptation_step(theta_hat, Y, P, s, Gamma, dt):
    """Explicit Euler update of the parameter estimate along the adaptation
    law theta_hat_dot = -Gamma Y^T P s."""
    return theta_hat - dt * (Gamma @ (Y.T @ (P @ s)))


def lyapunov_value(M, s, theta_hat, theta_true, Gamma_inv) -> float:
    """V = 0.5 s^T M s + 0.5 (theta_hat - theta_true)^T Gamma^-1 (...)."""
    err = np.asarray(theta_hat, dtype=float) - np.asarray(theta_true, dtype=float)
    return 0.5 * float(s @ (M @ s)) + 0.5 * float(err @ (Gamma_inv @ err))


def tension_allocation(P, H, tau_p, rcond: float = 1e-10):
    """Least-squares tendon tensions realizing the projected command:
    u = (P H)^+ tau_p, with the unrealizable remainder reported."""
    PH = P @ H
    u, *_ = np.linalg.lstsq(PH, tau_p, rcond=rcond)
    residual = float(np.linalg.norm(PH @ u - tau_p))
    return u, residual


def saturate(u, bound):
    """Clip tensions to the symmetric actuator bound."""
    return np.clip(u, -bound, bound)
