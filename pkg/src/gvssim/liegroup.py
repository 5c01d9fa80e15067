"""SE(3)/se(3) kernel: hat/vee maps, exponential and logarithm, adjoint and
coadjoint operators, tangent (dexp) operators, and the fourth-order Magnus
increment used to integrate backbone kinematics.

Twist convention, fixed project-wide: a twist is a flat 6-vector with the
angular block in components 0:3 and the linear block in components 3:6.
This matches the screw inertia layout diag(rho*Jx, rho*Jy, rho*Jz,
rho*A, rho*A, rho*A) used by the dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Series switch for the scalar coefficient functions of the Rodrigues
# formulas.  Below this angle the closed forms lose digits to cancellation.
_SMALL_ANGLE = 1e-4
# Orthonormality drift beyond which a rotation matrix is re-polarized.
_ORTHO_TOL = 1e-9

ANGULAR = slice(0, 3)
LINEAR = slice(3, 6)


def skew(v):
    """3x3 cross-product matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def unskew(m):
    """Inverse of :func:`skew` (antisymmetric part is used)."""
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def hat(xi):
    """Map a twist to its 4x4 matrix representation in se(3)."""
    out = np.zeros((4, 4))
    out[:3, :3] = skew(xi[ANGULAR])
    out[:3, 3] = xi[LINEAR]
    return out


def vee(m):
    """Inverse of :func:`hat`."""
    out = np.empty(6)
    out[ANGULAR] = unskew(m[:3, :3])
    out[LINEAR] = m[:3, 3]
    return out


def orthonormalize(R):
    """Nearest rotation matrix (polar factor via SVD)."""
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0.0:
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out


@dataclass(slots=True)
class Pose:
    """Rigid transform: rotation matrix ``R`` and translation ``p`` (meters)."""

    R: np.ndarray
    p: np.ndarray

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m) -> "Pose":
        return Pose(np.array(m[:3, :3]), np.array(m[:3, 3]))

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.R
        out[:3, 3] = self.p
        return out

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.R @ other.R, self.R @ other.p + self.p)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        Rt = self.R.T
        return Pose(Rt, -(Rt @ self.p))

    def apply(self, point):
        return self.R @ point + self.p

    def orthonormality_drift(self) -> float:
        return float(np.linalg.norm(self.R.T @ self.R - np.eye(3)))

    def renormalized(self) -> "Pose":
        """Return a copy with the rotation re-polarized if drift is large."""
        if self.orthonormality_drift() > _ORTHO_TOL:
            return Pose(orthonormalize(self.R), self.p.copy())
        return self

    def validate(self, tol: float = _ORTHO_TOL) -> None:
        if self.orthonormality_drift() > tol:
            raise ValueError("rotation lost orthonormality")
        if abs(np.linalg.det(self.R) - 1.0) > max(tol, 1e-9):
            raise ValueError("rotation determinant drifted from +1")


def _rot_coefficients(theta):
    """Coefficients (a, b, c) with R = I + a*W + b*W^2 and V = I + b*W + c*W^2,
    where W = skew(omega) for the unnormalized rotation vector."""
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0)
        b = 0.5 - t2 / 24.0 * (1.0 - t2 / 30.0)
        c = 1.0 / 6.0 - t2 / 120.0 * (1.0 - t2 / 42.0)
    else:
        s, cth = np.sin(theta), np.cos(theta)
        t2 = theta * theta
        a = s / theta
        # 1 - cos via half angle avoids cancellation near zero
        half = np.sin(0.5 * theta)
        b = 2.0 * half * half / t2
        c = (1.0 - a) / t2
        _ = cth
    return a, b, c


def exp_so3(omega):
    """Rotation matrix exponential of a rotation vector."""
    theta = float(np.linalg.norm(omega))
    a, b, _ = _rot_coefficients(theta)
    W = skew(omega)
    return np.eye(3) + a * W + b * (W @ W)


def exp_se3(xi) -> Pose:
    """Closed-form SE(3) exponential of a twist (Rodrigues rotation plus the
    translation integral)."""
    omega = xi[ANGULAR]
    v = xi[LINEAR]
    theta = float(np.linalg.norm(omega))
    a, b, c = _rot_coefficients(theta)
    W = skew(omega)
    W2 = W @ W
    R = np.eye(3) + a * W + b * W2
    V = np.eye(3) + b * W + c * W2
    return Pose(R, V @ v)


def log_so3(R):
    """Rotation vector of a rotation matrix (principal branch)."""
    cos_theta = float(np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0))
    theta = float(np.arccos(cos_theta))
    if theta < _SMALL_ANGLE:
        return unskew(R) * (1.0 + theta * theta / 6.0)
    if np.pi - theta < 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from the
        # dominant diagonal entry of R + I.
        diag = np.diagonal(R)
        k = int(np.argmax(diag))
        axis = np.zeros(3)
        axis[k] = np.sqrt(max(0.0, (diag[k] + 1.0) * 0.5))
        for j in range(3):
            if j != k:
                axis[j] = (R[k, j] + R[j, k]) / (4.0 * axis[k])
        axis /= np.linalg.norm(axis)
        # Resolve the sign using the antisymmetric remnant.
        w = unskew(R)
        if np.dot(w, axis) < 0.0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
    )


def log_se3(g: Pose):
    """Twist logarithm of a pose (inverse of :func:`exp_se3` near identity)."""
    omega = log_so3(g.R)
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    W2 = W @ W
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        coef = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
        Vinv = np.eye(3) - 0.5 * W + coef * W2
    else:
        a, b, _ = _rot_coefficients(theta)
        coef = (1.0 - 0.5 * a / b) / (theta * theta)
        Vinv = np.eye(3) - 0.5 * W + coef * W2
    out = np.empty(6)
    out[ANGULAR] = omega
    out[LINEAR] = Vinv @ g.p
    return out


def adjoint(g: Pose):
    """6x6 adjoint of a pose: maps body twists to the parent frame."""
    out = np.zeros((6, 6))
    out[:3, :3] = g.R
    out[3:, 3:] = g.R
    out[3:, :3] = skew(g.p) @ g.R
    return out


def adjoint_inv(g: Pose):
    """Adjoint of the inverse pose, without forming the inverse."""
    Rt = g.R.T
    out = np.zeros((6, 6))
    out[:3, :3] = Rt
    out[3:, 3:] = Rt
    out[3:, :3] = -Rt @ skew(g.p)
    return out


def ad(xi):
    """6x6 adjoint representation of se(3): ad(x) y = [x, y]."""
    Wo = skew(xi[ANGULAR])
    out = np.zeros((6, 6))
    out[:3, :3] = Wo
    out[3:, 3:] = Wo
    out[3:, :3] = skew(xi[LINEAR])
    return out


def coad(xi):
    """Coadjoint operator on se(3)*: coad(x) = -ad(x)^T."""
    return -ad(xi).T


def _cross3(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


def ad_apply(xi, y):
    """ad(xi) @ y without building the 6x6 matrix."""
    out = np.empty(6)
    _cross3(xi, y, out[:3])
    tmp = np.empty(3)
    _cross3(xi[3:], y, tmp)
    _cross3(xi, y[3:], out[3:])
    out[3:] += tmp
    return out


def coad_apply(xi, y):
    """coad(xi) @ y = -ad(xi)^T @ y without building the 6x6 matrix."""
    out = np.empty(6)
    tmp = np.empty(3)
    _cross3(xi, y, out[:3])
    _cross3(xi[3:], y[3:], tmp)
    out[:3] += tmp
    _cross3(xi, y[3:], out[3:])
    return out


def tangent_right(Omega, tol: float = 1e-16, max_terms: int = 30):
    """Right tangent (dexp) operator T(x) = sum_k (-ad_x)^k / (k+1)!.

    Satisfies vee(exp(-x^) d exp(x^)) = T(x) dx, the exact derivative of the
    exponential chart used for Magnus stepping and the free joint.
    """
    A = -ad(Omega)
    out = np.eye(6)
    term = np.eye(6)
    for k in range(1, max_terms):
        term = term @ A / (k + 1.0)
        out = out + term
        if np.max(np.abs(term)) < tol:
            break
    return out


def tangent_right_rate(Omega, Omega_dot, tol: float = 1e-16, max_terms: int = 30):
    """Time derivative of :func:`tangent_right` along Omega_dot.

    d/dt T(x) = sum_k (-1)^k/(k+1)! sum_{j<k} ad_x^j ad_xdot ad_x^{k-1-j}.
    """
    A = ad(Omega)
    B = ad(Omega_dot)
    # powers[j] = A^j, grown lazily
    powers = [np.eye(6)]
    out = np.zeros((6, 6))
    sign = 1.0
    factorial = 1.0
    for k in range(1, max_terms):
        sign = -sign
        factorial *= k + 1.0
        powers.append(powers[-1] @ A)
        acc = np.zeros((6, 6))
        for j in range(k):
            acc += powers[j] @ B @ powers[k - 1 - j]
        term = (sign / factorial) * acc
        out += term
        if np.max(np.abs(term)) < tol:
            break
    return out


def magnus_from_samples(xi1, xi2, h):
    """Fourth-order Magnus increment from the two Gauss collocation samples of
    the strain field over an interval of length h (Zanna collocation)."""
    return 0.5 * h * (xi1 + xi2) + (np.sqrt(3.0) * h * h / 12.0) * ad_apply(xi1, xi2)


_GAUSS2_OFFSETS = (0.5 - np.sqrt(3.0) / 6.0, 0.5 + np.sqrt(3.0) / 6.0)


def magnus_increment(xi_field, X0: float, h: float):
    """Fourth-order Magnus increment of g' = g * hat(xi) over [X0, X0 + h].

    ``xi_field`` maps an abscissa to a twist; it is sampled at the two-point
    Gauss abscissae of the interval.  Local error is O(h^5).
    """
    if h <= 0.0:
        raise ValueError("interval length must be positive")
    xi1 = np.asarray(xi_field(X0 + _GAUSS2_OFFSETS[0] * h), dtype=float)
    xi2 = np.asarray(xi_field(X0 + _GAUSS2_OFFSETS[1] * h), dtype=float)
    return magnus_from_samples(xi1, xi2, h)


def integrate_pose_fine(xi_field, X0: float, h: float, n_steps: int = 10_000) -> Pose:
    """Reference integrator for g' = g * hat(xi): many midpoint-exponential
    substeps.  Used as an independent oracle for the Magnus scheme."""
    g = Pose.identity()
    dx = h / n_steps
    for i in range(n_steps):
        xm = X0 + (i + 0.5) * dx
        g = g @ exp_se3(np.asarray(xi_field(xm), dtype=float) * dx)
        if (i & 1023) == 1023:
            g = g.renormalized()
    return g
