"""Parameter-linear regressors: matrices Y_M, Y_C, Y_g and their combination
Y(q, qd, v, a) with Y theta = M(theta) a + C(theta) v - F_g(theta) for
arbitrary velocity/acceleration arguments.

Columns come in blocks of four per link (the Jx, Jy, Jz, A selector weights)
and are assembled from the same cached quadrature data as the dynamics, so
the identity against the assembled matrices holds to round-off.  The Coriolis
columns reproduce the skew-consistent factorization used by the plant.
"""

from __future__ import annotations

import numpy as np

from .dynamics import SELECTOR_ROWS, _coad_batch, _gauss_arrays, _gravity_local
from .kinematics import KinematicsCache
from .model import SystemModel


def _block_columns(model, link):
    return [4 * link + i for i in range(4)]


def regressor_M(model: SystemModel, cache: KinematicsCache, a) -> np.ndarray:
    """Inertia regressor: column (k, i) is (int_k J^T E_i J dX) a."""
    a = np.asarray(a, dtype=float)
    Y = np.zeros((model.n_coords, 4 * model.n_links))
    for k in range(model.n_links):
        w, _, _, J, _, _ = _gauss_arrays(model, cache, k)
        s = model.coord_slices[k]
        z = J @ a[s]
        for i, rows in enumerate(SELECTOR_ROWS):
            Y[s, 4 * k + i] = np.einsum(
                "g,gri,gr->i", w, J[:, rows, :], z[:, rows], optimize=True
            )
    return Y


def _block_mass_rate_action(model, cache, link, v):
    """Per-selector actions Mdot_{k,i} v (4 columns for one link)."""
    w, _, _, J, Jdot, _ = _gauss_arrays(model, cache, link)
    s = model.coord_slices[link]
    zv = J @ v[s]
    zdv = Jdot @ v[s]
    cols = []
    for rows in SELECTOR_ROWS:
        cols.append(
            np.einsum("g,gri,gr->i", w, Jdot[:, rows, :], zv[:, rows], optimize=True)
            + np.einsum("g,gri,gr->i", w, J[:, rows, :], zdv[:, rows], optimize=True)
        )
    return cols


def _block_coad_force(model, cache, link):
    """Per-selector coadjoint-form Coriolis forces C0_{k,i} qd."""
    w, _, _, J, Jdot, eta = _gauss_arrays(model, cache, link)
    s = model.coord_slices[link]
    rate = Jdot @ cache.qd[s]
    cols = []
    for rows in SELECTOR_ROWS:
        sel_rate = np.zeros_like(rate)
        sel_rate[:, rows] = rate[:, rows]
        sel_eta = np.zeros_like(eta)
        sel_eta[:, rows] = eta[:, rows]
        integrand = sel_rate + _coad_batch(eta, sel_eta)
        cols.append(np.einsum("g,gri,gr->i", w, J, integrand, optimize=True))
    return cols


def regressor_C(model: SystemModel, cache: KinematicsCache, v) -> np.ndarray:
    """Coriolis regressor: column (k, i) is C_{k,i}(q, qd) v in the
    skew-consistent factorization."""
    if cache.qd is None:
        raise ValueError("Coriolis regressor needs a cache built with velocities")
    v = np.asarray(v, dtype=float)
    qd = cache.qd
    nrm2 = float(qd @ qd)
    Y = np.zeros((model.n_coords, 4 * model.n_links))
    for k in range(model.n_links):
        md_v = _block_mass_rate_action(model, cache, k, v)
        if nrm2 > 1e-280:
            md_qd = _block_mass_rate_action(model, cache, k, qd)
            coad_qd = _block_coad_force(model, cache, k)
        s = model.coord_slices[k]
        for i in range(4):
            col = 0.5 * md_v[i]
            out = np.zeros(model.n_coords)
            out[s] = col
            if nrm2 > 1e-280:
                w_b = np.zeros(model.n_coords)
                w_b[s] = coad_qd[i] - 0.5 * md_qd[i]
                out += (w_b * (qd @ v) - qd * (w_b @ v)) / nrm2
            Y[:, 4 * k + i] = out
    return Y


def regressor_g(model: SystemModel, cache: KinematicsCache) -> np.ndarray:
    """Gravity regressor: column (k, i) is (int_k J^T E_i Ad_g^{-1} dX) G."""
    Y = np.zeros((model.n_coords, 4 * model.n_links))
    for k in range(model.n_links):
        w, R, p, J, _, _ = _gauss_arrays(model, cache, k)
        grav = _gravity_local(R, p, model.gravity)
        s = model.coord_slices[k]
        for i, rows in enumerate(SELECTOR_ROWS):
            Y[s, 4 * k + i] = np.einsum(
                "g,gri,gr->i", w, J[:, rows, :], grav[:, rows], optimize=True
            )
    return Y


def control_regressor(model: SystemModel, cache: KinematicsCache, qd_r, qdd_r) -> np.ndarray:
    """Combined regressor Y = Y_M(qdd_r) + Y_C(qd_r) - Y_g, satisfying
    Y theta = M qdd_r + C qd_r - F_g for every theta."""
    return (
        regressor_M(model, cache, qdd_r)
        + regressor_C(model, cache, qd_r)
        - regressor_g(model, cache)
    )
