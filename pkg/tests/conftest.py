import numpy as np
import pytest

from gvssim.liegroup import Pose
from gvssim.model import (
    CR_BENDING_BASIS,
    SoftLinkSpec,
    StrainBasisSpec,
    build_default_model,
    build_system,
)


@pytest.fixture(scope="session")
def default_model():
    return build_default_model(inertia_scale=0.7)


@pytest.fixture(scope="session")
def nominal_model():
    return build_default_model(inertia_scale=1.0)


def make_cantilever(
    orientation=None,
    basis=None,
    length=0.4,
    radius=0.9e-3,
    density=39317.0,
    youngs=120e9,
    quadrature_points=7,
    gravity=(0.0, 0.0, 0.0, 0.0, 0.0, -9.81),
    beta_damping=0.01,
):
    """Single fixed-base rod, unconstrained; handy oracle system."""
    spec = SoftLinkSpec(
        name="rod",
        length=length,
        radius=radius,
        density=density,
        youngs=youngs,
        poisson=0.3,
        basis=basis or CR_BENDING_BASIS,
        quadrature_points=quadrature_points,
    )
    base = Pose(np.eye(3), np.zeros(3)) if orientation is None else orientation
    return build_system(
        links=(spec,),
        base_poses=(base,),
        gravity=gravity,
        beta_damping=beta_damping,
    )


FULL_BASIS = StrainBasisSpec(orders=(1, 1, 1, 1, 1, 1))


def make_full_strain_rod(length=0.4, quadrature_points=7):
    """Rod with all six strain rows active (affine): exercises every twist
    component in the kinematic chain."""
    spec = SoftLinkSpec(
        name="rich",
        length=length,
        radius=1.2e-3,
        density=5000.0,
        youngs=60e9,
        poisson=0.3,
        basis=FULL_BASIS,
        quadrature_points=quadrature_points,
    )
    return build_system(links=(spec,), base_poses=(Pose(np.eye(3), np.zeros(3)),))


def random_configuration(model, rng, bend_scale=1.0, joint_rot_scale=0.3,
                         joint_trans_scale=0.05):
    """Random generalized coordinates at physically plausible magnitudes."""
    q = np.zeros(model.n_coords)
    for k, spec in enumerate(model.links):
        js = model.joint_slice(k)
        if js.stop > js.start:
            q[js.start : js.start + 3] = joint_rot_scale * rng.standard_normal(3)
            q[js.start + 3 : js.stop] = joint_trans_scale * rng.standard_normal(3)
        ss = model.strain_slice(k)
        q[ss] = bend_scale * rng.standard_normal(ss.stop - ss.start)
    return q
