"""Closed-chain co-manipulating continuum robot simulator.

Two tendon-driven continuum arms rigidly hold a flexible rod; the coupled
strain-based dynamics are simulated under loop-closure constraints and driven
by projected adaptive, nominal, or baseline task-space controllers.
"""

from .liegroup import Pose, ad, adjoint, coad, exp_se3, hat, log_se3, vee
from .model import (
    SoftLinkSpec,
    StrainBasisSpec,
    SystemModel,
    build_default_model,
    build_system,
    theta_of_link,
)

__all__ = [
    "Pose",
    "ad",
    "adjoint",
    "coad",
    "exp_se3",
    "hat",
    "log_se3",
    "vee",
    "SoftLinkSpec",
    "StrainBasisSpec",
    "SystemModel",
    "build_default_model",
    "build_system",
    "theta_of_link",
]

__version__ = "0.1.0"
