"""Numerical laboratory for the stochastic Keller-Segel equation in two dimensions."""

from stochks.core import (
    DomainSpec,
    Field,
    ModelParams,
    RngContext,
    lp_norm,
    make_gaussian_field,
    mass,
)

__all__ = [
    "DomainSpec",
    "Field",
    "ModelParams",
    "RngContext",
    "lp_norm",
    "make_gaussian_field",
    "mass",
]

__version__ = "0.1.0"
