"""Pulse-coupled networks with state-dependent Poisson firing: exact and
fixed-step simulation, the mean-field limit and its stationary states."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    Affine,
    Constant,
    ConstantWeight,
    Dirac,
    Explicit,
    MEAN_FIELD,
    NetworkConfig,
    Power,
    RAW,
    RngStream,
    UniformAround,
    UniformInterval,
    UniformWeight,
)
