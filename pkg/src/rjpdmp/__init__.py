"""Reversible-jump piecewise-deterministic samplers for Bayesian variable selection."""

from .dynamics import Dynamics, Family
from .engine import run
from .errors import ContractViolation, NumericalError, RJPDMPError, ThinningBoundError
from .state import EventKind, SamplerState, Skeleton, make_rng, spawn_seeds
from .targets import (
    ContinuousSpikeSlab,
    ContinuousSpikeSlabTarget,
    Dataset,
    GaussianSpikeSlabTarget,
    LogisticTarget,
    RobustTarget,
    SpikeSlabPrior,
)

__version__ = "0.1.0"
