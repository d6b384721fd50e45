"""Particle-based solver for discrete-time mean-field optimal control.

Approximates optimal feedback controls with a feedforward network taking
(time, state, empirical-measure features) as input, trained by
differentiating the pathwise cost of one coupled N-particle simulation with a
fixed noise bank.
"""

__version__ = "0.1.0"

from . import autodiff, diagnostics, features, model, network, problems, rollout, training
from .errors import (CheckpointError, ConfigurationError, DivergenceError,
                     NumericalStateError, TapeError, TrainingError)
