"""Exception types shared across the package."""


class ConfigurationError(Exception):
    """Bad or inconsistent configuration (unknown keys, dim mismatches, bad pairings)."""


class NumericalStateError(Exception):
    """Non-finite values where finite ones are required."""


class DivergenceError(Exception):
    """A rollout produced a non-finite or runaway state."""

    def __init__(self, message, step=None, particle=None):
        super().__init__(message)
        self.step = step
        self.particle = particle


class TrainingError(Exception):
    """Training aborted; carries the iteration index and the last good state."""

    def __init__(self, message, iteration=None, report=None, best_theta=None):
        super().__init__(message)
        self.iteration = iteration
        self.report = report
        self.best_theta = best_theta


class CheckpointError(Exception):
    """Checkpoint I/O failure or metadata mismatch."""


class TapeError(Exception):
    """Tape misuse: backward on an unused tape, or a second backward pass."""
