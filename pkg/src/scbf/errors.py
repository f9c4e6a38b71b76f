"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: config/schema problems
exit with 4, runtime guard trips with 3, failed verdicts with 2.
"""


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class RegimeError(ConfigError):
    """Parameter regime violates the hypotheses required for the
    requested constants or estimator.  The message names the failing
    inequality."""


class BasisMismatchError(ValueError):
    """Operands refer to different spectral bases or grid layouts."""


class BlowUpError(RuntimeError):
    """Runtime guard: non-finite state or H-norm above the hard cap."""

    def __init__(self, message, trajectory=None, step=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step
