"""Exception hierarchy shared across the simulator.

Exit-code mapping used by the CLI: ConfigError -> 1, DependencyError -> 2,
NumericalFault -> 3.
"""


class AoisimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(AoisimError):
    """Invalid configuration: bad dimensions, unknown keys, out-of-range values."""


class DependencyError(AoisimError):
    """A required upstream artifact (traffic file, checkpoint) is missing."""


class NumericalFault(AoisimError):
    """Non-finite loss/Q-value or impossible observation under the model."""


class InconsistentObservation(NumericalFault):
    """Observed activation vector has zero likelihood under every joint event state."""
