"""Exception types shared across the package.

The CLI maps these onto its exit codes: configuration/input problems -> 2,
checkpoint incompatibility -> 3, numerical failure during training -> 4.
"""


class RfenetError(Exception):
    """Base class for all package errors."""


class ConfigError(RfenetError):
    """Invalid configuration value, unknown key, or malformed input."""


class ShapeError(ConfigError):
    """Tensor dimensions violate a module contract (names the offending axis)."""


class DataError(RfenetError):
    """Dataset content or IO problem (bad class id, unwritable path, ...)."""


class SelectionError(RfenetError):
    """Point selection asked for more points than the map contains."""


class CheckpointError(RfenetError):
    """Checkpoint cannot be loaded against the requested architecture."""


class NumericalError(RfenetError):
    """Training produced a non-finite loss; carries the offending batch ids."""

    def __init__(self, message, batch_ids=None, iteration=None):
        super().__init__(message)
        self.batch_ids = list(batch_ids) if batch_ids is not None else []
        self.iteration = iteration
