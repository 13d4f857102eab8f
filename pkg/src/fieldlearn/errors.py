"""Exception types shared across the package.

The CLI maps usage problems to exit code 1 and any `FieldlearnError` raised
while running a subcommand to exit code 2.
"""


class FieldlearnError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(FieldlearnError):
    """A setting, flag, or parameter value is not usable."""


class DataError(FieldlearnError):
    """Input data is malformed, inconsistent, or missing."""


class SolverError(FieldlearnError):
    """A linear or nonlinear solve failed or diverged."""


class RankError(FieldlearnError):
    """A moment or regression system is rank deficient."""


class TrainingError(FieldlearnError):
    """Network training produced a non-finite loss."""


class CapabilityError(FieldlearnError):
    """The requested operation is outside what this implementation supports."""


class ShapeError(DataError):
    """Array arguments have inconsistent shapes."""
