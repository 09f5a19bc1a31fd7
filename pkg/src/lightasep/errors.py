class LightAsepError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(LightAsepError, ValueError):
    """Parameters outside their admissible domain."""


class WrongPhaseError(LightAsepError, ValueError):
    """Operation requested outside the phase it is defined on."""


class ResourceError(LightAsepError):
    """State space or workload exceeds the configured cap."""


class NumericError(LightAsepError, ArithmeticError):
    """A solve or sweep failed numerically (singular system, negative mass, ...)."""


class GuardError(NumericError):
    """A nonzero-denominator guard of the matrix product ansatz is violated."""
