"""Exception hierarchy shared by all modules."""


class WickWZError(Exception):
    """Base class for every error raised by wickwz."""


class PartitionError(WickWZError, ValueError):
    pass


class NotSorted(PartitionError):
    pass


class WrongEndpoints(PartitionError):
    pass


class TooFewPoints(PartitionError):
    pass


class OutOfRange(WickWZError, ValueError):
    pass


class PartitionMismatch(WickWZError, ValueError):
    pass


class DimensionMismatch(WickWZError, ValueError):
    pass


class BadResolution(WickWZError, ValueError):
    pass


class InsufficientData(WickWZError, ValueError):
    pass


class GridMisaligned(WickWZError, ValueError):
    pass


class NonFiniteState(WickWZError, ArithmeticError):
    """A path produced inf/nan during integration.

    ``path_index`` is the global index of the first offending path when known.
    """

    def __init__(self, message, path_index=None):
        super().__init__(message)
        self.path_index = path_index


class SigmaUnsupported(WickWZError, ValueError):
    pass


class DegenerateInit(WickWZError, ValueError):
    pass


class BadStep(WickWZError, ValueError):
    pass


class NoDerivatives(WickWZError, ValueError):
    pass


class TooFewSamples(WickWZError, ValueError):
    pass


class EmptyBins(WickWZError, ValueError):
    pass


class UnsupportedTestFunction(WickWZError, ValueError):
    pass


class SupportOutOfRange(WickWZError, ValueError):
    pass


class WrongModel(WickWZError, ValueError):
    pass


class ConfigError(WickWZError, ValueError):
    pass
