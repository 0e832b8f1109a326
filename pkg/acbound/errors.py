"""Exception hierarchy shared by every acbound module.

Every concrete error also derives from ValueError, so callers that only know
about bad-argument errors keep working.
"""


class AcboundError(Exception):
    """Base class for all acbound errors"""


class EmptySampleError(AcboundError, ValueError):
    def __init__(self, message: str = "empty sample"):
        super().__init__(message)


class UnsupportedDistributionError(AcboundError, ValueError):
    def __init__(self, message: str = "unsupported distribution"):
        super().__init__(message)


class ZeroMarginSetError(AcboundError, ValueError):
    def __init__(self, message: str = "zero-margin set"):
        super().__init__(message)


class MarginParameterError(AcboundError, ValueError):
    pass


class FamilyParameterError(AcboundError, ValueError):
    """Raised with a message naming the violated construction constraint"""


class EnumerationTooLargeError(AcboundError, ValueError):
    def __init__(self, message: str = "enumeration too large"):
        super().__init__(message)


class NotCellwiseError(AcboundError, ValueError):
    def __init__(self, message: str = "use quadrature"):
        super().__init__(message)


class UnsupportedNetError(AcboundError, ValueError):
    def __init__(self, message: str = "not supported"):
        super().__init__(message)


class DivergenceError(AcboundError, ValueError):
    pass


class FixedPointError(AcboundError, ValueError):
    def __init__(self, message: str = "fixed point undefined"):
        super().__init__(message)


class RateFitError(AcboundError, ValueError):
    pass


class IncompatibleClassifierError(AcboundError, ValueError):
    pass


class ConfigError(AcboundError, ValueError):
    """Invalid experiment configuration.

    Args:
        message: Human readable description
        field: Dotted path of the offending field, when known
    """

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)
