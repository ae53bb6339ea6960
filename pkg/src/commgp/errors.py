"""Exception hierarchy shared by every module of the package."""


class CommGPError(Exception):
    """Base class for all errors raised by commgp."""


class NotPositiveDefinite(CommGPError, ValueError):
    pass


class DimensionMismatch(CommGPError, ValueError):
    pass


class DistortionOutOfRange(CommGPError, ValueError):
    pass


class RateTooLarge(CommGPError, ValueError):
    pass


class CorruptIndex(CommGPError, ValueError):
    pass


class BadTargetDim(CommGPError, ValueError):
    pass


class SingularSystem(CommGPError, ArithmeticError):
    pass


class SingularAnchor(SingularSystem):
    pass


class NonFinite(CommGPError, ArithmeticError):
    pass


class DegenerateTargets(CommGPError, ValueError):
    pass


class DegeneratePrecision(CommGPError, ArithmeticError):
    pass


class ParseError(CommGPError, ValueError):
    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class MissingColumn(CommGPError, KeyError):
    pass


class ConfigError(CommGPError, ValueError):
    pass
