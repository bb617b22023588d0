"""Exception hierarchy shared by every module in the package."""


class HadError(Exception):
    """Base class for all package errors."""


class MalformedFasta(HadError):
    pass


class IllegalBase(HadError):
    def __init__(self, base: str, position: int):
        super().__init__(f"illegal base {base!r} at position {position}")
        self.base = base
        self.position = position


class LengthNotDivisible(HadError):
    pass


class InvalidTokenId(HadError):
    pass


class ShapeMismatch(HadError):
    pass


class NonScalarLoss(HadError):
    pass


class PositionOutOfRange(HadError):
    pass


class IncompleteGroup(HadError):
    pass


class NoVisibleTokens(HadError):
    pass


class CacheMiss(HadError):
    pass


class DimensionMismatch(HadError):
    pass


class EmptyMaskSet(HadError):
    pass


class NonFiniteLoss(HadError):
    pass


class InvalidHead(HadError):
    pass


class EmptyInput(HadError):
    pass


class ConfigError(HadError):
    """Raised for config validation failures (CLI exit code 2)."""
