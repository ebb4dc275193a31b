class SeedbankError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SeedbankError, ValueError):
    pass


class NumericalError(SeedbankError, ArithmeticError):
    pass


class LimitNotSupportedError(SeedbankError):
    """A numerical certification of a scaling limit failed."""


class ConfigError(ValidationError):
    pass
