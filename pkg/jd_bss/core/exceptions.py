"""Exception hierarchy for jd-bss."""


class JdBssError(Exception):
    """Base class for all jd-bss errors."""


class DomainError(JdBssError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericalError(JdBssError, ArithmeticError):
    """A numerical breakdown that the estimators could not recover from."""


class SingularMatrixError(NumericalError):
    """A matrix that must be inverted is numerically singular."""

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(f"{message} (condition estimate: {condition:.3e})")
        self.condition = condition


class WavFormatError(JdBssError, ValueError):
    """A WAV file is malformed or uses an unsupported codec."""


class UsageError(JdBssError):
    """The command line was used incorrectly."""
