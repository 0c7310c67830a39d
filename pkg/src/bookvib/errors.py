"""Exception hierarchy shared by all bookvib modules."""

from __future__ import annotations


class BookVibError(Exception):
    """Base class for every error raised by the package."""


class InvalidGeometry(BookVibError, ValueError):
    pass


class BandTooWide(BookVibError, ValueError):
    pass


class MeshDegenerate(BookVibError, ValueError):
    pass


class MisalignedBand(BookVibError, ValueError):
    pass


class InvalidCoefficients(BookVibError, ValueError):
    pass


class DomainError(BookVibError, ValueError):
    pass


class NumericalError(BookVibError):
    """Failures of the linear-algebra kernels (CLI exit code 2)."""


class NotSPD(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    """Eigensolver did not converge; ``partial`` carries whatever was obtained."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class InteriorResonance(NumericalError):
    """The interior block P_II is singular at the spectral parameter ``lam``."""

    def __init__(self, lam: float, message: str | None = None):
        super().__init__(message or f"interior block singular at lambda={lam!r}")
        self.lam = lam


class InsufficientData(BookVibError, ValueError):
    pass


class DegenerateQuasimode(BookVibError):
    pass


class ClassificationFailure(BookVibError):
    def __init__(self, violations):
        super().__init__(f"{len(violations)} classification violation(s): {violations}")
        self.violations = list(violations)


class CheckFailure(BookVibError):
    """Property-suite violations reported by the ``check`` command."""

    def __init__(self, violations):
        super().__init__(f"{len(violations)} check(s) failed: {', '.join(violations)}")
        self.violations = list(violations)


class ConfigError(BookVibError, ValueError):
    """Schema or semantic violation in a scenario config; ``field`` names the offender."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class ParseError(ConfigError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column
