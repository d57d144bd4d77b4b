"""Exception types shared across the package."""


class MxQuantError(Exception):
    """Base class for all library errors."""


class FormatError(MxQuantError, ValueError):
    """A file does not match the expected binary layout."""


class TruncationError(FormatError):
    """Header and payload sizes disagree."""


class DomainError(MxQuantError, ValueError):
    """A value outside the admissible domain (e.g. NaN or Inf)."""


class ShapeError(MxQuantError, ValueError):
    """Operand shapes are incompatible."""


class ArgumentError(MxQuantError, ValueError):
    """An argument is out of range."""
