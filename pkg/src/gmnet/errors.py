"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`GmNetError`
so callers (and the CLI exit-code mapping) can tell them apart from bugs.
"""


class GmNetError(Exception):
    """Base class for all library errors."""


class DomainError(GmNetError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(GmNetError, ValueError):
    """Array shapes are inconsistent with each other or with a config."""


class DegenerateDirectionError(GmNetError, ValueError):
    """A vector that must be normalised onto the sphere has (near) zero norm."""


class ContractViolation(GmNetError, ValueError):
    """A documented precondition of an operation does not hold."""


class VocabularyError(GmNetError, ValueError):
    """Token id outside the vocabulary, or a malformed vocabulary file."""


class SequenceLengthError(GmNetError, ValueError):
    """Input text or token sequence is empty or too long."""


class AccuracyError(GmNetError, ArithmeticError):
    """A numerical procedure did not reach its accuracy target."""


class NumericError(GmNetError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class CheckpointError(GmNetError, IOError):
    """A checkpoint file is malformed or inconsistent."""
