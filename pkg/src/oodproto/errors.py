"""Error taxonomy shared by every engine module.

All data/contract violations derive from EngineError (a ValueError), so
callers can catch one base class; the CLI maps EngineError to exit code 2
and OSError to exit code 3.
"""

from __future__ import annotations


class EngineError(ValueError):
    """Base class for all engine contract violations."""


class BadMagicError(EngineError):
    """File does not start with the expected magic bytes / valid header."""


class DimMismatchError(EngineError):
    """Vector or matrix dimensions disagree with a declared dimension."""


class BadLabelError(EngineError):
    """A label index is outside the owning set's class range."""


class BadClassError(EngineError):
    """A class index argument is outside 0..C-1."""


class NonFiniteError(EngineError):
    """A payload or update produced NaN or Inf."""


class ZeroVectorError(EngineError):
    """An operation requiring a nonzero vector received a zero vector."""


class EmptyClassError(EngineError):
    """Some class has no labeled records where at least one is required."""


class NoLabelsError(EngineError):
    """An operation requiring labeled records found none at all."""


class ClassCountMismatchError(EngineError):
    """Two prototype sets (or a set and prototypes) disagree on class count."""


class EmptyInputError(EngineError):
    """A metric received an empty score list."""


class LengthMismatchError(EngineError):
    """Two paired sequences have different lengths."""


class BadConfigError(EngineError):
    """A configuration value or combination is invalid."""


class MissingInputError(EngineError):
    """A required input for the requested operation was not supplied."""
