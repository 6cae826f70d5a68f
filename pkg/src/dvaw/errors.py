"""Exception hierarchy shared by every module in the package."""

from __future__ import annotations


class ParameterError(ValueError):
    """A parameter lies outside its documented domain."""


class ProtocolError(RuntimeError):
    """A two-phase learner was driven out of order."""


class NumericalError(ArithmeticError):
    """A linear solve failed even after the jitter retry."""


class SchemaError(ValueError):
    """An input file does not match the expected layout."""
