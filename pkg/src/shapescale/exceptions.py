"""Exception hierarchy.

Every error raised on purpose by this package derives from
:class:`ShapeScaleError`; the CLI maps the subclasses onto exit codes.
"""


class ShapeScaleError(Exception):
    """Base class for all package errors."""


# -- storage ---------------------------------------------------------------

class LoadError(ShapeScaleError):
    """A model directory, manifest or array file could not be loaded."""


class FormatError(LoadError):
    """Malformed NPY magic string or header."""


class UnsupportedFormatError(LoadError):
    """Well-formed NPY file using a feature we do not read (dtype, order)."""


class DataError(LoadError, ValueError):
    """Array contents violate a data invariant (e.g. NaN/Inf entries)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class WriteError(ShapeScaleError, OSError):
    """Persisting a model or array failed."""


# -- numerics --------------------------------------------------------------

class NumericError(ShapeScaleError, ArithmeticError):
    """A numerical routine failed (e.g. SVD did not converge)."""


class DomainError(ShapeScaleError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class TooFewTailPointsError(DomainError):
    """Not enough positive eigenvalues to fit a truncated power law."""


class EmptyModelError(NumericError):
    """A model yielded no matrix usable for any metric."""


# -- analysis --------------------------------------------------------------

class InsufficientDataError(DomainError):
    """Too few points for the requested statistic."""


class DegenerateFitError(DomainError):
    """Least squares with a constant regressor."""


class EmptyCorpusError(DomainError):
    """No record carries both the metric and the target."""


# -- evaluation ------------------------------------------------------------

class UnsupportedTopologyError(ShapeScaleError):
    """The forward evaluator only handles dense layers."""


class ShapeError(ShapeScaleError, ValueError):
    """Layer widths do not chain, or inputs do not match the first layer."""
