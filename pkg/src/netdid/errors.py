"""Exception types shared across the package.

ValueError (and subclasses) signal bad configuration or bad input data;
the runtime errors below signal conditions discovered mid-computation.
The CLI maps the former to exit code 1 and the latter to exit code 2.
"""


class SchemaError(ValueError):
    """A dataset file violates the CSV/edge-list schema."""


class EstimationError(RuntimeError):
    """Estimation is impossible on this data (empty cell, no treated units...)."""


class NumericError(RuntimeError):
    """A non-finite value appeared during a numeric computation."""
