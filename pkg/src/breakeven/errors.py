"""Exception types shared across the package.

The CLI maps these onto exit codes: validation/schema problems exit with 2,
I/O problems with 3, and non-fatal computational conditions (divergence,
no break-even flip) with 1.
"""


class BreakevenError(Exception):
    """Base class for all package errors."""


class ValidationError(BreakevenError):
    """Bad inputs: shapes, parameter ranges, schema violations."""


class ComputationalError(BreakevenError):
    """A computation could not produce a usable result."""


class NonFiniteError(ComputationalError):
    """NaN or Inf encountered; in training loops this signals divergence."""


class NoConvergenceError(ComputationalError):
    """Iterative solver hit its sweep/iteration cap above tolerance."""


class InvalidKError(ValidationError):
    """Requested more eigenpairs than the operator dimension allows."""


class DimensionMismatchError(ValidationError):
    pass


class BnUnsupportedError(ValidationError):
    """Operation does not support batch-normalization layers."""


class BnBatchStatsUnsupportedError(ValidationError):
    """Per-example gradients need frozen statistics when BN is present."""


class NoBnLayerError(ValidationError):
    pass


class ZeroDirectionError(ValidationError):
    """Hessian-vector product direction has zero norm."""


class DegenerateOffsetError(ValidationError):
    """Closed-form break-even curvature is undefined at zero offset."""


class InsufficientDataError(ValidationError):
    pass


class InsufficientCheckpointsError(ValidationError):
    pass


class RankDeficientError(ComputationalError):
    """Fewer positive eigenvalues than requested eigenvectors."""


class DegenerateProjectionError(ComputationalError):
    """Projection norm too small relative to the vector norm."""


class CsvParseError(ValidationError):
    def __init__(self, line_number: int, reason: str):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


class InvalidParamsError(ValidationError):
    pass


class InvalidConfigError(ValidationError):
    pass


class NeedTwoValuesError(ValidationError):
    """Sweep axes need at least two values to compare."""


class SchemaError(ValidationError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class UnknownMetricError(ValidationError):
    pass
