"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto its documented status codes without inspecting types.
"""


class LoodError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3
    code = "error"


class ConfigError(LoodError):
    exit_code = 2
    code = "config"


class DatasetIOError(LoodError):
    exit_code = 4
    code = "io"


class ParseError(DatasetIOError):
    """Malformed dataset file; message names the offending row/column."""

    code = "parse"

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyDataset(DatasetIOError):
    code = "empty_dataset"


class NumericalError(LoodError):
    exit_code = 3
    code = "numerical"


class NotPsd(NumericalError):
    code = "not_psd"


class DimensionMismatch(LoodError):
    exit_code = 2
    code = "dimension_mismatch"


class SingularSchur(NumericalError):
    code = "singular_schur"


class ZeroNormInput(NumericalError):
    code = "zero_norm_input"


class QuadratureDivergence(NumericalError):
    code = "quadrature_divergence"


class NonDifferentiablePoint(NumericalError):
    code = "non_differentiable_point"


class KernelNotRegular(NumericalError):
    code = "kernel_not_regular"


class MultiQueryUnsupported(LoodError):
    exit_code = 2
    code = "multi_query_unsupported"


class NonHomogeneousKernel(LoodError):
    exit_code = 2
    code = "non_homogeneous_kernel"


class AlphaNonpositive(NumericalError):
    code = "alpha_nonpositive"


class LimitEstimationUnstable(NumericalError):
    code = "limit_estimation_unstable"
