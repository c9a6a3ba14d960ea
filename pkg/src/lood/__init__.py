"""Leave-one-out distinguishability (LOOD) of Gaussian-process models."""

__version__ = "0.1.0"

from .errors import LoodError  # noqa: E402
from .gp import Dataset, LeaveOneOutPair, PosteriorSummary, loo_pair_posteriors, posterior  # noqa: E402
from .kernels import Correlation, Linear, NngpFc, Rbf, kernel_eval, kernel_matrix  # noqa: E402
from .metrics import LoodReport, kl_lood, lood_report, mean_distance_lood  # noqa: E402

__all__ = [
    "Correlation",
    "Dataset",
    "LeaveOneOutPair",
    "Linear",
    "LoodError",
    "LoodReport",
    "NngpFc",
    "PosteriorSummary",
    "Rbf",
    "kernel_eval",
    "kernel_matrix",
    "kl_lood",
    "lood_report",
    "loo_pair_posteriors",
    "mean_distance_lood",
    "posterior",
]
