"""Zero-mean GP regression posteriors and leave-one-out pairs."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatch
from .kernels import kernel_matrix
from .linalg import block_inverse, cholesky_psd, solve_psd, symmetrize


@dataclass(frozen=True)
class Dataset:
    """Features ``(n, d)``, real labels ``(n,)`` and label-noise variance."""

    features: np.ndarray
    labels: np.ndarray
    noise_variance: float

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.labels, dtype=float).reshape(-1)
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ConfigError("features and labels must be finite")
        if not self.noise_variance >= 1e-12:
            raise ConfigError(f"noise variance must be >= 1e-12, got {self.noise_variance}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def with_noise(self, noise_variance):
        return Dataset(self.features, self.labels, noise_variance)


@dataclass(frozen=True)
class LeaveOneOutPair:
    """Dataset ``D`` and the extra records ``S``; ``D' = D u S``."""

    base: Dataset
    differing_features: np.ndarray
    differing_labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.differing_features, dtype=float)
        if s.ndim == 1:
            s = s[None, :]
        ys = np.asarray(self.differing_labels, dtype=float).reshape(-1)
        if s.shape[0] < 1 or s.shape[0] != ys.shape[0]:
            raise DimensionMismatch(f"{s.shape[0]} differing rows but {ys.shape[0]} labels")
        if s.shape[1] != self.base.dim:
            raise DimensionMismatch(f"differing records have dimension {s.shape[1]}, data has {self.base.dim}")
        object.__setattr__(self, "differing_features", s)
        object.__setattr__(self, "differing_labels", ys)

    @property
    def s(self):
        return self.differing_features.shape[0]

    @property
    def augmented(self):
        b = self.base
        return Dataset(
            np.vstack([b.features, self.differing_features]),
            np.concatenate([b.labels, self.differing_labels]),
            b.noise_variance,
        )


@dataclass(frozen=True)
class PosteriorSummary:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def query_count(self):
        return self.mean.shape[0]


def as_queries(q, dim):
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        q = q.reshape(-1, dim) if dim > 0 and q.size % dim == 0 and q.size != dim else q[None, :]
    if q.ndim != 2 or q.shape[1] != dim:
        raise DimensionMismatch(f"queries of shape {q.shape} do not match input dimension {dim}")
    if q.shape[0] < 1:
        raise DimensionMismatch("at least one query is required")
    return q


class GpFit:
    """Conditioned GP: holds ``M^{-1}`` through a factor or an explicit inverse."""

    def __init__(self, spec, data, factor=None, inverse=None):
        self.spec = spec
        self.data = data
        if factor is None and inverse is None:
            m = kernel_matrix(spec, data.features, data.features) + data.noise_variance * np.eye(data.n)
            factor = cholesky_psd(m)
        self.factor = factor
        self.inverse = inverse
        self.weights = self.solve(data.labels)

    @classmethod
    def extended(cls, spec, fit, s_feature, s_label):
        """Fit on ``D u {s}`` by a one-row block update of ``fit``'s inverse."""
        data = fit.data
        a_inv = fit.inverse if fit.inverse is not None else solve_psd(fit.factor, np.eye(data.n))
        s = np.asarray(s_feature, dtype=float).reshape(1, -1)
        b = kernel_matrix(spec, data.features, s)[:, 0]
        c = kernel_matrix(spec, s, s)[0, 0] + data.noise_variance
        inv = block_inverse(a_inv, b, c).inverse
        new = Dataset(np.vstack([data.features, s]), np.append(data.labels, s_label), data.noise_variance)
        return cls(spec, new, inverse=inv)

    def solve(self, b):
        if self.inverse is not None:
            return self.inverse @ b
        return solve_psd(self.factor, b)

    def predict(self, q):
        k_qd = kernel_matrix(self.spec, q, self.data.features)
        k_qq = kernel_matrix(self.spec, q, q)
        mean = k_qd @ self.weights
        cov = symmetrize(k_qq - k_qd @ self.solve(k_qd.T))
        return PosteriorSummary(mean, cov)


def posterior(spec, data, q):
    """Posterior mean ``K_QD M^{-1} y`` and covariance ``K_QQ - K_QD M^{-1} K_DQ``."""
    return GpFit(spec, data).predict(as_queries(q, data.dim))


def loo_fits(spec, pair, method="block"):
    fit_d = GpFit(spec, pair.base)
    if method == "block" and pair.s == 1:
        fit_dp = GpFit.extended(spec, fit_d, pair.differing_features[0], pair.differing_labels[0])
    elif method in ("block", "direct"):
        fit_dp = GpFit(spec, pair.augmented)
    else:
        raise ConfigError(f"unknown posterior method {method!r}")
    return fit_d, fit_dp


def loo_pair_posteriors(spec, pair, q, method="block"):
    """Posteriors at ``q`` under ``D`` and under ``D'``.

    With ``method="block"`` and one differing record, the ``D'`` system is the
    block-inverse extension of the ``D`` system; otherwise it is refactorized.
    """
    q = as_queries(q, pair.base.dim)
    fit_d, fit_dp = loo_fits(spec, pair, method)
    return fit_d.predict(q), fit_dp.predict(q)


def predictive_sample(summary, count, seed):
    """``count`` draws from ``N(mean, covariance)``; rows are samples."""
    if count < 1:
        raise ConfigError("sample count must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    factor = cholesky_psd(summary.covariance)
    z = rng.standard_normal((count, summary.query_count))
    return summary.mean[None, :] + z @ factor.lower.T
