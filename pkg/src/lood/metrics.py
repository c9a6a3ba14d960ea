"""Leave-one-out distinguishability measures on a pair of posteriors.

The KL measure is ``KL(f_D || f_D')``: the posterior under the *larger*
dataset ``D'`` is the base distribution.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, MultiQueryUnsupported, NonHomogeneousKernel
from .gp import as_queries, loo_fits, loo_pair_posteriors
from .kernels import Linear, NngpFc
from .linalg import cholesky_psd, logdet_psd, solve_psd

VARIANCE_FLOOR = 1e-14


@dataclass(frozen=True)
class LoodReport:
    kl: float
    mean_distance: float
    variance_ratio: object
    query_count: int
    floored: bool = False

    def to_dict(self):
        out = {"kl": self.kl, "mean_distance": self.mean_distance}
        if self.variance_ratio is not None:
            out["variance_ratio"] = self.variance_ratio
        out["query_count"] = self.query_count
        out["variance_floored"] = self.floored
        return out


def _check_pair(post_d, post_dp):
    if post_d.query_count != post_dp.query_count:
        raise DimensionMismatch(f"query counts differ: {post_d.query_count} vs {post_dp.query_count}")


def mean_distance_lood(post_d, post_dp):
    """``0.5 * |mu - mu'|^2``."""
    _check_pair(post_d, post_dp)
    diff = post_d.mean - post_dp.mean
    return 0.5 * float(diff @ diff)


def scalar_kl(mu0, var0, mu1, var1):
    """``KL(N(mu0, var0) || N(mu1, var1))`` and whether a variance was floored.

    Written as ``0.5 (r - 1 - log r + (mu0 - mu1)^2 / var1)`` with
    ``r = var0 / var1``, using ``log1p`` so that ``r`` near 1 keeps precision.
    """
    floored = bool(var0 < VARIANCE_FLOOR or var1 < VARIANCE_FLOOR)
    var0 = max(float(var0), VARIANCE_FLOOR)
    var1 = max(float(var1), VARIANCE_FLOOR)
    dr = (var0 - var1) / var1
    spread = dr - np.log1p(dr)
    return 0.5 * (spread + (mu0 - mu1) ** 2 / var1), floored


def gaussian_kl(mu0, cov0, mu1, cov1):
    """``KL(N(mu0, cov0) || N(mu1, cov1))`` via Cholesky solves; returns ``(kl, floored)``."""
    mu0, mu1 = np.asarray(mu0, dtype=float), np.asarray(mu1, dtype=float)
    cov0, cov1 = np.atleast_2d(cov0), np.atleast_2d(cov1)
    q = mu0.shape[0]
    if q == 1:
        return scalar_kl(mu0[0], cov0[0, 0], mu1[0], cov1[0, 0])
    f0, f1 = cholesky_psd(cov0), cholesky_psd(cov1)
    floored = f0.jitter > 0 or f1.jitter > 0
    diff = mu0 - mu1
    trace = float(np.trace(solve_psd(f1, cov0)))
    quad = float(diff @ solve_psd(f1, diff))
    return 0.5 * (logdet_psd(f1) - logdet_psd(f0) - q + trace + quad), floored


def kl_lood(post_d, post_dp):
    """``KL(f_D(Q) || f_D'(Q))``."""
    _check_pair(post_d, post_dp)
    return gaussian_kl(post_d.mean, post_d.covariance, post_dp.mean, post_dp.covariance)[0]


def reverse_kl_lood(post_d, post_dp):
    """``KL(f_D'(Q) || f_D(Q))``; only used to study the asymmetry."""
    _check_pair(post_d, post_dp)
    return gaussian_kl(post_dp.mean, post_dp.covariance, post_d.mean, post_d.covariance)[0]


def variance_ratio(post_d, post_dp):
    """``Sigma(Q) / Sigma'(Q)`` for a single query."""
    _check_pair(post_d, post_dp)
    if post_d.query_count != 1:
        raise MultiQueryUnsupported("variance ratio is defined for a single query only")
    return float(post_d.covariance[0, 0]) / max(float(post_dp.covariance[0, 0]), VARIANCE_FLOOR)


def report_from_posteriors(post_d, post_dp):
    _check_pair(post_d, post_dp)
    kl, floored = gaussian_kl(post_d.mean, post_d.covariance, post_dp.mean, post_dp.covariance)
    ratio = variance_ratio(post_d, post_dp) if post_d.query_count == 1 else None
    return LoodReport(kl, mean_distance_lood(post_d, post_dp), ratio, post_d.query_count, floored)


def lood_report(spec, pair, q, method="block"):
    """All LOOD measures at the query set ``q``."""
    post_d, post_dp = loo_pair_posteriors(spec, pair, q, method)
    return report_from_posteriors(post_d, post_dp)


class LooModel:
    """Both fits of a leave-one-out pair, reused across many query evaluations."""

    def __init__(self, spec, pair, method="block"):
        self.spec = spec
        self.pair = pair
        self.fit_d, self.fit_dp = loo_fits(spec, pair, method)

    def posteriors(self, q):
        q = as_queries(q, self.pair.base.dim)
        return self.fit_d.predict(q), self.fit_dp.predict(q)

    def report(self, q):
        return report_from_posteriors(*self.posteriors(q))

    def kl(self, q):
        post_d, post_dp = self.posteriors(q)
        return gaussian_kl(post_d.mean, post_d.covariance, post_dp.mean, post_dp.covariance)[0]

    def mean_distance(self, q):
        return mean_distance_lood(*self.posteriors(q))


def homogeneity_degree(spec):
    """Degree of positive homogeneity in each input, or raise."""
    if isinstance(spec, Linear):
        return 1.0
    if (
        isinstance(spec, NngpFc)
        and spec.activation == "relu"
        and spec.bias_variance == 0
        and not spec.normalize_inputs
    ):
        return 1.0
    raise NonHomogeneousKernel(f"{spec!r} is not positively homogeneous in its inputs")


@dataclass(frozen=True)
class ScaleRow:
    scale: float
    kl: float
    kl_rel_deviation: float
    mean_rel_deviation: float
    mean_exponent: object
    mean_distance_exponent: object


@dataclass(frozen=True)
class ScaleInvarianceReport:
    degree: float
    base_kl: float
    rows: list = field(default_factory=list)

    def to_dict(self):
        return {
            "degree": self.degree,
            "base_kl": self.base_kl,
            "rows": [
                {
                    "lambda": r.scale,
                    "kl": r.kl,
                    "kl_rel_deviation": r.kl_rel_deviation,
                    "mean_rel_deviation": r.mean_rel_deviation,
                    "mean_exponent": r.mean_exponent,
                    "mean_distance_exponent": r.mean_distance_exponent,
                }
                for r in self.rows
            ],
        }


def scale_invariance_check(spec, pair, q, lambdas):
    """Compare LOOD at ``lambda * Q`` with LOOD at ``Q`` for a homogeneous kernel.

    Records the relative KL deviation, the deviation of ``mu(lambda Q)`` from
    ``lambda^degree mu(Q)``, and the fitted exponents of the mean and of the
    mean-distance measure (``None`` at ``lambda = 1``).
    """
    degree = homogeneity_degree(spec)
    model = LooModel(spec, pair)
    q = as_queries(q, pair.base.dim)
    post_d, post_dp = model.posteriors(q)
    base = report_from_posteriors(post_d, post_dp)
    base_mean = np.concatenate([post_d.mean, post_dp.mean])
    rows = []
    for lam in lambdas:
        lam = float(lam)
        sd, sdp = model.posteriors(lam * q)
        rep = report_from_posteriors(sd, sdp)
        mean = np.concatenate([sd.mean, sdp.mean])
        kl_dev = abs(rep.kl - base.kl) / max(abs(base.kl), 1e-300)
        ref = lam**degree * base_mean
        mean_dev = float(np.linalg.norm(mean - ref) / max(np.linalg.norm(ref), 1e-300))
        if lam == 1.0:
            mean_exp = md_exp = None
        else:
            mean_exp = float(np.log(np.linalg.norm(mean) / np.linalg.norm(base_mean)) / np.log(lam))
            md_exp = (
                float(np.log(rep.mean_distance / base.mean_distance) / np.log(lam))
                if base.mean_distance > 0 and rep.mean_distance > 0
                else None
            )
        rows.append(ScaleRow(lam, rep.kl, kl_dev, mean_dev, mean_exp, md_exp))
    return ScaleInvarianceReport(degree, base.kl, rows)
