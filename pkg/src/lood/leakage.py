"""Membership-inference AUC, LOOD/AUC correlation, the low-rank bound,
activation depth scans and group reconstruction studies."""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from .errors import AlphaNonpositive, ConfigError, LimitEstimationUnstable
from .gp import LeaveOneOutPair, as_queries
from .kernels import ACTIVATIONS, NngpFc, _CLAMP, diag_moments, edge_of_chaos, kernel_diag, kernel_matrix, layer_moments
from .linalg import cholesky_psd, logdet_psd
from .metrics import LooModel
from .query import OptConfig, optimize_query

# -- membership inference ------------------------------------------------------


@dataclass(frozen=True)
class MiaResult:
    auc: float
    n_samples: int
    seed: int

    def to_dict(self):
        return {"auc": self.auc, "n_samples": self.n_samples, "seed": self.seed}


def _log_density(x, mean, factor):
    z = np.linalg.solve(factor.lower, (x - mean[None, :]).T) if factor.n > 1 else (x - mean[None, :]).T / factor.lower[0, 0]
    q = mean.shape[0]
    return -0.5 * np.einsum("ij,ij->j", z, z) - 0.5 * logdet_psd(factor) - 0.5 * q * np.log(2.0 * np.pi)


def rank_auc(positive, negative):
    """Mann-Whitney AUC ``P(pos > neg) + 0.5 P(pos == neg)``."""
    positive = np.asarray(positive, dtype=float)
    negative = np.asarray(negative, dtype=float)
    n1, n0 = positive.size, negative.size
    ranks = stats.rankdata(np.concatenate([positive, negative]))
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def mia_auc(post_d, post_dp, n_samples=5000, seed=0):
    """AUC of the likelihood-ratio attack separating ``D'`` from ``D`` predictions.

    Draws ``n_samples`` from each posterior and scores each draw by
    ``log N(x; mu', Sigma') - log N(x; mu, Sigma)``; members (``D'`` draws)
    are the positive class.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    f_d = cholesky_psd(post_d.covariance)
    f_dp = cholesky_psd(post_dp.covariance)
    q = post_d.query_count
    rng_out = np.random.default_rng([seed, 0])
    rng_in = np.random.default_rng([seed, 1])
    x_out = post_d.mean[None, :] + rng_out.standard_normal((n_samples, q)) @ f_d.lower.T
    x_in = post_dp.mean[None, :] + rng_in.standard_normal((n_samples, q)) @ f_dp.lower.T

    def score(x):
        return _log_density(x, post_dp.mean, f_dp) - _log_density(x, post_d.mean, f_d)

    return MiaResult(rank_auc(score(x_in), score(x_out)), int(n_samples), int(seed))


@dataclass(frozen=True)
class CorrelationRow:
    index: int
    kl: float
    log_kl: float
    auc: float


@dataclass(frozen=True)
class CorrelationReport:
    pearson: Optional[float]
    spearman: Optional[float]
    top10_overlap: Optional[int]
    rows: list = field(default_factory=list)

    def to_dict(self):
        return {"pearson": self.pearson, "spearman": self.spearman, "top10_overlap": self.top10_overlap}


def lood_auc_correlation(spec, data, candidate_features, candidate_labels, n_samples=5000, seed=0):
    """KL at ``Q = S`` and attack AUC for every candidate differing record.

    Candidate ``i`` samples with seed ``(seed, i)``. Correlations are between
    ``log KL`` and AUC and are ``None`` when either column is constant.
    """
    feats = np.asarray(candidate_features, dtype=float).reshape(-1, data.dim)
    labels = np.asarray(candidate_labels, dtype=float).reshape(-1)
    if feats.shape[0] == 0:
        raise ConfigError("at least one candidate is required")
    if feats.shape[0] != labels.shape[0]:
        raise ConfigError("candidate features and labels differ in length")
    rows = []
    for i, (s, y) in enumerate(zip(feats, labels)):
        model = LooModel(spec, LeaveOneOutPair(data, s[None, :], [y]))
        post_d, post_dp = model.posteriors(s[None, :])
        kl = model.report(s[None, :]).kl
        auc = mia_auc(post_d, post_dp, n_samples, int(np.random.SeedSequence([seed, i]).generate_state(1)[0])).auc
        rows.append(CorrelationRow(i, kl, float(np.log(max(kl, 1e-300))), auc))
    log_kl = np.array([r.log_kl for r in rows])
    auc = np.array([r.auc for r in rows])
    if np.ptp(log_kl) == 0 or np.ptp(auc) == 0:
        return CorrelationReport(None, None, None, rows)
    pearson = float(stats.pearsonr(log_kl, auc)[0])
    spearman = float(stats.spearmanr(log_kl, auc)[0])
    k = min(10, len(rows))
    top_kl = set(np.argsort(-log_kl, kind="stable")[:k])
    top_auc = set(np.argsort(-auc, kind="stable")[:k])
    return CorrelationReport(pearson, spearman, len(top_kl & top_auc), rows)


# -- low-rank bound ------------------------------------------------------------


@dataclass(frozen=True)
class LowRankReport:
    alpha_min: float
    h_alpha_min: float
    h_query: float
    n: int
    zeta: float
    noise_variance: float
    variance_floor: float
    a_n: float
    b: float
    bound: float
    observed_max_lood: float

    @property
    def holds(self):
        return self.observed_max_lood <= self.bound + 1e-6

    def to_dict(self):
        return {
            "alpha_min": self.alpha_min,
            "h_alpha_min": self.h_alpha_min,
            "h_query": self.h_query,
            "n": self.n,
            "zeta": self.zeta,
            "noise_variance": self.noise_variance,
            "variance_floor": self.variance_floor,
            "a_n": self.a_n,
            "b": self.b,
            "bound": self.bound,
            "observed_max_lood": self.observed_max_lood,
            "holds": self.holds,
        }


def lowrank_constants(n, alpha, h, zeta, noise_variance, kappa):
    """Constants ``(A_n, B, s_low)`` of ``KL <= A_n h + B / n``.

    ``n`` is the size of ``D``; ``alpha, h`` are the midpoint and half-range of
    kernel values; ``zeta`` bounds ``|y|``; ``kappa`` is the smallest prior
    variance at the queries. Derived from entrywise perturbation of the two
    Gram inverses around the rank-one matrix ``alpha 1 1^T`` (see the design
    notes in the README).
    """
    s2 = noise_variance
    sq = n**2 + (n + 1) ** 2
    a = sq * (alpha + h) * zeta / s2**2 + (2 * n + 1) * zeta / s2
    b = zeta * max(2.0, 1.0 + 1.0 / alpha)
    s_low = kappa * s2 / ((n + 1) * (alpha + h) + s2)
    c_h = sq * (alpha + h) ** 2 / s2**2 + (2 * n + 1) * (2 * alpha + h) / s2
    a_n = (0.5 * c_h + a * a * h) / s_low
    b_const = (s2 / (2.0 * (n + 1)) + b * b / n) / s_low
    return a_n, b_const, s_low


def lowrank_analysis(spec, pair, query_grid):
    """Low-rank leakage bound on ``D'`` against the largest KL over ``query_grid``."""
    dp = pair.augmented
    n = pair.base.n
    if n < 1:
        raise ConfigError("low-rank bound needs a nonempty base dataset")
    grid = as_queries(query_grid, dp.dim)
    k = kernel_matrix(spec, dp.features, dp.features)
    lo, hi = float(k.min()), float(k.max())
    alpha = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    if not alpha > 0:
        raise AlphaNonpositive(f"midpoint of kernel values {alpha:.3e} is not positive")
    k_qx = kernel_matrix(spec, grid, dp.features)
    k_qq = kernel_diag(spec, grid)
    h_query = float(max(np.max(np.abs(k_qx - alpha)), np.max(np.abs(k_qq - alpha))))
    h_eff = max(h, h_query)
    kappa = float(min(np.min(np.diag(k)), np.min(k_qq)))
    zeta = float(np.max(np.abs(dp.labels)))
    a_n, b_const, s_low = lowrank_constants(n, alpha, h_eff, zeta, dp.noise_variance, kappa)
    model = LooModel(spec, pair)
    observed = max(model.kl(q[None, :]) for q in grid)
    return LowRankReport(
        alpha, h, h_query, n, zeta, dp.noise_variance, s_low, a_n, b_const, a_n * h_eff + b_const / n, float(observed)
    )


# -- activation depth scans ----------------------------------------------------


@dataclass(frozen=True)
class ActivationScanResult:
    activation: str
    depths: list
    values: list
    alpha: Optional[float]
    rate: Optional[float]
    distances: list
    fitted_slope: Optional[float]
    degenerate: bool = False

    def to_dict(self):
        return {
            "activation": self.activation,
            "depths": list(self.depths),
            "values": list(self.values),
            "alpha": self.alpha,
            "rate": self.rate,
            "distances": list(self.distances),
            "fitted_slope": self.fitted_slope,
            "degenerate": self.degenerate,
        }


def default_scan_template(activation):
    """Normalized NNGP at the edge of chaos with unit variance fixed point."""
    wv, bv = edge_of_chaos(activation, 1.0)
    return NngpFc(depth=1, activation=activation, weight_variance=wv, bias_variance=bv, normalize_inputs=True)


def depth_values(template, x, y, depths):
    """``K^L(x, y)`` at each requested depth via one pass of the recursion."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    d = x.shape[0]
    fx = np.sqrt(d) * x / np.linalg.norm(x)
    fy = np.sqrt(d) * y / np.linalg.norm(y)
    a = np.array([fx @ fx / d])
    b = np.array([fy @ fy / d])
    k = np.array([fx @ fy / d])
    wv, bv = template.weight_variance, template.bias_variance
    wanted = set(depths)
    out = {}
    for layer in range(1, max(depths) + 1):
        e, _, _, _ = layer_moments(template.activation, a, b, k, template.quadrature_order)
        ea, _ = diag_moments(template.activation, a, template.quadrature_order)
        eb, _ = diag_moments(template.activation, b, template.quadrature_order)
        a, k, b = bv + wv * ea, bv + wv * e, bv + wv * eb
        if layer in wanted:
            out[layer] = float(k[0])
    return [out[L] for L in depths]


def _richardson(l1, k1, l2, k2, p):
    w1, w2 = float(l1) ** p, float(l2) ** p
    return (w2 * k2 - w1 * k1) / (w2 - w1)


def _fit_slope(depths, values, alpha):
    dist = np.abs(np.asarray(values) - alpha)
    if np.any(dist <= 0):
        return None
    return float(np.polyfit(np.log(depths), np.log(dist), 1)[0])


def estimate_depth_limit(depths, values, hypotheses=(1.0, 2.0), tol=0.05):
    """Richardson estimate of ``lim K^L`` under the self-consistent rate.

    For each hypothesized rate ``p`` the limit is extrapolated from the two
    largest depths and the log-log slope of ``|K^L - alpha|`` is fitted; the
    hypothesis with ``-slope`` closest to ``p`` is kept. With that ``p`` the
    extrapolations from the last two consecutive depth pairs must agree within
    ``tol``. Returns ``(alpha, p, spread)``.
    """
    if len(depths) < 3:
        raise ConfigError("limit estimation needs at least three depths")
    l0, l1, l2 = depths[-3:]
    k0, k1, k2 = values[-3:]
    best = None
    for p in hypotheses:
        alpha = _richardson(l1, k1, l2, k2, p)
        slope = _fit_slope(depths, values, alpha)
        if slope is None or not np.isfinite(alpha):
            continue
        mismatch = abs(-slope - p)
        if best is None or mismatch < best[0]:
            best = (mismatch, alpha, p)
    if best is None:
        raise LimitEstimationUnstable("no rate hypothesis gives a usable depth-limit estimate")
    _, alpha, p = best
    spread = abs(alpha - _richardson(l0, k0, l1, k1, p))
    if spread > tol:
        raise LimitEstimationUnstable(f"successive limit estimates differ by {spread:.3e} > {tol:.1e}")
    return alpha, p, spread


def activation_scan(template, depths, x, y, tol=0.05):
    """Distance ``|K^L(x, y) - alpha|`` to the depth limit and its log-log slope."""
    depths = [int(L) for L in depths]
    if len(depths) < 2 or min(depths) < 1 or sorted(depths) != depths:
        raise ConfigError("depths must be increasing positive integers (at least two)")
    if template.activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {template.activation!r}")
    values = depth_values(template, x, y, depths)
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    cos = float(x @ y / (np.linalg.norm(x) * np.linalg.norm(y)))
    if cos >= _CLAMP or np.ptp(values) == 0:
        return ActivationScanResult(template.activation, depths, values, values[-1], None, [0.0] * len(depths), None, True)
    alpha, rate, _ = estimate_depth_limit(depths, values, tol=tol)
    distances = [abs(v - alpha) for v in values]
    slope = _fit_slope(depths, values, alpha)
    return ActivationScanResult(template.activation, depths, values, alpha, rate, distances, slope)


# -- group reconstruction ------------------------------------------------------


@dataclass(frozen=True)
class RunOutcome:
    run: int
    final_query: np.ndarray
    converged: bool
    nearest: Optional[int]
    distance: float
    value: float


@dataclass(frozen=True)
class GroupStudy:
    member_kl: list
    recoveries: list
    non_converged: int
    outcomes: list

    @property
    def frequencies(self):
        total = len(self.outcomes)
        return [r / total for r in self.recoveries]

    def to_rows(self):
        return [
            {"member": i, "single_query_kl": kl, "recoveries": rec, "frequency": rec / len(self.outcomes)}
            for i, (kl, rec) in enumerate(zip(self.member_kl, self.recoveries))
        ]


def group_reconstruction_study(spec, data, group_features, group_labels, runs, config=None):
    """Single-query KL maximization against a group of differing records.

    Run ``r`` uses seed ``(config.seed, r)``. Converged final queries are
    assigned to the nearest group member; others are counted separately.
    """
    config = config or OptConfig()
    group = np.asarray(group_features, dtype=float).reshape(-1, data.dim)
    labels = np.asarray(group_labels, dtype=float).reshape(-1)
    if group.shape[0] < 2:
        raise ConfigError("a group needs at least two records")
    if runs < 1:
        raise ConfigError("runs must be at least 1")
    pair = LeaveOneOutPair(data, group, labels)
    model = LooModel(spec, pair)
    member_kl = [LooModel(spec, LeaveOneOutPair(data, s[None, :], [y])).kl(s[None, :]) for s, y in zip(group, labels)]
    recoveries = [0] * group.shape[0]
    non_converged = 0
    outcomes = []
    for r in range(runs):
        seed = int(np.random.SeedSequence([config.seed, r]).generate_state(1)[0])
        trace = optimize_query(spec, pair, "kl", 1, replace(config, seed=seed), model=model)
        qf = trace.final_query[0]
        dist = np.linalg.norm(group - qf[None, :], axis=1)
        if trace.converged:
            j = int(np.argmin(dist))
            recoveries[j] += 1
            outcomes.append(RunOutcome(r, qf, True, j, float(dist[j]), trace.final_value))
        else:
            non_converged += 1
            outcomes.append(RunOutcome(r, qf, False, None, float(dist.min()), trace.final_value))
    return GroupStudy(member_kl, recoveries, non_converged, outcomes)
