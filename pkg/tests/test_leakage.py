import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from conftest import cluster_candidates, domain_box, group_design, sine_data, sine_pair, two_cluster_data
from lood.errors import AlphaNonpositive, ConfigError, LimitEstimationUnstable
from lood.gp import Dataset, LeaveOneOutPair, PosteriorSummary
from lood.kernels import Linear, Rbf
from lood.leakage import (
    activation_scan,
    default_scan_template,
    estimate_depth_limit,
    group_reconstruction_study,
    lood_auc_correlation,
    lowrank_analysis,
    lowrank_constants,
    mia_auc,
    rank_auc,
)
from lood.query import OptConfig, UniformBox

DEPTHS = [4, 8, 16, 32, 64]
X_PAIR = ([1.0, 0.0], [0.0, 1.0])


def gaussian(mu, var):
    return PosteriorSummary(np.array([float(mu)]), np.array([[float(var)]]))


class TestRankAuc:
    def test_ties_half_credit(self):
        assert rank_auc([1.0, 1.0], [1.0, 1.0]) == 0.5

    def test_perfect(self):
        assert rank_auc([2.0, 3.0], [0.0, 1.0]) == 1.0


class TestMiaAuc:
    def test_identical(self):
        assert abs(mia_auc(gaussian(0, 1), gaussian(0, 1), 5000, 0).auc - 0.5) <= 0.02

    def test_separated(self):
        assert mia_auc(gaussian(0, 1), gaussian(10, 1), 5000, 0).auc >= 0.999

    @pytest.mark.parametrize("delta", [0.5, 1.0, 2.0, 4.0])
    @pytest.mark.parametrize("sigma", [0.3, 1.0])
    def test_equal_variance_closed_form(self, delta, sigma):
        res = mia_auc(gaussian(0, sigma**2), gaussian(delta * sigma, sigma**2), 5000, 1)
        assert abs(res.auc - norm.cdf(delta / np.sqrt(2))) <= 0.02

    def test_deterministic(self):
        a = mia_auc(gaussian(0, 1), gaussian(1, 0.5), 1000, 4)
        assert a == mia_auc(gaussian(0, 1), gaussian(1, 0.5), 1000, 4)

    def test_sample_count(self):
        with pytest.raises(ConfigError):
            mia_auc(gaussian(0, 1), gaussian(0, 1), 0, 0)


class TestCorrelation:
    def test_identical_candidates_absent(self):
        rep = lood_auc_correlation(Rbf(), sine_data(), [[2.0]] * 5, [0.5] * 5, 500, 0)
        assert rep.spearman is None and rep.pearson is None

    def test_clusters(self):
        x, y = cluster_candidates(0)
        rep = lood_auc_correlation(Rbf(1.0), two_cluster_data(0), x, y, 5000, 0)
        assert rep.spearman >= 0.9 and len(rep.rows) == 100

    def test_top10_overlap(self):
        x, y = cluster_candidates(0, flip=0.0)
        rep = lood_auc_correlation(Rbf(1.0), two_cluster_data(0), x, y, 5000, 0)
        assert rep.top10_overlap >= 8

    def test_empty(self):
        with pytest.raises(ConfigError):
            lood_auc_correlation(Rbf(), sine_data(), np.zeros((0, 1)), np.zeros(0))


class TestLowRank:
    def test_constant_kernel(self):
        data = Dataset(np.ones((4, 1)), np.array([0.5, -0.5, 0.2, 0.1]), 0.1)
        pair = LeaveOneOutPair(data, [[1.0]], [0.3])
        rep = lowrank_analysis(Linear(), pair, [[1.0]])
        assert rep.h_alpha_min == 0.0 and rep.h_query == 0.0
        assert rep.bound == pytest.approx(rep.b / rep.n, rel=1e-14)
        assert rep.holds

    def test_midpoint_half_range(self):
        pts = np.sqrt([[0.8], [0.9], [0.8]])
        pair = LeaveOneOutPair(Dataset(pts, [0.1, 0.2, 0.3], 0.1), np.sqrt([[0.9]]), [0.0])
        rep = lowrank_analysis(Linear(), pair, pts)
        assert rep.alpha_min == pytest.approx(0.85, rel=1e-14)
        assert rep.h_alpha_min == pytest.approx(0.05, rel=1e-12)

    def test_length_sweep(self):
        data = Dataset(sine_data().features, np.ones(10), 0.01)
        pair = LeaveOneOutPair(data, [[0.3]], [1.0])
        feats = pair.augmented.features[:, 0]
        grid = np.linspace(feats.min(), feats.max(), 201)[:, None]
        reps = [lowrank_analysis(Rbf(l), pair, grid) for l in (1, 10, 100, 1000)]
        hs = [r.h_alpha_min for r in reps]
        observed = [r.observed_max_lood for r in reps]
        assert all(b < a for a, b in zip(hs, hs[1:]))
        assert all(b < a for a, b in zip(observed, observed[1:]))
        assert all(r.holds for r in reps)

    def test_nonpositive_midpoint(self):
        pair = LeaveOneOutPair(Dataset([[1.0], [-1.0]], [0.0, 0.0], 0.1), [[-1.0]], [0.0])
        with pytest.raises(AlphaNonpositive):
            lowrank_analysis(Linear(), pair, [[0.5]])

    def test_constants_shrink_with_h(self):
        small = lowrank_constants(10, 0.9, 1e-3, 1.0, 0.1, 1.0)
        large = lowrank_constants(10, 0.9, 1e-1, 1.0, 0.1, 1.0)
        assert small[0] < large[0]

    def test_bound_holds_near_constant(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            x = rng.normal(size=(8, 1))
            pair = LeaveOneOutPair(Dataset(x, np.sin(x[:, 0]), 0.05), rng.normal(size=(1, 1)), [0.2])
            assert lowrank_analysis(Rbf(float(rng.uniform(50, 500))), pair, rng.normal(size=(30, 1))).holds


class TestActivationScan:
    @pytest.mark.xfail(strict=True, reason="pre-asymptotic at depths 4..64: fitted slope is about -1.1, see ledger")
    def test_relu_slope(self):
        res = activation_scan(default_scan_template("relu"), DEPTHS, *X_PAIR)
        assert abs(res.fitted_slope + 2.0) <= 0.3

    def test_relu_local_slope_steepens_toward_two(self):
        # exact limit 1 for the edge-of-chaos ReLU map
        depths = [4, 8, 16, 32, 64, 128, 256]
        res = activation_scan(default_scan_template("relu"), depths, *X_PAIR)
        u = 1.0 - np.array(res.values)
        local = np.diff(np.log(u)) / np.diff(np.log(depths))
        assert all(b < a for a, b in zip(local, local[1:]))
        assert -2.0 < local[-1] < -1.7

    def test_gelu_slope(self):
        res = activation_scan(default_scan_template("gelu"), DEPTHS, *X_PAIR)
        assert abs(res.fitted_slope + 1.0) <= 0.3

    def test_correlated_inputs_degenerate(self):
        res = activation_scan(default_scan_template("gelu"), DEPTHS, [1.0, 2.0], [2.0, 4.0])
        assert res.degenerate and res.distances == [0.0] * 5

    def test_distances_nonincreasing_after_burn_in(self):
        for act in ("relu", "gelu"):
            res = activation_scan(default_scan_template(act), [1, 2, 4, 8, 16, 32, 64], *X_PAIR)
            d = res.distances[2:]
            assert all(x > 0 for x in d) and all(b <= a for a, b in zip(d, d[1:]))

    def test_unstable_limit(self):
        with pytest.raises(LimitEstimationUnstable):
            estimate_depth_limit([1, 2, 3], [0.0, 1.0, 0.0])

    def test_bad_depths(self):
        with pytest.raises(ConfigError):
            activation_scan(default_scan_template("relu"), [8, 4], *X_PAIR)


class TestGroupReconstruction:
    def config(self, data, group):
        return OptConfig(grad_tol=1e-4, init=UniformBox(*domain_box(data, group)))

    def test_outlier_beats_duplicate(self):
        data, group, labels = group_design(0, members=("data", "outlier"))
        study = group_reconstruction_study(Rbf(4.0), data, group, labels, 10, self.config(data, group))
        assert study.member_kl[1] > study.member_kl[0]
        assert study.recoveries[1] >= study.recoveries[0]

    def test_deterministic_and_partition(self):
        data, group, labels = group_design(1)
        cfg = self.config(data, group)
        a = group_reconstruction_study(Rbf(4.0), data, group, labels, 4, cfg)
        b = group_reconstruction_study(Rbf(4.0), data, group, labels, 4, cfg)
        assert a.recoveries == b.recoveries and a.non_converged == b.non_converged
        assert sum(a.recoveries) + a.non_converged == 4
        assert sum(r["recoveries"] for r in a.to_rows()) == sum(a.recoveries)

    def test_needs_group(self):
        with pytest.raises(ConfigError):
            group_reconstruction_study(Rbf(), sine_data(), [[1.0]], [0.0], 3)


class TestProperties:
    def test_auc_standard_error_scales(self):
        pair = (gaussian(0, 1), gaussian(1, 1))
        sd_n = np.std([mia_auc(*pair, 1000, s).auc for s in range(20)])
        sd_2n = np.std([mia_auc(*pair, 2000, s).auc for s in range(20)])
        assert 0.5 <= sd_2n / sd_n <= 0.9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
    def test_auc_monotone_in_mean_gap(self, seed, a, b):
        lo, hi = sorted([a, b])
        auc_lo = mia_auc(gaussian(0, 1), gaussian(lo, 1), 500, seed).auc
        auc_hi = mia_auc(gaussian(0, 1), gaussian(hi, 1), 500, seed).auc
        assert auc_hi >= auc_lo

    def test_gelu_distance_exceeds_relu(self):
        relu = activation_scan(default_scan_template("relu"), DEPTHS, *X_PAIR)
        gelu = activation_scan(default_scan_template("gelu"), DEPTHS, *X_PAIR)
        assert all(g > r for g, r in zip(gelu.distances, relu.distances))

    def test_bound_on_sine_pairs(self):
        for s in (-3.0, 0.5, 2.0):
            pair = sine_pair(s)
            grid = np.linspace(-3, 3, 61)[:, None]
            assert lowrank_analysis(Rbf(30.0), pair, grid).holds
