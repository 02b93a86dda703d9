import numpy as np
import pytest
import scipy.stats

from robayes.model import MeanDataset
from robayes.numerics import RngStream
from robayes.privacy import (
    DpRatioReport,
    GridBudgetError,
    RateFunction,
    ScoreField,
    ball_lattice,
    build_score_field,
    dp_ratio_audit,
    exp_mechanism_grid,
    mean_estimator_handle,
    mechanism_probabilities,
    private_empirical_mean,
    robust_distance_score,
    sensitivity_audit,
)

N, D, BETA, R = 400, 2, 0.05, 1.0


def small_field(scores):
    scores = np.asarray(scores, dtype=np.int64)
    m = scores.shape[0]
    idx = np.stack([np.arange(m), np.zeros(m, dtype=np.int64)], axis=1)
    return ScoreField(
        center=np.zeros(2), radius=float(m), cell=1.0, indices=idx, scores=scores, n=100
    )


def eff_rate():
    return RateFunction("mean-eff", D, N, BETA)


@pytest.fixture(scope="module")
def clean_data():
    return MeanDataset(RngStream(101).generator().standard_normal((N, D)))


class TestRateFunction:
    @pytest.mark.parametrize("kind", ["mean-stat", "mean-eff", "reg-critical", "reg-weak"])
    def test_monotone_and_vanishing(self, kind):
        rate = RateFunction(kind, d=4, n=10_000, beta=0.05)
        etas = np.linspace(1e-4, 1 / 3, 80)
        vals = [rate.alpha(e) for e in etas]
        assert all(vals[i] <= vals[i + 1] + 1e-12 for i in range(len(vals) - 1))
        assert rate.alpha(1e-9) < 1e-3

    def test_flat_beyond_one_third(self):
        rate = RateFunction("mean-eff", d=2, n=100, beta=0.1)
        assert rate.alpha(0.4) == rate.alpha(1 / 3)


class TestRobustDistanceScore:
    def test_clean_estimate_scores_zero(self, clean_data):
        est = mean_estimator_handle("eff", BETA)
        robust_estimate = est(clean_data, 0.0)
        score = robust_distance_score(robust_estimate, clean_data, est, eff_rate())
        assert score == 0

    def test_far_point_saturates(self, clean_data):
        est = mean_estimator_handle("eff", BETA)
        theta = np.full(D, 100.0)
        assert robust_distance_score(theta, clean_data, est, eff_rate()) == N

    def test_scaling_alpha_up_lowers_scores(self, clean_data):
        est = mean_estimator_handle("eff", BETA)
        theta = clean_data.mean() + np.array([0.4, 0.0])
        base = robust_distance_score(theta, clean_data, est, eff_rate())
        doubled = RateFunction("mean-eff", D, N, BETA, constant=16.0)
        assert robust_distance_score(theta, clean_data, est, doubled) <= base

    def test_scores_bounded_by_n(self, clean_data):
        est = mean_estimator_handle("eff", BETA)
        rate = eff_rate()
        cell = rate.alpha(1 / N) / (2 * np.sqrt(D))
        field = build_score_field(clean_data, est, rate, radius=1.0, cell=cell)
        assert field.scores.min() >= 0 and field.scores.max() <= N


class TestExpMechanism:
    def test_uniform_when_scores_equal(self):
        field = small_field(np.full(25, 3))
        counts = np.zeros(25)
        base = RngStream(7)
        draws = 100_000
        for i in range(draws):
            out = exp_mechanism_grid(field, 1.0, base.child(i))
            counts[int(out[0])] += 1
        chi2 = ((counts - draws / 25) ** 2 / (draws / 25)).sum()
        p = scipy.stats.chi2.sf(chi2, df=24)
        assert p > 0.001

    def test_low_temperature_limit(self):
        scores = np.full(50, 5)
        scores[17] = 0
        field = small_field(scores)
        base = RngStream(8)
        hits = sum(
            int(exp_mechanism_grid(field, 50.0, base.child(i))[0]) == 17 for i in range(2000)
        )
        assert hits >= 1998  # >= 99.9%

    def test_probabilities_normalized(self):
        field = small_field([0, 1, 2, 3])
        p = mechanism_probabilities(field, 2.0)
        assert p.sum() == pytest.approx(1.0)
        assert np.all(np.diff(p) < 0)


class TestSensitivityAndRatio:
    def _builder(self):
        rate = RateFunction("mean-eff", 2, 200, BETA)
        est = mean_estimator_handle("eff", BETA)
        cell = rate.alpha(1 / 200) / (2 * np.sqrt(2))
        return lambda data: build_score_field(data, est, rate, radius=1.5, cell=cell)

    def test_identical_datasets_zero_change(self):
        audit = sensitivity_audit(self._builder(), pairs=3, rng=RngStream(9), n=200, d=2, swaps=0)
        assert audit.max_change == 0

    def test_single_swap_sensitivity(self):
        audit = sensitivity_audit(self._builder(), pairs=20, rng=RngStream(10), n=200, d=2)
        assert audit.max_change <= 1

    def test_multi_swap_additivity(self):
        audit = sensitivity_audit(self._builder(), pairs=8, rng=RngStream(11), n=200, d=2, swaps=5)
        assert audit.max_change <= 5

    def test_ratio_audit_on_adjacent_pair(self):
        builder = self._builder()
        gen = RngStream(12).generator()
        x = gen.standard_normal((200, 2))
        y = x.copy()
        y[3] = gen.standard_normal(2)
        fa, fb = builder(MeanDataset(x)), builder(MeanDataset(y))
        delta = max(int(np.abs(fa.scores - fb.scores).max()), 1)
        rep = dp_ratio_audit(fa, fb, 2.0, draws=400_000, rng=RngStream(13), delta_sensitivity=delta)
        assert isinstance(rep, DpRatioReport)
        assert rep.passed

    def test_quasi_convexity_proxy(self):
        # along segments between low-score cells the score stays within
        # endpoint max + 1 (discretization slack)
        rate = RateFunction("mean-eff", 2, 200, BETA)
        est = mean_estimator_handle("eff", BETA)
        cell = rate.alpha(1 / 200) / (2 * np.sqrt(2))
        data = MeanDataset(RngStream(14).generator().standard_normal((200, 2)))
        field = build_score_field(data, est, rate, radius=1.5, cell=cell)
        centers = field.cell_centers()
        low = centers[field.scores <= np.quantile(field.scores, 0.2)]
        gen = RngStream(15).generator()
        for _ in range(64):
            i, j = gen.integers(0, low.shape[0], size=2)
            lam = gen.random()
            point = lam * low[i] + (1 - lam) * low[j]
            s_mid = robust_distance_score(point, data, est, rate)
            s_ends = max(
                robust_distance_score(low[i], data, est, rate),
                robust_distance_score(low[j], data, est, rate),
            )
            assert s_mid <= s_ends + 1


class TestPrivateEmpiricalMean:
    def test_nonprivate_limit_close_to_estimate(self):
        gen = RngStream(16).generator()
        data = MeanDataset(gen.standard_normal((300, 2)))
        rate = RateFunction("mean-eff", 2, 300, BETA)
        out = private_empirical_mean(data, epsilon=1e6, beta=BETA, radius=R, rng=RngStream(17))
        # the minimum-score set is the alpha(1/n) ball around the estimate
        assert np.linalg.norm(out - data.mean()) <= rate.alpha(1 / 300) + 1e-9

    def test_unit_dimension_utility(self):
        errs = []
        for i in range(30):
            gen = RngStream(600, i).generator()
            data = MeanDataset(gen.standard_normal((500, 1)))
            out = private_empirical_mean(
                data, epsilon=2.0, beta=BETA, radius=R, rng=RngStream(601, i)
            )
            errs.append(abs(out[0] - data.mean()[0]))
        assert np.quantile(errs, 0.9) <= 0.25

    def test_grid_budget_error(self):
        data = MeanDataset(RngStream(18).generator().standard_normal((50, 3)))
        with pytest.raises(GridBudgetError) as err:
            private_empirical_mean(
                data, epsilon=1.0, beta=BETA, radius=5.0, rng=RngStream(19), max_cells=100
            )
        assert err.value.required > 100


class TestScoreFieldIO:
    def test_round_trip(self, tmp_path, clean_data):
        est = mean_estimator_handle("eff", BETA)
        rate = eff_rate()
        cell = rate.alpha(1 / N) / (2 * np.sqrt(D))
        field = build_score_field(clean_data, est, rate, radius=0.8, cell=cell)
        path = tmp_path / "field.txt"
        field.save(path)
        loaded = ScoreField.load(path, field.center, field.radius, field.cell, field.n)
        assert np.array_equal(loaded.indices, field.indices)
        assert np.array_equal(loaded.scores, field.scores)

    def test_lattice_covers_ball(self):
        pts = ball_lattice(2, radius=1.0, cell=0.3)
        norms = np.linalg.norm(pts * 0.3, axis=1)
        assert norms.max() <= 1.0 + 1e-9
        # lexicographic ordering
        order = np.lexsort(pts.T[::-1])
        assert np.array_equal(order, np.arange(len(pts)))


class TestDimensionLimit:
    def test_mean_mechanism_dimension_cap(self):
        data = MeanDataset(RngStream(99).generator().standard_normal((40, 7)))
        with pytest.raises(ValueError):
            private_empirical_mean(data, 1.0, 0.05, 1.0)
