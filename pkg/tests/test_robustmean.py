import numpy as np
import pytest

from robayes.model import AdversarySpec, MeanDataset, PriorSpec, corrupt, sample_mean_instance
from robayes.numerics import RngStream
from robayes.robustmean import (
    FilterBudgetError,
    WeightCertificate,
    certificate_error_bound,
    certify_weights,
    eff_rate,
    filter_targets,
    resilience,
    robust_mean_filter,
    robust_mean_statistical,
    stat_rate,
)


def clean_instance(n, d, seed, stream=0):
    return sample_mean_instance(PriorSpec.isotropic(1.0, d), n, RngStream(seed, stream))


class TestResilience:
    def test_identical_samples(self):
        data = MeanDataset(np.tile([1.0, 2.0], (8, 1)))
        rep = resilience(data, 0.2)
        assert rep.worst_deviation == 0.0

    def test_single_outlier_brute_force(self):
        # mean is 2; the singleton {10} deviates by 8, beating every pair
        data = MeanDataset(np.array([[0.0], [0.0], [0.0], [0.0], [10.0]]))
        rep = resilience(data, 0.2)
        assert rep.exact
        assert np.array_equal(rep.worst_subset, [4])
        assert rep.worst_deviation == pytest.approx(8.0, abs=1e-12)

    def test_recompute_matches(self):
        _, data = clean_instance(15, 3, seed=21)
        rep = resilience(data, 0.2)
        dev = data.samples - data.mean()
        again = np.linalg.norm(dev[rep.worst_subset].mean(axis=0))
        assert abs(again - rep.worst_deviation) <= 1e-10

    def test_greedy_lower_bounds_exact(self):
        # n = 12, eta = 0.25: greedy never exceeds enumeration, ties >= 90%
        agree = 0
        for i in range(100):
            gen = RngStream(300, i).generator()
            data = MeanDataset(gen.standard_normal((12, 2)))
            exact = resilience(data, 0.25)
            assert exact.exact
            greedy = resilience(data, 0.25, exact_budget=0)
            assert not greedy.exact
            assert greedy.worst_deviation <= exact.worst_deviation + 1e-9
            if abs(greedy.worst_deviation - exact.worst_deviation) <= 1e-9:
                agree += 1
        assert agree >= 90


class TestStatisticalEstimator:
    def test_eta_zero_returns_empirical_mean(self):
        _, data = clean_instance(10, 2, seed=1)
        obs = corrupt(data, AdversarySpec.gross(), 0.0, RngStream(2))
        est = robust_mean_statistical(obs, 0.0)
        assert np.array_equal(est, data.samples.mean(axis=0))

    def test_single_gross_outlier(self):
        # brute force over which point to drop finds the outlier
        eta = 1.0 / 12.0
        _, clean = clean_instance(12, 2, seed=5)
        obs = corrupt(clean, AdversarySpec.gross(value=1e3), eta, RngStream(6))
        est = robust_mean_statistical(obs, eta)
        assert est is not None
        kept = ~obs.mask
        kept_mean = clean.samples[kept].mean(axis=0)
        assert np.linalg.norm(est - kept_mean) <= stat_rate(eta, 2, 12)

    def test_error_bound_monte_carlo(self):
        eta, n, d = 0.1, 20, 4
        hits = 0
        for i in range(40):
            _, clean = clean_instance(n, d, seed=900, stream=i)
            obs = corrupt(clean, AdversarySpec.shift(6.0), eta, RngStream(901, i))
            est = robust_mean_statistical(obs, eta)
            assert est is not None
            if np.linalg.norm(est - clean.mean()) <= stat_rate(eta, d, n):
                hits += 1
        assert hits >= 36

    def test_infeasible_returns_none(self):
        # more corruption than the declared budget tolerates
        gen = RngStream(17).generator()
        x = gen.standard_normal((12, 2))
        x[:5] += 500.0
        obs = corrupt(MeanDataset(x), AdversarySpec.gross(), 0.0, RngStream(18))
        assert robust_mean_statistical(obs, 1 / 12) is None


class TestFilterEstimator:
    def test_clean_data_keeps_all_weights(self):
        _, data = clean_instance(100, 3, seed=8)
        obs = corrupt(data, AdversarySpec.gross(), 0.0, RngStream(9))
        est, cert = robust_mean_filter(obs, 0.0)
        assert np.array_equal(cert.weights, np.ones(100))
        assert np.allclose(est, data.samples.mean(axis=0), rtol=0, atol=1e-12)

    def test_gross_outlier_weight_collapses(self):
        _, clean = clean_instance(60, 4, seed=10)
        obs = corrupt(clean, AdversarySpec.gross(value=300.0), 1.0 / 60.0, RngStream(11))
        est, cert = robust_mean_filter(obs, 1.0 / 60.0)
        assert cert.weights[obs.mask][0] < 0.01
        assert np.linalg.norm(est - clean.mean()) <= eff_rate(1 / 60, 4, 60)

    def test_budget_error_on_oversized_corruption(self):
        gen = RngStream(12).generator()
        x = gen.standard_normal((100, 2))
        x[:50] += 80.0
        obs = corrupt(MeanDataset(x), AdversarySpec.gross(), 0.0, RngStream(13))
        with pytest.raises(FilterBudgetError):
            robust_mean_filter(obs, 0.15)

    def test_translation_equivariance(self):
        eta = 0.05
        _, clean = clean_instance(120, 3, seed=14)
        obs = corrupt(clean, AdversarySpec.shift(8.0), eta, RngStream(15))
        shift = np.array([5.0, -3.0, 11.0])
        shifted = corrupt(
            MeanDataset(clean.samples + shift), AdversarySpec.shift(8.0), eta, RngStream(15)
        )
        a, _ = robust_mean_filter(obs, eta)
        b, _ = robust_mean_filter(shifted, eta)
        assert np.linalg.norm(b - (a + shift)) <= 1e-8

    def test_rotation_equivariance(self):
        # rotate the observed dataset itself; the estimate must co-rotate
        eta = 0.05
        _, clean = clean_instance(120, 3, seed=16)
        obs = corrupt(clean, AdversarySpec.shift(8.0), eta, RngStream(17))
        gen = RngStream(18).generator()
        q, _ = np.linalg.qr(gen.standard_normal((3, 3)))
        from robayes.model import ContaminatedDataset

        rotated = ContaminatedDataset(
            observed=MeanDataset(obs.observed.samples @ q.T), mask=obs.mask, eta=eta
        )
        a, _ = robust_mean_filter(obs, eta)
        b, _ = robust_mean_filter(rotated, eta)
        assert np.linalg.norm(b - q @ a) <= 1e-8

    def test_statistical_equivariance_on_clean(self):
        # search estimator: translation moves the output exactly with the data
        eta = 0.1
        _, clean = clean_instance(12, 2, seed=19)
        obs = corrupt(clean, AdversarySpec.gross(value=40.0), eta, RngStream(20))
        shift = np.array([2.0, -7.0])
        shifted = corrupt(
            MeanDataset(clean.samples + shift), AdversarySpec.gross(value=40.0), eta, RngStream(20)
        )
        a = robust_mean_statistical(obs, eta)
        b = robust_mean_statistical(shifted, eta)
        assert np.linalg.norm(b - (a + shift)) <= 1e-7


class TestCertifyWeights:
    def test_full_weights_on_clean_data_pass(self):
        # declared alpha1 = 6 sqrt(eta d / n) + 6 eta sqrt(log 1/eta) at eta = 0.1
        eta, d = 0.1, 3
        n = 50 * d
        passes = 0
        for i in range(100):
            gen = RngStream(400, i).generator()
            x = gen.standard_normal((n, d))
            alpha0, _, alpha2 = filter_targets(eta, d, n)
            alpha1 = 6 * np.sqrt(eta * d / n) + 6 * eta * np.sqrt(np.log(1 / eta))
            cert = WeightCertificate(
                weights=np.ones(n),
                alpha0=alpha0,
                alpha1=alpha1,
                alpha2=alpha2,
                candidate_mean=x.mean(axis=0),
                eta=eta,
            )
            res = certify_weights(MeanDataset(x), cert, directions=64, rng=RngStream(401, i))
            passes += res.passed
        assert passes >= 95

    def test_mass_precondition_fails(self):
        _, data = clean_instance(50, 2, seed=23)
        w = np.ones(50)
        w[:30] = 0.0  # 60% of mass gone
        alpha0, alpha1, alpha2 = filter_targets(0.1, 2, 50)
        cert = WeightCertificate(w, alpha0, alpha1, alpha2, data.mean(), eta=0.1)
        assert not certify_weights(data, cert).passed

    def test_adversarial_concentration_fails_first_moment(self):
        # weights that keep a far planted cluster inflate the first moment
        gen = RngStream(24).generator()
        n, eta = 200, 0.1
        x = gen.standard_normal((n, 2))
        x[:40, 0] += 50.0  # planted cluster
        w = np.zeros(n)
        w[:40] = 1.0
        w[40:160] = 1.0  # mass 0.8 = 1 - 2 eta
        alpha0, alpha1, alpha2 = filter_targets(eta, 2, n)
        cert = WeightCertificate(w, alpha0, alpha1, alpha2, x[w > 0].mean(axis=0), eta=eta)
        res = certify_weights(MeanDataset(x), cert, directions=64, rng=RngStream(25))
        assert not res.passed
        assert res.alpha1 > alpha1

    def test_certificate_soundness(self):
        # passing certificates imply the conclusion bound vs the clean mean
        eta, n, d = 0.05, 400, 20
        for i in range(25):
            _, clean = clean_instance(n, d, seed=500, stream=i)
            obs = corrupt(clean, AdversarySpec.mixture_plant(delta=4.0), eta, RngStream(501, i))
            est, cert = robust_mean_filter(obs, eta)
            res = certify_weights(clean, cert.restricted(obs.mask), directions=64, rng=RngStream(502, i))
            if res.passed:
                bound = certificate_error_bound(cert)
                assert np.linalg.norm(est - clean.mean()) <= bound


class TestStatisticalErrorBoundInvariant:
    # at least 90% of 200 seeded trials inside the frozen statistical bound,
    # at both pinned (n, d, eta) configurations
    @pytest.mark.parametrize("d", [2, 4])
    def test_error_bound_200_trials(self, d):
        n, eta = 24, 1.0 / 12.0
        bound = stat_rate(eta, d, n)
        hits = 0
        for i in range(200):
            _, clean = sample_mean_instance(PriorSpec.isotropic(1.0, d), n, RngStream(7000 + d, i))
            obs = corrupt(clean, AdversarySpec.gross(value=1e3), eta, RngStream(7100 + d, i))
            est = robust_mean_statistical(obs, eta)
            assert est is not None
            hits += np.linalg.norm(est - clean.mean()) <= bound
        assert hits >= 180
