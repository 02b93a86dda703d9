import io
import json
import math

import numpy as np
import pytest

from robayes.bayesmean import (
    EpsilonSchedule,
    StreamState,
    bucket_plan,
    default_bucket_count,
    error_recursion,
    frequentist_private_mean,
    private_posterior_mean,
    run_stream,
    stream_update,
)
from robayes.model import MeanDataset, PriorSpec, sample_mean_instance, shrinkage
from robayes.numerics import RngStream
from robayes.privacy import RateFunction

BETA = 0.05


class TestBucketPlan:
    def test_identity_single_bucket(self):
        plan = bucket_plan(np.eye(4), 3)
        assert len(plan.buckets) == 1
        idx, sigma2 = plan.buckets[0]
        assert sorted(idx) == [0, 1, 2, 3]
        assert sigma2 == pytest.approx(0.5)
        assert plan.tail.size == 0

    def test_dyadic_assignment(self):
        plan = bucket_plan(np.diag([1.0, 0.4, 0.2]), 3)
        got = {tuple(sorted(int(j) for j in idx)): s for idx, s in plan.buckets}
        assert got == {
            (0,): pytest.approx(0.5),
            (1,): pytest.approx(0.25),
            (2,): pytest.approx(0.125),
        }

    def test_below_cutoff_goes_to_tail(self):
        plan = bucket_plan(np.diag([1.0, 2.0 ** (-4)]), 3)
        assert plan.tail.size == 1

    def test_zero_matrix_all_tail(self):
        plan = bucket_plan(np.zeros((3, 3)), 2)
        assert len(plan.buckets) == 0
        assert plan.tail.size == 3

    def test_epsilon_split(self):
        plan = bucket_plan(np.eye(2), 4, epsilon=2.0)
        assert plan.epsilon_split == pytest.approx(0.4)

    def test_default_bucket_count_clipped(self):
        assert 1 <= default_bucket_count(10, 1, 1e-9, 1.0) <= 40
        assert default_bucket_count(10**6, 64, 10.0, 1e-6) == 40


class TestPrivatePosteriorMean:
    def test_exact_mode_reassembles_shrunk_mean(self):
        prior = PriorSpec.general(np.diag([2.0, 0.7, 0.4, 0.3]))
        _, data = sample_mean_instance(prior, 150, RngStream(1))
        lam = shrinkage(prior, 150)
        target = lam.apply(data.mean())
        out = private_posterior_mean(data, prior, epsilon=1.0, beta=BETA, mode="exact", m=12)
        lam2_op = np.max(np.linalg.eigvalsh(lam.lambda_.entries)) ** 2
        bound = 2 ** (-12 / 2) * 4 * lam2_op * np.linalg.norm(data.mean())
        assert np.linalg.norm(out - target) <= bound + 1e-12

    def test_tail_only_prior_outputs_zero(self):
        _, data = sample_mean_instance(PriorSpec.isotropic(1.0, 3), 30, RngStream(2))
        out = private_posterior_mean(data, PriorSpec.isotropic(0.0, 3), 5.0, BETA)
        assert np.array_equal(out, np.zeros(3))

    def test_nonprivate_limit(self):
        # eps = 1e6: output within the mechanism resolution of Lambda x-bar;
        # 0.15 freezes the resolution at this configuration with margin
        prior = PriorSpec.isotropic(1.0, 2)
        _, data = sample_mean_instance(prior, 1000, RngStream(3))
        lam = shrinkage(prior, 1000)
        out = private_posterior_mean(data, prior, epsilon=1e6, beta=BETA, rng=RngStream(4))
        assert np.linalg.norm(out - lam.apply(data.mean())) <= 0.15

    def test_critical_scale_rate(self):
        # sigma^2 = 1/n: error tracks the theoretical two-term formula, with
        # the desk-scale constant 45 frozen by calibration
        n, d, eps = 2000, 2, 2.0
        prior = PriorSpec.isotropic(1.0 / n, d)
        lam = shrinkage(prior, n)
        lam_eig = 0.5
        theory = (
            (d * lam_eig ** (4 / 3)) ** 0.75
            + lam_eig * math.log(1 / BETA) ** 0.75
        ) / (math.sqrt(eps) * n**0.75) + (
            d * lam_eig + lam_eig * math.log(1 / BETA)
        ) / (eps * n)
        errs = []
        for i in range(40):
            _, data = sample_mean_instance(prior, n, RngStream(700, i))
            out = private_posterior_mean(data, prior, eps, BETA, rng=RngStream(701, i))
            errs.append(np.linalg.norm(out - lam.apply(data.mean())))
        assert np.quantile(errs, 0.9) <= 45.0 * theory

    def test_improper_prior_rejected(self):
        _, data = sample_mean_instance(PriorSpec.isotropic(1.0, 2), 20, RngStream(5))
        with pytest.raises(ValueError):
            private_posterior_mean(data, PriorSpec.improper(2), 1.0, BETA)


class TestFrequentistPrivateMean:
    def test_degenerate_lambda_zero(self):
        data = MeanDataset(np.zeros((10, 2)))
        out = frequentist_private_mean(data, np.zeros((2, 2)), 1.0, 1.0, BETA)
        assert np.array_equal(out, data.mean())

    def test_identity_lambda_tracks_true_mean(self):
        # large eps, Lambda = I, d = 2: total error within 1.2x of sqrt(d/n)
        n = 6000
        ratios = []
        for i in range(60):
            gen = RngStream(800, i).generator()
            mu = gen.standard_normal(2) * 0.05
            data = MeanDataset(mu + gen.standard_normal((n, 2)))
            out = frequentist_private_mean(
                data, np.eye(2), radius=0.25, epsilon=1e6, beta=BETA,
                mode="stat", rng=RngStream(801, i),
            )
            ratios.append(np.linalg.norm(out - mu) / math.sqrt(2 / n))
        assert np.median(ratios) <= 1.2


class TestStreaming:
    def test_precision_law(self):
        state = StreamState.initial(2, 500)
        for t in range(1, 65):
            batch = MeanDataset(RngStream(20, t).generator().standard_normal((500, 2)))
            state = stream_update(state, batch, 1.0, mode="exact")
            assert state.precision == 500 * t

    def test_exact_updates_telescope(self):
        state = StreamState.initial(3, 40)
        means = []
        for t in range(5):
            batch = MeanDataset(RngStream(21, t).generator().standard_normal((40, 3)))
            means.append(batch.mean())
            state = stream_update(state, batch, 1.0, mode="exact")
        assert np.abs(state.mu - np.mean(means, axis=0)).max() <= 1e-12

    def test_first_batch_is_private_estimate(self):
        from robayes.privacy import private_empirical_mean

        state = StreamState.initial(2, 300)
        batch = MeanDataset(RngStream(22).generator().standard_normal((300, 2)))
        out = stream_update(state, batch, 2.0, mode="eff", rng=RngStream(23), radius=1.0)
        assert out.t == 1
        # mu_1 equals the private estimate exactly (running average of one term)
        expected = private_empirical_mean(
            batch, epsilon=2.0, beta=0.05, radius=1.0, mode="eff", rng=RngStream(23)
        )
        assert np.array_equal(out.mu, expected)

    def test_batch_size_mismatch(self):
        state = StreamState.initial(2, 100)
        with pytest.raises(ValueError):
            stream_update(state, MeanDataset(np.zeros((50, 2))), 1.0, mode="exact")

    def test_schedule_composition(self):
        for k in (1, 2, 4, 8, 64):
            sched = EpsilonSchedule(4.0, k)
            assert sched.check_composition()
            assert sched.total <= 2 * 4.0 + 1e-12

    def test_error_recursion_stays_bounded(self):
        errs = error_recursion(0.7, 64)
        assert errs.shape == (64,)
        assert errs.max() <= 0.7 + 1e-12

    def test_stream_monte_carlo(self):
        # k = 8 batches, n = 500, d = 2, eps = 4: every estimate tracks mu
        # within the statistical-plus-mechanism bound (constant 1.5 frozen)
        n, d, k, eps = 500, 2, 8, 4.0
        rate = RateFunction("mean-eff", d, n, BETA)
        hits = 0
        trials = 30
        for i in range(trials):
            mu = RngStream(950, i).generator().standard_normal(d) * 0.5
            sched = EpsilonSchedule(eps, k)
            state = StreamState.initial(d, n)
            good = True
            for t, eps_i in enumerate(sched.epsilons):
                batch = MeanDataset(
                    mu + RngStream(951, 100 * i + t).generator().standard_normal((n, d))
                )
                state = stream_update(
                    state, batch, eps_i, mode="eff", rng=RngStream(952, 100 * i + t), radius=2.0
                )
                stat_term = math.sqrt((d + math.log(k / BETA)) / (n * state.t))
                priv_term = rate.alpha(min((2.0 / eps_i) * math.log(20 / BETA * 4000) / n, 1 / 6))
                if np.linalg.norm(state.mu - mu) > 1.5 * (stat_term + priv_term):
                    good = False
            hits += good
        assert hits >= int(0.9 * trials)

    def test_run_stream_emits_jsonl(self):
        batches = [
            MeanDataset(RngStream(24, t).generator().standard_normal((50, 2))) for t in range(3)
        ]
        sink = io.StringIO()
        states = run_stream(batches, epsilon=2.0, mode="exact", sink=sink)
        lines = [json.loads(line) for line in sink.getvalue().splitlines()]
        assert [rec["t"] for rec in lines] == [1, 2, 3]
        assert np.allclose(lines[-1]["estimate"], states[-1].mu)
        assert all("epsilon_i" in rec for rec in lines)
