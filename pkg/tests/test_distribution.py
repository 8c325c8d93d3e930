"""Histogram reconstruction: grouping, likelihood kernels, and the EM loop."""

import numpy as np
import pytest

from ldpfuse import (
    BucketGrid,
    Collection,
    EmConfig,
    EmDivergedError,
    HistogramEstimate,
    ImpossibleObservationError,
    ServicePlan,
    Stratum,
    UnsupportedMechanismError,
    UserObservations,
    conditional_matrix,
    em_estimate,
    estimate_histogram,
    generate_synthetic,
    group_users,
    histogram_mean,
    make_mechanism,
    simulate_collection,
)
from ldpfuse.distribution import _unique_rows
from ldpfuse.kernels import em_fit


class TestGroupUsers:
    def test_counts_by_joint_vector(self):
        sr = make_mechanism("sr", 1.0)
        a = sr.atom
        col = Collection(
            [
                Stratum(
                    (0, 1),
                    np.arange(4),
                    np.array([[a, -a], [a, -a], [-a, -a], [a, a]]),
                )
            ],
            2,
        )
        buckets = {j: conditional_matrix(sr, BucketGrid(-1, 1, 4), service_id=j).output_buckets for j in (0, 1)}
        grouped = group_users(col, buckets)
        assert grouped.n_users == 4
        assert grouped.n_groups == 3
        got = grouped.as_dict()
        assert got[((0, 1), (1, 0))] == 2
        assert got[((0, 1), (0, 0))] == 1
        assert got[((0, 1), (1, 1))] == 1

    def test_distinct_vectors_bounded(self):
        """Never more groups than users or than the product of bucket counts."""
        pop = generate_synthetic("beta25", 300, np.random.default_rng(0))
        mechs = [make_mechanism("sr", 1.0), make_mechanism("pm", 1.0)]
        col = simulate_collection(pop, ServicePlan(mechs), seed=1)
        grid = BucketGrid(-1.0, 1.0, 8)
        buckets = {
            0: conditional_matrix(mechs[0], grid, 3, service_id=0).output_buckets,
            1: conditional_matrix(mechs[1], grid, 3, service_id=1).output_buckets,
        }
        grouped = group_users(col, buckets)
        assert grouped.n_groups <= min(300, 2 * 3)
        assert grouped.n_users == 300

    def test_wide_service_sets_use_generic_grouping(self):
        """Once the packed code risks overflow the row-unique fallback kicks in."""
        rng = np.random.default_rng(5)
        m, n = 42, 60
        idx = rng.integers(0, 3, size=(n, m))
        sizes = [3] * m  # 3**42 overflows the packing limit
        vecs, counts = _unique_rows(idx, sizes)
        assert counts.sum() == n
        assert vecs.shape[1] == m
        seen = {tuple(r) for r in idx}
        assert len(seen) == vecs.shape[0]

    def test_bad_observation_annotated(self):
        sr = make_mechanism("sr", 1.0)
        col = Collection([Stratum((0,), np.array([9]), np.array([[0.123]]))], 1)
        buckets = {0: conditional_matrix(sr, BucketGrid(-1, 1, 4), service_id=0).output_buckets}
        with pytest.raises(Exception) as info:
            group_users(col, buckets)
        assert "user 9" in str(info.value) or "service 0" in str(info.value)


class TestHistogramEstimate:
    def test_mean_from_midpoints(self):
        grid = BucketGrid(-1.0, 1.0, 4)
        est = HistogramEstimate(grid, np.array([0.5, 0.0, 0.0, 0.5]))
        assert est.mean() == pytest.approx(0.0)
        assert histogram_mean(est) == est.mean()
        tilted = HistogramEstimate(grid, np.array([0.0, 0.0, 0.0, 1.0]))
        assert tilted.mean() == pytest.approx(0.75)


class TestEmFit:
    def _random_instance(self, rng, n_groups=20, l=6):
        g = rng.random((n_groups, l)) + 0.05
        g /= g.sum(axis=0, keepdims=True)  # columns behave like distributions
        counts = rng.integers(1, 50, n_groups).astype(float)
        d0 = np.full(l, 1.0 / l)
        return g, counts, d0

    def test_loglikelihood_never_decreases(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            g, counts, d0 = self._random_instance(rng)
            d, trace, converged = em_fit(g, counts, d0, 1e-10, 400, 1e-12)
            diffs = np.diff(trace)
            assert (diffs >= -1e-9).all()
            assert d.sum() == pytest.approx(1.0, abs=1e-12)
            assert (d > 0).all()

    def test_matches_simplex_grid_search(self):
        """EM fixed point agrees with brute-force likelihood maximization."""
        rng = np.random.default_rng(3)
        step = 0.01
        for _ in range(8):
            g, counts, d0 = self._random_instance(rng, n_groups=10, l=3)
            d, _, _ = em_fit(g, counts, d0, 1e-12, 20_000, 1e-15)
            best, best_ll = None, -np.inf
            for a in np.arange(0.0, 1.0 + step / 2, step):
                for b in np.arange(0.0, 1.0 - a + step / 2, step):
                    cand = np.array([a, b, 1.0 - a - b])
                    s = g @ cand
                    if (s <= 0).any():
                        continue
                    ll = float(counts @ np.log(s))
                    if ll > best_ll:
                        best, best_ll = cand, ll
            assert np.abs(d - best).max() < 0.02

    def test_positivity_floor(self):
        # one bucket explains nothing; the floor keeps it barely alive
        g = np.array([[1.0, 0.01], [0.0, 0.99]])
        counts = np.array([500.0, 0.0])
        d, _, _ = em_fit(g, counts, np.array([0.5, 0.5]), 1e-12, 5000, 1e-12)
        assert d[1] >= 9.9e-13  # floored, then renormalization shaves a sliver
        assert d.sum() == pytest.approx(1.0, abs=1e-12)
        assert d[0] > 0.99


class TestEmEstimate:
    def test_two_bucket_closed_form(self):
        """With one binary service the MLE is solvable by hand."""
        sr = make_mechanism("sr", 1.0)
        grid = BucketGrid(-1.0, 1.0, 2)
        pop = generate_synthetic("beta25", 40_000, np.random.default_rng(2))
        col = simulate_collection(pop, ServicePlan([sr]), seed=3)
        result = estimate_histogram(col, [sr], grid, config=EmConfig(threshold=1e-10))
        # closed form: observed positive share = d0 * p(+|mu0) + d1 * p(+|mu1)
        share = np.mean(col.service_view(0) == sr.atom)
        p0, p1 = sr.prob_positive(-0.5), sr.prob_positive(0.5)
        d1 = float(np.clip((share - p0) / (p1 - p0), 0.0, 1.0))
        np.testing.assert_allclose(result.histogram.probs, [1 - d1, d1], atol=1e-6)
        assert result.converged

    def test_multi_service_recovery(self):
        """Joint reconstruction should land near a coarse truth at medium scale."""
        mechs = [make_mechanism(k, 2.0) for k in ("pm", "sw")]
        grid = BucketGrid(-1.0, 1.0, 8)
        pop = generate_synthetic("betasin", 120_000, np.random.default_rng(4))
        col = simulate_collection(pop, ServicePlan(mechs), seed=5)
        result = estimate_histogram(col, mechs, grid, output_resolution=16)
        truth = pop.true_histogram(grid)
        assert np.abs(result.histogram.probs - truth).max() < 0.04
        assert result.histogram.probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_loglik_trace_matches_direct_evaluation(self):
        mechs = [make_mechanism("sr", 1.0), make_mechanism("pm", 1.0)]
        grid = BucketGrid(-1.0, 1.0, 6)
        pop = generate_synthetic("beta25", 2_000, np.random.default_rng(8))
        col = simulate_collection(pop, ServicePlan(mechs), seed=9)
        matrices = {j: conditional_matrix(mechs[j], grid, 8, service_id=j) for j in (0, 1)}
        buckets = {j: matrices[j].output_buckets for j in (0, 1)}
        grouped = group_users(col, buckets)
        result = em_estimate(grouped, matrices, grid, EmConfig(max_iterations=50))
        # recompute L(final d) from scratch: sum over groups of count * log P(vector|d)
        total = 0.0
        for (services, vector), count in grouped.as_dict().items():
            per_bucket = np.ones(grid.count)
            for j, r in zip(services, vector):
                per_bucket = per_bucket * matrices[j].probs[r]
            total += count * np.log(float(per_bucket @ result.histogram.probs))
        assert result.loglik[-1] == pytest.approx(total, rel=1e-9)

    def test_log_space_kernel_path(self):
        """Nine services force the log-space build; L must stay exact."""
        mechs = [make_mechanism("sr", 1.0) for _ in range(9)]
        grid = BucketGrid(-1.0, 1.0, 4)
        pop = generate_synthetic("beta25", 3_000, np.random.default_rng(19))
        col = simulate_collection(pop, ServicePlan(mechs), seed=20)
        matrices = {j: conditional_matrix(mechs[j], grid, service_id=j) for j in range(9)}
        buckets = {j: matrices[j].output_buckets for j in range(9)}
        grouped = group_users(col, buckets)
        result = em_estimate(grouped, matrices, grid, EmConfig(max_iterations=80))
        total = 0.0
        for (services, vector), count in grouped.as_dict().items():
            per_bucket = np.ones(grid.count)
            for j, r in zip(services, vector):
                per_bucket = per_bucket * matrices[j].probs[r]
            total += count * np.log(float(per_bucket @ result.histogram.probs))
        assert result.loglik[-1] == pytest.approx(total, rel=1e-9)
        assert (np.diff(result.loglik) >= -1e-9).all()

    def test_laplace_service_rejected(self):
        mechs = [make_mechanism("laplace", 1.0)]
        grid = BucketGrid(-1.0, 1.0, 4)
        pop = generate_synthetic("beta25", 100, np.random.default_rng(1))
        col = simulate_collection(pop, ServicePlan(mechs), seed=2)
        with pytest.raises(UnsupportedMechanismError):
            estimate_histogram(col, mechs, grid)

    def test_services_subset_selects_baseline(self):
        mechs = [make_mechanism("sr", 0.5), make_mechanism("sw", 0.5)]
        grid = BucketGrid(-1.0, 1.0, 8)
        pop = generate_synthetic("beta25", 5_000, np.random.default_rng(14))
        col = simulate_collection(pop, ServicePlan(mechs), seed=15)
        solo = estimate_histogram(col, mechs, grid, services=[1])
        joint = estimate_histogram(col, mechs, grid)
        assert not np.allclose(solo.histogram.probs, joint.histogram.probs)

    def test_dead_row_raises(self):
        """A group whose vector no input bucket can produce is a modeling error."""
        from ldpfuse.buckets import ConditionalMatrix
        from ldpfuse.distribution import GroupedCounts, GroupStratum

        grid = BucketGrid(-1.0, 1.0, 3)
        out = BucketGrid(0.0, 1.0, 2)
        probs = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])  # row 1 unreachable
        cm = ConditionalMatrix(grid, out, probs, 0)
        grouped = GroupedCounts([GroupStratum((0,), np.array([[1]]), np.array([3.0]))])
        with pytest.raises(ImpossibleObservationError):
            em_estimate(grouped, {0: cm}, grid, EmConfig())

    def test_em_config_validation(self):
        with pytest.raises(ValueError):
            EmConfig(threshold=0.0)
        with pytest.raises(ValueError):
            EmConfig(max_iterations=0)
        with pytest.raises(ValueError):
            EmConfig(floor=-1.0)

    def test_mixed_strata_contribute(self):
        """Users from different participation groups feed one estimate."""
        from ldpfuse import ParticipationGroup

        mechs = [make_mechanism("pm", 1.5), make_mechanism("sw", 1.5)]
        plan = ServicePlan(
            mechs,
            groups=[
                ParticipationGroup((0,), 30_000),
                ParticipationGroup((1,), 30_000),
                ParticipationGroup((0, 1), 40_000),
            ],
        )
        pop = generate_synthetic("beta25", 100_000, np.random.default_rng(31))
        col = simulate_collection(pop, plan, seed=32)
        grid = BucketGrid(-1.0, 1.0, 8)
        result = estimate_histogram(col, mechs, grid, output_resolution=16)
        truth = pop.true_histogram(grid)
        assert np.abs(result.histogram.probs - truth).max() < 0.04
