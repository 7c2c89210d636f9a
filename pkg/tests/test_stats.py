import math

import numpy as np
import pytest
from scipy import special as sp_special
from scipy import stats as sp_stats

from ragmark.errors import InvalidConfigError, InvalidInputError
from ragmark.stats import (
    DECISION_CLEAN,
    DECISION_INCONCLUSIVE,
    DECISION_WATERMARKED,
    REFERENCE_PRESETS,
    ReferenceDistribution,
    RunningStats,
    SummaryStats,
    deployment_test,
    log10_t_tail,
    pca_project,
    regularized_incomplete_beta,
    roc_points,
    sequential_audit,
    summarize,
    t_tail,
    welch_test,
)


class TestIncompleteBeta:
    def test_endpoints(self):
        assert regularized_incomplete_beta(0.0, 2.0, 3.0) == 0.0
        assert regularized_incomplete_beta(1.0, 2.0, 3.0) == 1.0

    def test_symmetry_identity_on_grid(self):
        # I_x(a, b) == 1 - I_{1-x}(b, a) to 1e-12 on a 1,000-point grid
        rng = np.random.default_rng(31)
        xs = rng.uniform(0.001, 0.999, 1000)
        abs_ = rng.uniform(0.1, 50.0, (1000, 2))
        for x, (a, b) in zip(xs, abs_):
            lhs = regularized_incomplete_beta(float(x), float(a), float(b))
            rhs = 1.0 - regularized_incomplete_beta(float(1 - x), float(b), float(a))
            assert abs(lhs - rhs) < 1e-12

    def test_against_scipy(self):
        rng = np.random.default_rng(32)
        for _ in range(500):
            x = float(rng.uniform(0.0001, 0.9999))
            a = float(rng.uniform(0.1, 100.0))
            b = float(rng.uniform(0.1, 100.0))
            ours = regularized_incomplete_beta(x, a, b)
            ref = float(sp_special.betainc(a, b, x))
            assert abs(ours - ref) < 1e-12

    def test_bad_args(self):
        with pytest.raises(InvalidInputError):
            regularized_incomplete_beta(0.5, -1.0, 2.0)
        with pytest.raises(InvalidInputError):
            regularized_incomplete_beta(1.5, 1.0, 2.0)


class TestTTail:
    def test_zero_is_half(self):
        for df in (0.5, 1, 2, 10, 100, 1e6):
            assert t_tail(0.0, df) == 0.5

    def test_cauchy_closed_form(self):
        # df=1 is Cauchy: P(T >= t) = 1/2 - arctan(t)/pi
        for t in np.linspace(-50, 50, 401):
            expected = 0.5 - math.atan(t) / math.pi
            assert abs(t_tail(float(t), 1.0) - expected) < 1e-12

    def test_t_table_value(self):
        assert t_tail(2.042, 30) == pytest.approx(0.025, abs=1e-4)

    def test_complement_identity(self):
        rng = np.random.default_rng(33)
        for _ in range(300):
            t = float(rng.uniform(-20, 20))
            df = float(rng.uniform(0.5, 200))
            assert abs(t_tail(t, df) + t_tail(-t, df) - 1.0) < 1e-12

    def test_strictly_decreasing(self):
        # strict where both neighbors are representable away from 1.0; the deep
        # negative tail saturates at exactly 1.0 in double precision
        ts = np.linspace(-7, 30, 371)
        for df in (1.0, 4.0, 37.5, 500.0):
            values = [t_tail(float(t), df) for t in ts]
            assert all(a > b for a, b in zip(values, values[1:]))
        wide = [t_tail(float(t), 37.5) for t in np.linspace(-30, 30, 601)]
        assert all(a >= b for a, b in zip(wide, wide[1:]))

    def test_against_scipy(self):
        rng = np.random.default_rng(34)
        for _ in range(500):
            t = float(rng.uniform(-40, 40))
            df = float(rng.uniform(0.5, 1000))
            assert t_tail(t, df) == pytest.approx(float(sp_stats.t.sf(t, df)), abs=1e-12)

    def test_log_tail_matches_extreme(self):
        # tail far below double-precision underflow still reports a finite log;
        # oracle computed with 50-digit mpmath before freezing
        lp = log10_t_tail(160.0, 511.0)
        assert lp == pytest.approx(-438.2461034675874, abs=1e-9)
        assert t_tail(160.0, 511.0) == 0.0  # the linear-scale value underflows

    def test_log_tail_matches_linear_in_normal_range(self):
        rng = np.random.default_rng(48)
        for _ in range(200):
            t = float(rng.uniform(-5, 12))
            df = float(rng.uniform(1, 300))
            assert log10_t_tail(t, df) == pytest.approx(math.log10(t_tail(t, df)), abs=1e-10)

    def test_bad_args(self):
        with pytest.raises(InvalidInputError):
            t_tail(math.nan, 5)
        with pytest.raises(InvalidInputError):
            t_tail(1.0, 0.0)


class TestWelch:
    def test_identical_samples(self):
        s = SummaryStats(0.4, 0.1, 20)
        res = welch_test(s, s)
        assert res.t == 0.0
        assert res.p_two_sided == pytest.approx(1.0)
        assert res.p_one_sided == pytest.approx(0.5)

    def test_swap_negates_t_keeps_two_sided(self):
        a = SummaryStats(0.7, 0.2, 15)
        b = SummaryStats(0.4, 0.05, 40)
        r1 = welch_test(a, b)
        r2 = welch_test(b, a)
        assert r1.t == -r2.t
        assert r1.df == r2.df
        assert r1.p_two_sided == pytest.approx(r2.p_two_sided, abs=1e-15)

    def test_against_scipy_on_random_pairs(self):
        rng = np.random.default_rng(35)
        for _ in range(1000):
            a = SummaryStats(float(rng.normal()), float(rng.uniform(0.001, 4.0)), int(rng.integers(2, 500)))
            b = SummaryStats(float(rng.normal()), float(rng.uniform(0.001, 4.0)), int(rng.integers(2, 500)))
            res = welch_test(a, b)
            ref_t, ref_p = sp_stats.ttest_ind_from_stats(
                a.mean, math.sqrt(a.variance), a.n,
                b.mean, math.sqrt(b.variance), b.n,
                equal_var=False,
            )
            # scipy does not expose df directly; recompute Welch-Satterthwaite
            va, vb = a.variance / a.n, b.variance / b.n
            ref_df = (va + vb) ** 2 / (va**2 / (a.n - 1) + vb**2 / (b.n - 1))
            assert res.t == pytest.approx(float(ref_t), abs=1e-9, rel=1e-9)
            assert res.df == pytest.approx(ref_df, abs=1e-9, rel=1e-9)
            assert res.p_two_sided == pytest.approx(float(ref_p), abs=1e-6)

    def test_df_bounds(self):
        rng = np.random.default_rng(36)
        for _ in range(500):
            a = SummaryStats(0.0, float(rng.uniform(0, 2)), int(rng.integers(2, 50)))
            b = SummaryStats(1.0, float(rng.uniform(0.001, 2)), int(rng.integers(2, 50)))
            res = welch_test(a, b)
            assert min(a.n, b.n) - 1 <= res.df + 1e-9
            assert res.df <= a.n + b.n - 2 + 1e-9

    def test_fixed_samples_oracle(self):
        # two fixed size-10 samples; summary stats computed independently
        xs = [0.1, 0.4, 0.35, 0.2, 0.8, 0.55, 0.3, 0.45, 0.6, 0.25]
        ys = [0.05, 0.1, 0.15, 0.0, 0.2, 0.1, 0.05, 0.15, 0.1, 0.0]
        res = welch_test(summarize(xs), summarize(ys))
        ref = sp_stats.ttest_ind(xs, ys, equal_var=False)
        assert res.t == pytest.approx(float(ref.statistic), abs=1e-9)
        assert res.p_two_sided == pytest.approx(float(ref.pvalue), abs=1e-6)

    def test_degenerate_equal(self):
        a = SummaryStats(0.5, 0.0, 5)
        b = SummaryStats(0.5, 0.0, 7)
        res = welch_test(a, b)
        assert res.degenerate and res.t == 0.0 and res.p_two_sided == 1.0

    def test_degenerate_unequal(self):
        res = welch_test(SummaryStats(1.0, 0.0, 5), SummaryStats(0.0, 0.0, 5))
        assert res.degenerate
        assert res.p_two_sided == 0.0 and res.p_one_sided == 0.0
        assert res.t == math.inf

    def test_two_sided_is_twice_min(self):
        rng = np.random.default_rng(37)
        for _ in range(200):
            a = SummaryStats(float(rng.normal()), float(rng.uniform(0.01, 1)), 12)
            b = SummaryStats(float(rng.normal()), float(rng.uniform(0.01, 1)), 30)
            res = welch_test(a, b)
            assert res.p_two_sided == pytest.approx(
                2 * min(res.p_one_sided, 1 - res.p_one_sided), abs=1e-12
            )


class TestRunningStats:
    def test_matches_batch(self):
        rng = np.random.default_rng(38)
        running = RunningStats()
        values = rng.uniform(0, 1, 500)
        for v in values:
            running.add(float(v))
        stats = running.stats()
        assert stats.mean == pytest.approx(float(values.mean()), abs=1e-12)
        assert stats.variance == pytest.approx(float(values.var(ddof=1)), abs=1e-12)

    def test_needs_two(self):
        running = RunningStats()
        running.add(1.0)
        with pytest.raises(InvalidInputError):
            running.stats()


ACR_CLEAN, ACR_WM = REFERENCE_PRESETS["acronym"]


class TestDeployment:
    def test_suspect_equals_watermarked_reference(self):
        suspect = SummaryStats(ACR_WM.mean, ACR_WM.variance, ACR_WM.assumed_n)
        res = deployment_test(suspect, ACR_CLEAN, ACR_WM, alpha=3e-5)
        assert res.decision == DECISION_WATERMARKED

    def test_suspect_equals_clean_reference(self):
        suspect = SummaryStats(ACR_CLEAN.mean, ACR_CLEAN.variance, ACR_CLEAN.assumed_n)
        res = deployment_test(suspect, ACR_CLEAN, ACR_WM, alpha=3e-5)
        assert res.decision == DECISION_CLEAN

    def test_midway_small_n_inconclusive(self):
        # bits: three successes in ten trials -> mean 0.3, var 7/30
        suspect = summarize([1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
        res = deployment_test(suspect, ACR_CLEAN, ACR_WM, alpha=3e-5)
        assert res.decision == DECISION_INCONCLUSIVE
        # oracle values computed with an independent Welch implementation
        assert res.p_above_clean == pytest.approx(0.0428087, abs=1e-5)
        assert res.p_below_watermarked == pytest.approx(0.0411092, abs=1e-5)

    def test_spatial_preset(self):
        clean, wm = REFERENCE_PRESETS["spatial"]
        suspect = SummaryStats(wm.mean, wm.variance, wm.assumed_n)
        assert deployment_test(suspect, clean, wm, alpha=3e-5).decision == DECISION_WATERMARKED

    def test_method_mismatch_rejected(self):
        sp_clean, _sp_wm = REFERENCE_PRESETS["spatial"]
        suspect = SummaryStats(0.5, 0.2, 100)
        with pytest.raises(InvalidConfigError):
            deployment_test(suspect, sp_clean, ACR_WM, alpha=0.05)

    def test_label_order_enforced(self):
        suspect = SummaryStats(0.5, 0.2, 100)
        with pytest.raises(InvalidConfigError):
            deployment_test(suspect, ACR_WM, ACR_CLEAN, alpha=0.05)

    def test_alpha_range(self):
        suspect = SummaryStats(0.5, 0.2, 100)
        with pytest.raises(InvalidInputError):
            deployment_test(suspect, ACR_CLEAN, ACR_WM, alpha=0.7)


class TestSequential:
    def test_emission_one_significant_within_five(self):
        # analytic sanity: all-ones stats at n=2 already give t ~ 159 vs clean
        result = sequential_audit(
            lambda _p: 1, iter(range(100)), ACR_CLEAN, alpha=0.05, max_queries=100
        )
        assert result.decision == DECISION_WATERMARKED
        assert result.queries_used <= 5

    def test_emission_zero_inconclusive(self):
        result = sequential_audit(
            lambda _p: 0, iter(range(100)), ACR_CLEAN, alpha=0.05, max_queries=50
        )
        assert result.decision == DECISION_INCONCLUSIVE
        assert result.queries_used == 50
        assert all(p >= 0.05 for p in result.p_trace)

    def test_bernoulli_point_six_median_within_thirty(self):
        # watermarked service at the preset mean, 100 seeded runs
        counts = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            result = sequential_audit(
                lambda _p: int(rng.random() < 0.6),
                iter(range(500)),
                ACR_CLEAN,
                alpha=0.05,
                max_queries=500,
            )
            assert result.decision == DECISION_WATERMARKED
            counts.append(result.queries_used)
        counts.sort()
        median = counts[50]
        assert median <= 30

    def test_failures_count_zero_and_never_abort(self):
        calls = []

        def flaky(probe):
            calls.append(probe)
            if probe % 2 == 0:
                raise RuntimeError("backend down")
            return 1

        seen = []
        result = sequential_audit(
            flaky, iter(range(20)), ACR_CLEAN, alpha=1e-9, max_queries=20,
            on_trial=lambda n, probe, bit, err: seen.append((probe, bit, err)),
        )
        assert result.queries_used == 20
        assert [bit for _p, bit, _e in seen] == [0, 1] * 10
        assert all(err is not None for p, _b, err in seen if p % 2 == 0)

    def test_stream_exhaustion_is_inconclusive(self):
        result = sequential_audit(
            lambda _p: 0, iter(range(3)), ACR_CLEAN, alpha=0.05, max_queries=100
        )
        assert result.decision == DECISION_INCONCLUSIVE
        assert result.queries_used == 3

    def test_replays_bit_identically(self):
        def run():
            rng = np.random.default_rng(77)
            return sequential_audit(
                lambda _p: int(rng.random() < 0.4),
                iter(range(200)),
                ACR_CLEAN,
                alpha=0.01,
                max_queries=200,
            )

        first, second = run(), run()
        assert first == second

    def test_p_trace_starts_at_two(self):
        result = sequential_audit(
            lambda _p: 0, iter(range(10)), ACR_CLEAN, alpha=0.05, max_queries=10
        )
        assert len(result.p_trace) == 9  # recomputed after queries 2..10


class TestRoc:
    def test_perfect_separation_passes_through_corner(self):
        clean = [0.0, 0.01, 0.02]
        wm = [0.9, 0.95, 1.0]
        points = roc_points(clean, wm, [0.0, 0.5, 1.5])
        assert (0.0, 1.0) in points

    def test_identical_distributions_on_diagonal(self):
        rates = list(np.random.default_rng(40).uniform(0, 1, 500))
        points = roc_points(rates, rates, list(np.linspace(0, 1, 21)))
        for fpr, tpr in points:
            assert fpr == tpr

    def test_sorted_by_fpr(self):
        rng = np.random.default_rng(41)
        clean = list(rng.uniform(0, 0.5, 100))
        wm = list(rng.uniform(0.3, 1.0, 100))
        points = roc_points(clean, wm, list(np.linspace(0, 1, 11)))
        fprs = [f for f, _ in points]
        assert fprs == sorted(fprs)

    def test_tpr_nondecreasing_with_fpr(self):
        rng = np.random.default_rng(42)
        clean = list(rng.uniform(0, 1, 200))
        wm = list(np.clip(rng.uniform(0, 1, 200) + 0.2, 0, 1))
        points = roc_points(clean, wm, list(np.linspace(0, 1, 21)))
        tprs = [t for _, t in points]
        assert all(b >= a - 1e-12 for a, b in zip(tprs, tprs[1:]))

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            roc_points([], [0.5], [0.1])
        with pytest.raises(InvalidInputError):
            roc_points([0.5], [1.5], [0.1])
        with pytest.raises(InvalidInputError):
            roc_points([0.5], [0.5], [0.9, 0.1])


class TestPca:
    def test_line_in_three_space(self):
        rng = np.random.default_rng(43)
        ts = rng.uniform(-3, 3, 200)
        direction = np.array([1.0, 2.0, -1.0]) / math.sqrt(6)
        points = np.outer(ts, direction)
        proj = pca_project(points, components=2)
        var = proj.coordinates.var(axis=0, ddof=1)
        assert var[0] > 0
        assert var[1] == pytest.approx(0.0, abs=1e-16)
        assert var[0] / var.sum() > 0.999999

    def test_anisotropic_gaussian_recovery(self):
        rng = np.random.default_rng(44)
        n = 2000
        data = rng.standard_normal((n, 3)) * np.sqrt([9.0, 1.0, 0.01])
        proj = pca_project(data, components=3)
        for got, expected in zip(sorted(proj.explained_variance, reverse=True), (9.0, 1.0, 0.01)):
            assert abs(got - expected) / expected < 0.10

    def test_components_orthonormal(self):
        rng = np.random.default_rng(45)
        data = rng.standard_normal((100, 10))
        proj = pca_project(data, components=4)
        gram = proj.components @ proj.components.T
        assert np.allclose(gram, np.eye(4), atol=1e-8)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(46)
        data = rng.standard_normal((60, 5))
        proj1 = pca_project(data, components=2)
        perm = rng.permutation(60)
        proj2 = pca_project(data[perm], components=2)
        assert np.allclose(proj1.coordinates[perm], proj2.coordinates, atol=1e-9)

    def test_full_projection_preserves_distances(self):
        rng = np.random.default_rng(47)
        data = rng.standard_normal((40, 6))
        proj = pca_project(data, components=6)
        for i in range(0, 40, 7):
            for j in range(i + 1, 40, 5):
                orig = np.linalg.norm(data[i] - data[j])
                mapped = np.linalg.norm(proj.coordinates[i] - proj.coordinates[j])
                assert mapped == pytest.approx(orig, abs=1e-6)

    def test_identical_vectors_degenerate(self):
        data = np.tile(np.array([0.5, -1.0, 2.0]), (10, 1))
        proj = pca_project(data, components=2)
        assert proj.degenerate
        assert np.all(proj.coordinates == 0.0)

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            pca_project([[1.0, 2.0]], components=1)
        with pytest.raises(InvalidInputError):
            pca_project([[1.0, 2.0], [2.0, 3.0]], components=3)


class TestReferences:
    def test_preset_values(self):
        clean, wm = REFERENCE_PRESETS["acronym"]
        assert (clean.mean, clean.variance) == (0.005, 0.02)
        assert (wm.mean, wm.variance) == (0.6, 0.2)
        sp_clean, sp_wm = REFERENCE_PRESETS["spatial"]
        assert (sp_clean.mean, sp_clean.variance) == (0.2, 0.2)
        assert (sp_wm.mean, sp_wm.variance) == (0.55, 0.25)
        assert clean.assumed_n == 512

    def test_bad_label(self):
        with pytest.raises(InvalidInputError):
            ReferenceDistribution("suspicious", "acronym", 0.5, 0.1)
