import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm

from gliorad.errors import DegenerateInputError, UsageError
from gliorad.evaluation.stats import (
    bootstrap_ci,
    cohort_balance_tests,
    effect_ratios,
    kaplan_meier,
    kaplan_meier_logrank,
    logrank_test,
    permutation_test_mean_metric,
    prediction_correlation,
    youden_threshold,
)


def _cohort_frame(n, age_shift=0.0, female=0.5, methylated=0.5, dead=0.25, seed=0):
    rng = np.random.default_rng(seed)
    want_dead = rng.random(n) < dead
    os_days = np.where(want_dead, rng.integers(30, 183, size=n), rng.integers(183, 900, size=n))
    event = want_dead | (rng.random(n) < 0.5)
    survival = np.where(want_dead, "<=6m", ">6m")
    return pd.DataFrame({
        "patient_id": [f"p{seed}_{i}" for i in range(n)],
        "center": ["X"] * n,
        "age": rng.normal(64.0 + age_shift, 10.0, size=n),
        "sex": np.where(rng.random(n) < female, "female", "male"),
        "mgmt": np.where(rng.random(n) < methylated, "methylated", "unmethylated"),
        "idh": ["wildtype"] * n,
        "os_days": os_days.astype(float),
        "event": event.astype(bool),
        "survival_6m": survival,
    })


class TestBootstrapCI:
    def test_constant_samples_zero_width(self):
        ci = bootstrap_ci([0.7] * 12, n_resamples=200, seed=3)
        assert ci.estimate == pytest.approx(0.7)
        assert ci.low == ci.high == pytest.approx(0.7)

    def test_single_resample_degenerates_to_it(self):
        ci = bootstrap_ci([0.1, 0.5, 0.9], n_resamples=1, seed=7)
        assert ci.low == ci.high
        assert 0.1 <= ci.low <= 0.9

    def test_mean_is_point_estimate(self):
        ci = bootstrap_ci([0.2, 0.4, 0.9], n_resamples=50, seed=0)
        assert ci.estimate == pytest.approx(0.5)
        assert ci.low <= ci.estimate <= ci.high

    def test_score_mode_brackets_observed_auc(self):
        rng = np.random.default_rng(5)
        labels = np.repeat([0.0, 1.0], 100)
        scores = rng.normal(labels, 1.0)
        ci = bootstrap_ci(scores=scores, labels=labels, seed=5)
        assert ci.low < ci.estimate < ci.high

    def test_coverage_near_nominal(self):
        # binormal scores: positives N(1,1) vs negatives N(0,1) have
        # true AUC = Phi(1/sqrt(2)); stratified percentile bootstrap at
        # n=500 should cover it at roughly the nominal 95% rate
        true_auc = float(norm.cdf(1.0 / np.sqrt(2.0)))
        rng = np.random.default_rng(42)
        covered = 0
        trials = 200
        for t in range(trials):
            scores = np.concatenate([rng.normal(0.0, 1.0, 250), rng.normal(1.0, 1.0, 250)])
            labels = np.repeat([0.0, 1.0], 250)
            ci = bootstrap_ci(scores=scores, labels=labels, n_resamples=1000, seed=t)
            covered += int(ci.low <= true_auc <= ci.high)
        assert 0.92 * trials <= covered <= 0.98 * trials

    def test_rejects_both_modes(self):
        with pytest.raises(UsageError):
            bootstrap_ci([0.1], scores=[0.1], labels=[1.0])
        with pytest.raises(UsageError):
            bootstrap_ci()

    def test_single_class_labels_degenerate(self):
        with pytest.raises(DegenerateInputError):
            bootstrap_ci(scores=[0.1, 0.2], labels=[1.0, 1.0])


class TestPermutationTest:
    def test_identical_vectors_give_one(self):
        a = [0.7, 0.71, 0.69, 0.7]
        assert permutation_test_mean_metric(a, a, paired=True) == 1.0
        assert permutation_test_mean_metric(a, a, paired=False, seed=2) == 1.0

    def test_large_shift_paired(self):
        rng = np.random.default_rng(0)
        b = rng.normal(0.0, 0.01, size=40)
        a = b + 10.0
        p = permutation_test_mean_metric(a, b, paired=True, seed=1)
        assert p < 0.001

    def test_large_shift_unpaired(self):
        rng = np.random.default_rng(1)
        b = rng.normal(0.0, 0.01, size=40)
        a = b + 10.0
        p = permutation_test_mean_metric(a, b, paired=False, seed=1)
        assert p < 0.001

    def test_null_rejection_rate_calibrated(self):
        rng = np.random.default_rng(7)
        rejections = 0
        trials = 500
        for t in range(trials):
            a = rng.normal(size=20)
            b = rng.normal(size=20)
            p = permutation_test_mean_metric(a, b, paired=True, n_permutations=999, seed=t)
            rejections += int(p <= 0.05)
        assert 0.03 * trials <= rejections <= 0.07 * trials

    def test_paired_length_mismatch(self):
        with pytest.raises(UsageError):
            permutation_test_mean_metric([1.0, 2.0], [1.0], paired=True)

    def test_minimum_attainable_p(self):
        p = permutation_test_mean_metric([10.0] * 8, [0.0] * 8, paired=True,
                                         n_permutations=999, seed=0)
        assert p >= 1.0 / 1000.0


class TestSurvival:
    def test_product_limit_thirds(self):
        km = kaplan_meier([1.0, 2.0, 3.0], [True, True, True])
        assert km.times == (1.0, 2.0, 3.0)
        assert km.survival == pytest.approx((2.0 / 3.0, 1.0 / 3.0, 0.0))
        assert km.at_risk == (3, 2, 1)

    def test_censoring_shrinks_risk_set(self):
        km = kaplan_meier([1.0, 2.0, 3.0], [True, False, True])
        # after the censored subject leaves, only one remains at risk
        assert km.survival == pytest.approx((2.0 / 3.0, 0.0))

    def test_identical_groups_p_one(self):
        t = [3.0, 5.0, 7.0, 11.0]
        e = [True, True, False, True]
        chi2, p = logrank_test(t, e, t, e)
        assert chi2 == pytest.approx(0.0)
        assert p == pytest.approx(1.0)

    def test_hazard_ratio_three_detected(self):
        rng = np.random.default_rng(11)
        ta = rng.exponential(1.0, size=200)
        tb = rng.exponential(3.0, size=200)
        _, p = logrank_test(ta, np.ones(200, bool), tb, np.ones(200, bool))
        assert p < 0.001

    def test_grouped_interface(self):
        rng = np.random.default_rng(3)
        groups = {
            "high": (rng.exponential(1.0, size=50), np.ones(50, bool)),
            "low": (rng.exponential(2.5, size=50), np.ones(50, bool)),
        }
        res = kaplan_meier_logrank(groups)
        assert set(res.curves) == {"high", "low"}
        assert 0.0 <= res.p_value <= 1.0

    def test_exactly_two_groups_required(self):
        with pytest.raises(UsageError):
            kaplan_meier_logrank({"only": ([1.0], [True])})

    def test_no_events_p_one(self):
        _, p = logrank_test([1.0, 2.0], [False, False], [1.5, 2.5], [False, False])
        assert p == 1.0


class TestYouden:
    def test_enumerated_example(self):
        res = youden_threshold([1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 1.0, 1.0])
        assert 2.0 < res.threshold <= 3.0
        assert res.j == pytest.approx(1.0)
        assert res.sensitivity == pytest.approx(1.0)
        assert res.specificity == pytest.approx(1.0)

    def test_perfect_separation_gap_midpoint(self):
        res = youden_threshold([0.1, 0.2, 0.8, 0.9], [0.0, 0.0, 1.0, 1.0])
        assert res.threshold == pytest.approx(0.5)
        assert res.j == pytest.approx(1.0)

    def test_ties_take_lower_threshold(self):
        # J = 0.5 at both 1.5 and 3.5; the scan keeps the lower cut
        res = youden_threshold([1.0, 2.0, 3.0, 4.0], [0.0, 1.0, 0.0, 1.0])
        assert res.threshold == pytest.approx(1.5)
        assert res.j == pytest.approx(0.5)

    def test_independent_labels_near_zero(self):
        rng = np.random.default_rng(9)
        scores = rng.normal(size=20000)
        labels = (rng.random(20000) < 0.5).astype(float)
        res = youden_threshold(scores, labels)
        assert res.j < 0.05

    def test_single_class_rejected(self):
        with pytest.raises(DegenerateInputError):
            youden_threshold([1.0, 2.0], [1.0, 1.0])


class TestCohortBalance:
    def test_identical_cohorts_maximal_p(self):
        frame = _cohort_frame(80, seed=1)
        out = cohort_balance_tests(frame, frame.copy())
        for key in ("age", "sex", "mgmt", "survival_6m", "overall_survival"):
            assert out[key] == pytest.approx(1.0, abs=1e-9), key

    def test_age_shift_detected(self):
        a = _cohort_frame(200, seed=2)
        b = _cohort_frame(200, age_shift=10.0, seed=3)
        out = cohort_balance_tests(a, b)
        assert out["age"] < 0.001

    def test_close_proportions_not_significant(self):
        # 0.36 vs ~0.35 at n=900/270: z is about 0.25, p about 0.8
        a = _cohort_frame(900, seed=4)
        b = _cohort_frame(270, seed=5)
        a["sex"] = ["female"] * 324 + ["male"] * 576
        b["sex"] = ["female"] * 95 + ["male"] * 175
        out = cohort_balance_tests(a, b)
        assert out["sex"] > 0.5

    def test_association_key_present(self):
        a = _cohort_frame(120, seed=6)
        b = _cohort_frame(120, seed=7)
        out = cohort_balance_tests(a, b)
        assert 0.0 <= out["mgmt_vs_outcome"] <= 1.0

    def test_empty_side_rejected(self):
        frame = _cohort_frame(10, seed=8)
        with pytest.raises(UsageError):
            cohort_balance_tests(frame, frame.iloc[:0])


class TestEffectRatios:
    def _logistic_rows(self, n, beta, seed, binary=True):
        rng = np.random.default_rng(seed)
        x = (rng.random(n) < 0.5).astype(float) if binary else rng.normal(size=n)
        age = rng.normal(size=n)
        eta = -1.0 + beta * x + 0.3 * age
        dead = rng.random(n) < 1.0 / (1.0 + np.exp(-eta))
        return pd.DataFrame({
            "x": x,
            "age": age,
            "survival_6m": np.where(dead, "<=6m", ">6m"),
            "os_days": np.where(dead, 90.0, 400.0),
            "event": dead | (rng.random(n) < 0.3),
        })

    def test_odds_ratio_two_recovered(self):
        rows = self._logistic_rows(2000, beta=np.log(2.0), seed=0)
        table = effect_ratios("logistic", rows, ["x", "age"])
        x_est = table[0]
        assert x_est.name == "x"
        assert 1.7 <= x_est.ratio <= 2.4
        assert x_est.low < x_est.ratio < x_est.high

    def test_null_covariate_coverage(self):
        covered = 0
        trials = 200
        for t in range(trials):
            rows = self._logistic_rows(1000, beta=0.0, seed=100 + t)
            table = effect_ratios("logistic", rows, ["x", "age"])
            covered += int(table[0].low <= 1.0 <= table[0].high)
        assert 0.92 * trials <= covered <= 0.985 * trials

    def test_doubling_rows_leaves_estimates(self):
        rows = self._logistic_rows(400, beta=0.8, seed=9)
        doubled = pd.concat([rows, rows], ignore_index=True)
        a = effect_ratios("logistic", rows, ["x", "age"])
        b = effect_ratios("logistic", doubled, ["x", "age"])
        for ea, eb in zip(a, b):
            assert eb.ratio == pytest.approx(ea.ratio, rel=1e-8)

    def test_hazard_ratio_recovered(self):
        rng = np.random.default_rng(21)
        n = 600
        x = (rng.random(n) < 0.5).astype(float)
        times = rng.exponential(1.0 / np.exp(np.log(2.0) * x))
        rows = pd.DataFrame({
            "x": x,
            "os_days": times,
            "event": np.ones(n, dtype=bool),
            "survival_6m": [">6m"] * n,
        })
        table = effect_ratios("cox", rows, ["x"])
        assert 1.6 <= table[0].ratio <= 2.5

    def test_cox_doubling_rows(self):
        rows = self._logistic_rows(300, beta=0.5, seed=13)
        doubled = pd.concat([rows, rows], ignore_index=True)
        a = effect_ratios("cox", rows, ["x", "age"])
        b = effect_ratios("cox", doubled, ["x", "age"])
        for ea, eb in zip(a, b):
            assert eb.ratio == pytest.approx(ea.ratio, rel=1e-8)

    def test_categorical_encoding(self):
        rows = self._logistic_rows(500, beta=0.7, seed=17)
        rows["sex"] = np.where(rows["x"] > 0.5, "female", "male")
        table = effect_ratios("logistic", rows, ["sex", "age"])
        assert table[0].name == "sex"
        assert table[0].ratio > 1.0

    def test_unknown_category_rejected(self):
        rows = self._logistic_rows(50, beta=0.0, seed=19)
        rows["mgmt"] = "unknown"
        with pytest.raises(UsageError):
            effect_ratios("logistic", rows, ["mgmt"])


class TestPredictionCorrelation:
    def test_identity(self):
        assert prediction_correlation([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0)

    def test_negation(self):
        assert prediction_correlation([1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]) == pytest.approx(-1.0)

    def test_hand_computed_value(self):
        r = prediction_correlation([1.0, 2.0, 3.0], [1.0, 2.0, 4.0])
        assert r == pytest.approx(0.982, abs=0.001)

    def test_constant_rejected(self):
        with pytest.raises(DegenerateInputError):
            prediction_correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
