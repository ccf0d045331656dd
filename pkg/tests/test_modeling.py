import numpy as np
import pandas as pd
import pytest

from gliorad.errors import (
    ConvergenceError,
    DegenerateInputError,
    LeakageError,
    UsageError,
)
from gliorad.modeling import (
    PathFit,
    PrognosticModel,
    RiskScore,
    auc_roc,
    compute_rrs,
    cox_nll,
    cox_nll_grad,
    fit_coxnet,
    fit_logistic_elasticnet,
    fit_path,
    fusion_matrix,
    harrell_cindex,
    lambda_grid,
    late_fuse,
    logistic_nll,
    logistic_nll_grad,
    risk_scores,
)
from oracles import (
    auc_bruteforce,
    cindex_bruteforce,
    cox_breslow_nll,
    enet_logistic_fista,
    logistic_newton,
)


def _logistic_data(n=120, p=5, seed=0, beta=None, intercept=-0.2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    if beta is None:
        beta = np.linspace(1.2, -0.8, p)
    eta = X @ beta + intercept
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    if y.min() == y.max():  # keep both classes regardless of the draw
        y[0] = 1.0 - y[0]
    return X, y


def _survival_data(n=200, seed=0, beta=0.7, censor=0.2):
    rng = np.random.default_rng(seed)
    x = (rng.random(n) < 0.5).astype(float)
    times = rng.exponential(1.0 / np.exp(beta * x))
    events = (rng.random(n) >= censor).astype(int)
    if events.sum() == 0:
        events[0] = 1
    return x[:, None], times, events


def _identity_model(coefs, kind="logistic", intercept=0.0):
    names = tuple(f"x{j}" for j in range(len(coefs)))
    return PrognosticModel(
        kind=kind,
        features=names,
        coefficients={n: float(c) for n, c in zip(names, coefs)},
        intercept=None if kind == "cox" else intercept,
        alpha=0.5,
        lam=0.0,
        standardization={n: (0.0, 1.0) for n in names},
    )


class TestPrognosticModel:
    def test_json_round_trip(self, tmp_path):
        X, y = _logistic_data(seed=3)
        model = fit_logistic_elasticnet(
            X, y, lam=0.02, seed=7, training_ids=[f"p{i}" for i in range(len(y))]
        )
        path = tmp_path / "model.json"
        model.to_json(str(path))
        back = PrognosticModel.from_json(str(path))
        assert back.kind == model.kind
        assert back.features == model.features
        assert back.coefficients == model.coefficients
        assert back.intercept == model.intercept
        assert back.standardization == model.standardization
        assert back.seed == 7 and back.training_ids == model.training_ids
        assert np.array_equal(back.linear_predictor(X), model.linear_predictor(X))

    def test_cox_intercept_forbidden(self):
        with pytest.raises(UsageError, match="intercept"):
            PrognosticModel(
                kind="cox",
                features=("a",),
                coefficients={"a": 1.0},
                intercept=0.5,
                alpha=0.5,
                lam=0.0,
                standardization={"a": (0.0, 1.0)},
            )

    def test_nonfinite_coefficient_rejected(self):
        with pytest.raises(UsageError, match="finite"):
            _identity_model([np.inf])

    def test_dataframe_prediction_selects_named_columns(self):
        model = _identity_model([2.0, -1.0], intercept=0.5)
        frame = pd.DataFrame({"x1": [1.0], "extra": [9.0], "x0": [3.0]})
        assert model.linear_predictor(frame)[0] == pytest.approx(6.0 - 1.0 + 0.5)
        with pytest.raises(UsageError, match="missing"):
            model.linear_predictor(frame[["x0"]])


class TestLogisticFit:
    def test_full_shrinkage(self):
        X, y = _logistic_data(seed=1)
        model = fit_logistic_elasticnet(X, y, lam=1e6)
        assert (model.coefficient_vector() == 0).all()
        assert model.intercept == pytest.approx(
            np.log(y.mean() / (1 - y.mean())), abs=1e-6
        )

    def test_matches_newton_oracle_unpenalized(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(80, 1))
        eta = 0.9 * X[:, 0] + 0.3 + rng.normal(0, 2.0, 80)  # overlap, no separation
        y = (eta > 0).astype(float)
        model = fit_logistic_elasticnet(X, y, lam=0.0)
        b0, beta = logistic_newton(X, y)
        assert model.intercept == pytest.approx(b0, abs=1e-4)
        assert model.coefficient_vector()[0] == pytest.approx(beta[0], abs=1e-4)

    def test_matches_proximal_oracle_with_penalty(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(60, 4))
        X = (X - X.mean(axis=0)) / X.std(axis=0)
        y = (rng.random(60) < 1 / (1 + np.exp(-X[:, 0] + X[:, 2]))).astype(float)
        for lam, alpha in [(0.05, 0.5), (0.02, 1.0), (0.1, 0.0)]:
            model = fit_logistic_elasticnet(X, y, lam=lam, alpha=alpha)
            b0, beta = enet_logistic_fista(X, y, lam, alpha)
            # compare in the standardized units the penalty applies to
            scale = np.array([model.standardization[f][1] for f in model.features])
            np.testing.assert_allclose(
                model.coefficient_vector() * scale, beta, atol=1e-4
            )

    def test_permuted_labels_score_half(self):
        aucs = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(60, 3))
            y = np.repeat([0.0, 1.0], 30)
            rng.shuffle(y)
            fold = np.arange(60) % 3
            scores = []
            for k in range(3):
                model = fit_logistic_elasticnet(
                    X[fold != k], y[fold != k], lam=0.1, alpha=0.5
                )
                scores.append(
                    auc_roc(model.linear_predictor(X[fold == k]), y[fold == k])
                )
            aucs.append(np.mean(scores))
        assert abs(np.mean(aucs) - 0.5) < 0.05

    def test_non_binary_rejected(self):
        X = np.zeros((4, 1))
        with pytest.raises(UsageError, match="binary"):
            fit_logistic_elasticnet(X, [0, 1, 2, 1])

    def test_single_class_rejected(self):
        X = np.zeros((4, 1))
        with pytest.raises(DegenerateInputError, match="single class"):
            fit_logistic_elasticnet(X, [1, 1, 1, 1])

    def test_nan_rejected(self):
        X = np.zeros((4, 1))
        X[2, 0] = np.nan
        with pytest.raises(UsageError, match="NaN"):
            fit_logistic_elasticnet(X, [0, 1, 0, 1])

    def test_separable_unpenalized_raises_convergence_error(self):
        X = np.linspace(-1, 1, 20)[:, None]
        y = (X[:, 0] > 0).astype(float)
        with pytest.raises(ConvergenceError):
            fit_logistic_elasticnet(X, y, lam=0.0, max_passes=500)


class TestCoxFit:
    def test_recovers_log_hazard_ratio_two(self):
        X, times, events = _survival_data(n=500, seed=1, beta=np.log(2), censor=0.0)
        model = fit_coxnet(X, times, events, lam=0.0)
        fitted = model.coefficient_vector()[0]
        grid = np.arange(0.0, 1.4001, 0.005)
        # independent check: dense scan of the exact partial likelihood
        mask = times[None, :] >= times[:, None]
        nlls = []
        for b in grid:
            theta = np.exp(b * X[:, 0])
            denom = mask @ theta
            nlls.append(-np.sum(events * (b * X[:, 0] - np.log(denom))))
        oracle = grid[int(np.argmin(nlls))]
        assert fitted == pytest.approx(np.log(2), abs=0.15)
        assert fitted == pytest.approx(oracle, abs=0.01)

    def test_full_shrinkage(self):
        X, times, events = _survival_data(seed=3)
        model = fit_coxnet(X, times, events, lam=1e6)
        assert (model.coefficient_vector() == 0).all()

    def test_ridge_splits_duplicated_covariate_evenly(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(150, 1))
        X = np.column_stack([x, x])
        times = rng.exponential(1.0 / np.exp(0.8 * x[:, 0]))
        events = np.ones(150, dtype=int)
        model = fit_coxnet(X, times, events, lam=0.5, alpha=0.0)
        c = model.coefficient_vector()
        assert abs(c[0] - c[1]) < 1e-6
        assert c[0] != 0.0

    def test_zero_events_rejected(self):
        X = np.zeros((5, 1))
        with pytest.raises(DegenerateInputError, match="event"):
            fit_coxnet(X, [1, 2, 3, 4, 5], [0, 0, 0, 0, 0])

    def test_breslow_nll_matches_bruteforce_with_ties(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(40, 3))
        times = rng.integers(1, 6, 40).astype(float)  # heavy ties
        events = (rng.random(40) < 0.7).astype(int)
        events[0] = 1
        beta = rng.normal(size=3)
        assert cox_nll(X, times, events, beta) == pytest.approx(
            cox_breslow_nll(X, times, events, beta), abs=1e-12
        )


class TestGradients:
    def test_logistic_gradient_matches_central_differences(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(50, 5))
        y = (rng.random(50) < 0.4).astype(float)
        beta = rng.normal(size=5) * 0.5
        b0 = 0.3
        grad, gb = logistic_nll_grad(X, y, beta, b0)
        eps = 1e-6
        for j in range(5):
            e = np.zeros(5)
            e[j] = eps
            fd = (logistic_nll(X, y, beta + e, b0) - logistic_nll(X, y, beta - e, b0)) / (
                2 * eps
            )
            assert grad[j] == pytest.approx(fd, rel=1e-5, abs=1e-9)
        fd_b = (logistic_nll(X, y, beta, b0 + eps) - logistic_nll(X, y, beta, b0 - eps)) / (
            2 * eps
        )
        assert gb == pytest.approx(fd_b, rel=1e-5, abs=1e-9)

    def test_cox_gradient_matches_central_differences(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(50, 5))
        times = rng.exponential(1.0, 50) + rng.integers(0, 2, 50)  # some ties
        events = (rng.random(50) < 0.7).astype(int)
        events[0] = 1
        beta = rng.normal(size=5) * 0.5
        grad = cox_nll_grad(X, times, events, beta)
        eps = 1e-6
        for j in range(5):
            e = np.zeros(5)
            e[j] = eps
            fd = (cox_nll(X, times, events, beta + e) - cox_nll(X, times, events, beta - e)) / (
                2 * eps
            )
            assert grad[j] == pytest.approx(fd, rel=1e-5, abs=1e-9)


class TestObjectiveTrace:
    def test_logistic_trace_non_increasing(self):
        for seed, lam, alpha in [(0, 0.0, 0.5), (1, 0.05, 1.0), (2, 0.3, 0.0)]:
            X, y = _logistic_data(seed=seed)
            model = fit_logistic_elasticnet(X, y, lam=lam, alpha=alpha)
            trace = np.array(model.objective_trace)
            assert len(trace) >= 2
            assert (np.diff(trace) <= 1e-12).all()

    def test_cox_trace_non_increasing(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(120, 4))
        times = rng.exponential(1.0 / np.exp(0.5 * X[:, 0]))
        events = (rng.random(120) < 0.8).astype(int)
        for lam, alpha in [(0.0, 0.5), (0.1, 0.5), (0.05, 1.0)]:
            model = fit_coxnet(X, times, events, lam=lam, alpha=alpha)
            trace = np.array(model.objective_trace)
            assert (np.diff(trace) <= 1e-12).all()


class TestPath:
    def test_grid_shape_and_ratio(self):
        X, y = _logistic_data(seed=4)
        grid = lambda_grid(X, y=y, kind="logistic", alpha=0.5)
        assert len(grid) == 50
        assert (np.diff(grid) < 0).all()
        assert grid[-1] == pytest.approx(1e-3 * grid[0])

    def test_l1_norm_monotone_along_path(self):
        for seed in range(5):
            X, y = _logistic_data(n=80, p=6, seed=seed)
            path = fit_path(X, y=y, kind="logistic", alpha=0.5, n_lambdas=30)
            l1 = np.abs(path.coefs).sum(axis=1)
            assert (np.diff(l1) >= -1e-9).all()

    def test_path_point_matches_cold_fit(self):
        X, y = _logistic_data(seed=6)
        path = fit_path(X, y=y, kind="logistic", alpha=0.5)
        mid = len(path.lambdas) // 2
        lam = float(path.lambdas[mid])
        cold = fit_logistic_elasticnet(X, y, lam=lam, alpha=0.5)
        np.testing.assert_allclose(
            path.coefs[mid], cold.coefficient_vector(), atol=1e-5
        )
        assert path.intercepts[mid] == pytest.approx(cold.intercept, abs=1e-5)

    def test_max_nnz_truncates(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(60, 30))
        y = (rng.random(60) < 0.5).astype(float)
        y[:5] = 1.0
        y[-5:] = 0.0
        path = fit_path(X, y=y, kind="logistic", alpha=0.5, max_nnz=5)
        assert (path.nnz <= 5).all()
        full = fit_path(X, y=y, kind="logistic", alpha=0.5)
        assert len(path.lambdas) < len(full.lambdas)

    def test_deterministic(self):
        X, y = _logistic_data(seed=8)
        a = fit_path(X, y=y, kind="logistic")
        b = fit_path(X, y=y, kind="logistic")
        assert np.array_equal(a.coefs, b.coefs)
        assert np.array_equal(a.lambdas, b.lambdas)

    def test_cox_path_runs_and_is_monotone(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(100, 8))
        times = rng.exponential(1.0 / np.exp(0.6 * X[:, 1]))
        events = (rng.random(100) < 0.8).astype(int)
        path = fit_path(X, times=times, events=events, kind="cox", n_lambdas=30)
        l1 = np.abs(path.coefs).sum(axis=1)
        assert (np.diff(l1) >= -1e-9).all()
        eta = path.linear_predictors(X)
        assert eta.shape == (len(path.lambdas), 100)


class TestRiskScore:
    def test_direct_substitution(self):
        model = _identity_model([1.0, 2.0])
        assert compute_rrs(model, [3.0, 4.0], "p1") == RiskScore("p1", 11.0)

    def test_zero_coefficients(self):
        model = _identity_model([0.0, 0.0])
        assert compute_rrs(model, [5.0, -7.0]).value == 0.0

    def test_linear_in_features(self):
        model = _identity_model([1.5, -2.0, 0.3])
        x = np.array([1.0, 2.0, 3.0])
        assert compute_rrs(model, 2 * x).value == pytest.approx(
            2 * compute_rrs(model, x).value
        )

    def test_mapping_input_and_missing_feature(self):
        model = _identity_model([1.0, 2.0])
        assert compute_rrs(model, {"x1": 4.0, "x0": 3.0}).value == 11.0
        with pytest.raises(UsageError, match="x1"):
            compute_rrs(model, {"x0": 3.0})

    def test_no_intercept_in_rrs(self):
        model = _identity_model([1.0], intercept=5.0)
        assert compute_rrs(model, [2.0]).value == 2.0

    def test_raw_unit_scores_rank_like_standardized(self):
        X, y = _logistic_data(seed=10)
        model = fit_logistic_elasticnet(X, y, lam=0.02)
        raw = risk_scores(model, X)
        mu = np.array([model.standardization[f][0] for f in model.features])
        sc = np.array([model.standardization[f][1] for f in model.features])
        std_eta = ((X - mu) / sc) @ (model.coefficient_vector() * sc)
        # raw and standardized scores differ by a constant shift only
        assert np.ptp((std_eta - raw)) < 1e-9
        assert auc_roc(raw, y) == auc_roc(std_eta, y)


class TestLateFusion:
    def _clinical(self, n, rng, ids=None):
        return pd.DataFrame(
            {
                "patient_id": ids if ids is not None else [f"p{i}" for i in range(n)],
                "age": rng.normal(60, 10, n),
                "sex": np.where(rng.random(n) < 0.4, "female", "male"),
            }
        )

    def test_constant_clinical_matches_rrs_alone(self):
        rng = np.random.default_rng(0)
        n = 200
        rrs = rng.normal(size=n)
        y = (rng.random(n) < 1 / (1 + np.exp(-2 * rrs))).astype(float)
        clinical = self._clinical(n, rng)
        clinical["age"] = 60.0
        clinical["sex"] = "male"
        fused = late_fuse(rrs, clinical, y)
        fused_auc = auc_roc(fused.linear_predictor(fusion_matrix(rrs, clinical)), y)
        assert fused_auc == pytest.approx(auc_roc(rrs, y), abs=1e-12)

    def test_constant_rrs_matches_clinical_alone(self):
        rng = np.random.default_rng(1)
        n = 200
        clinical = self._clinical(n, rng)
        age = clinical["age"].to_numpy()
        y = (rng.random(n) < 1 / (1 + np.exp(-(age - 60) / 10))).astype(float)
        fused = late_fuse(np.zeros(n), clinical, y)
        X_clin = fusion_matrix(np.zeros(n), clinical)[:, 1:]
        alone = fit_logistic_elasticnet(X_clin, y, feature_names=("age", "sex"))
        np.testing.assert_allclose(
            fused.predict_proba(fusion_matrix(np.zeros(n), clinical)),
            alone.predict_proba(X_clin),
            atol=1e-6,
        )

    def test_leakage_guards(self):
        rng = np.random.default_rng(2)
        clinical = self._clinical(10, rng)
        y = np.arange(10) % 2
        with pytest.raises(LeakageError, match="test provenance"):
            late_fuse(
                np.zeros(10), clinical, y,
                rrs_training_ids=["p1"], test_ids=["p1", "q9"],
            )
        with pytest.raises(LeakageError, match="test provenance"):
            late_fuse(np.zeros(10), clinical, y, test_ids=["p3"])

    def test_risk_score_objects_align_by_patient(self):
        rng = np.random.default_rng(3)
        clinical = self._clinical(6, rng)
        y = np.array([0, 1, 0, 1, 0, 1])
        scores = [RiskScore(f"p{i}", float(i)) for i in reversed(range(6))]
        model = late_fuse(scores, clinical, y, lam=0.5)
        assert model.features == ("RRS", "age", "sex")
        with pytest.raises(UsageError, match="no risk score"):
            late_fuse(scores[:3], clinical, y)

    def test_fusion_beats_single_sources_with_two_signals(self):
        fused_aucs, img_aucs, demo_aucs = [], [], []
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            n = 240
            img = rng.normal(size=(n, 4))
            clinical = self._clinical(n, rng)
            age = clinical["age"].to_numpy()
            eta = 1.3 * img[:, 0] + 0.06 * (age - 60) - 0.2
            y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
            train, test = np.arange(n) < 160, np.arange(n) >= 160
            rrs_model = fit_logistic_elasticnet(img[train], y[train], lam=0.02)
            rrs = risk_scores(rrs_model, img)
            fused = late_fuse(
                rrs[train], clinical[train], y[train],
                rrs_training_ids=clinical["patient_id"][train],
                test_ids=clinical["patient_id"][test],
            )
            eta_test = fused.linear_predictor(
                fusion_matrix(rrs[test], clinical[test])
            )
            demo = fit_logistic_elasticnet(
                fusion_matrix(np.zeros(int(train.sum())), clinical[train])[:, 1:],
                y[train],
            )
            demo_eta = demo.linear_predictor(
                fusion_matrix(np.zeros(int(test.sum())), clinical[test])[:, 1:]
            )
            fused_aucs.append(auc_roc(eta_test, y[test]))
            img_aucs.append(auc_roc(rrs[test], y[test]))
            demo_aucs.append(auc_roc(demo_eta, y[test]))
        assert np.mean(fused_aucs) >= max(np.mean(img_aucs), np.mean(demo_aucs)) - 0.02

    def test_unknown_mgmt_rejected_for_fusion(self):
        rng = np.random.default_rng(4)
        clinical = self._clinical(6, rng)
        clinical["mgmt"] = ["methylated", "unknown"] * 3
        with pytest.raises(UsageError, match="mgmt"):
            late_fuse(np.zeros(6), clinical, [0, 1, 0, 1, 0, 1], include_mgmt=True)


class TestAuc:
    def test_listed_example(self):
        assert auc_roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)

    def test_perfect_and_tied(self):
        assert auc_roc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
        assert auc_roc([2.0, 2.0, 2.0, 2.0], [0, 1, 0, 1]) == 0.5

    def test_matches_bruteforce_on_random_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(4, 25))
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = rng.integers(0, 5, n).astype(float)  # deliberate ties
            assert auc_roc(scores, labels) == pytest.approx(
                auc_bruteforce(scores, labels), abs=1e-12
            )

    def test_invariant_under_increasing_transform(self):
        rng = np.random.default_rng(12)
        scores = rng.normal(size=30)
        labels = rng.integers(0, 2, 30)
        labels[0], labels[1] = 0, 1
        assert auc_roc(scores, labels) == auc_roc(np.exp(scores), labels)

    def test_single_class_rejected(self):
        with pytest.raises(DegenerateInputError):
            auc_roc([1.0, 2.0], [1, 1])


class TestCindex:
    def test_listed_examples(self):
        assert harrell_cindex([3, 2, 1], [2, 4, 6], [1, 1, 1]) == 1.0
        assert harrell_cindex([1, 2, 3], [2, 4, 6], [1, 1, 1]) == 0.0

    def test_matches_bruteforce_with_censoring(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            n = int(rng.integers(2, 21))
            times = rng.integers(1, 8, n).astype(float)
            events = (rng.random(n) < 0.6).astype(int)
            risks = rng.integers(0, 5, n).astype(float)
            assert harrell_cindex(risks, times, events) == pytest.approx(
                cindex_bruteforce(times, events, risks), abs=1e-12
            )

    def test_random_risks_score_half(self):
        rng = np.random.default_rng(14)
        times = rng.exponential(1.0, 1000)
        risks = rng.normal(size=1000)
        c = harrell_cindex(risks, times, np.ones(1000, dtype=int))
        assert c == pytest.approx(0.5, abs=0.03)

    def test_no_admissible_pairs_is_neutral(self):
        assert harrell_cindex([1.0, 2.0], [5.0, 7.0], [0, 0]) == 0.5
        assert harrell_cindex([1.0, 2.0], [3.0, 3.0], [1, 1]) == 0.5

    def test_invariant_under_increasing_transform(self):
        rng = np.random.default_rng(15)
        times = rng.exponential(1.0, 50)
        events = (rng.random(50) < 0.7).astype(int)
        risks = rng.normal(size=50)
        assert harrell_cindex(risks, times, events) == harrell_cindex(
            np.tanh(risks), times, events
        )
