"""Penalized linear prognosis models, risk scores, and ranking metrics.

Logistic and Cox models share one training objective,

    mean NLL + lam * (alpha * ||beta||_1 + (1 - alpha) / 2 * ||beta||_2^2),

minimized by cyclic coordinate descent on successive quadratic expansions
of the likelihood. The intercept is never penalized and Cox models have
none (the partial likelihood absorbs it). Features are standardized on
the training rows internally; returned coefficients are mapped back to
raw feature units and the standardization statistics are frozen into the
model, so a risk score is a plain dot product in the caller's units. The
raw-unit score differs from the standardized one only by a constant
shift, which no ranking metric can see.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from ._cd import enet_wls
from ._util import dump_json, load_json
from .errors import ConvergenceError, DegenerateInputError, LeakageError, UsageError

MAX_PASSES = 100_000
COEF_TOL = 1e-7

# working weights are floored so the quadratic expansion stays bounded when
# fitted probabilities or hazard terms saturate
_W_FLOOR_LOGISTIC = 1e-5
_W_FLOOR_COX = 1e-9


# ---------------------------------------------------------------------------
# model types


@dataclass(frozen=True)
class RiskScore:
    """One patient's radiomics risk score: the model's coefficient-weighted
    feature sum, without intercept."""

    patient_id: str
    value: float


@dataclass(frozen=True)
class PrognosticModel:
    """A fitted linear model plus everything needed to reapply it.

    ``coefficients`` are in raw feature units. ``standardization`` maps each
    feature to the (mean, scale) frozen from the training rows; it is kept
    for provenance and serialization, not consulted by the predictors.
    ``objective_trace`` holds the training objective after every accepted
    descent step (standardized units) and is diagnostic only: it is not
    serialized and does not survive a JSON round trip.
    """

    kind: str
    features: tuple[str, ...]
    coefficients: Mapping[str, float]
    intercept: Optional[float]
    alpha: float
    lam: float
    standardization: Mapping[str, tuple[float, float]]
    seed: int = 0
    fold: Optional[int] = None
    training_ids: tuple[str, ...] = ()
    n_passes: int = field(default=0, compare=False)
    objective_trace: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if self.kind not in ("logistic", "cox"):
            raise UsageError(f"unknown model kind {self.kind!r}")
        if set(self.coefficients) != set(self.features):
            raise UsageError("coefficient map does not match the feature list")
        values = list(self.coefficients.values())
        if not all(math.isfinite(v) for v in values):
            raise UsageError("coefficients must be finite")
        if self.kind == "cox":
            if self.intercept is not None:
                raise UsageError("cox models have no intercept")
        elif self.intercept is None or not math.isfinite(self.intercept):
            raise UsageError("logistic models need a finite intercept")

    def coefficient_vector(self) -> np.ndarray:
        return np.array([self.coefficients[f] for f in self.features])

    def _feature_matrix(self, X) -> np.ndarray:
        if isinstance(X, pd.DataFrame):
            missing = [f for f in self.features if f not in X.columns]
            if missing:
                raise UsageError(f"rows are missing model features {missing}")
            X = X[list(self.features)].to_numpy(dtype=np.float64)
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.features):
            raise UsageError(
                f"expected {len(self.features)} features, got {X.shape[1]}"
            )
        return X

    def linear_predictor(self, X) -> np.ndarray:
        """Raw-unit eta: X beta, plus the intercept for logistic models."""
        eta = self._feature_matrix(X) @ self.coefficient_vector()
        if self.kind == "logistic":
            eta = eta + self.intercept
        return eta

    def predict_proba(self, X) -> np.ndarray:
        if self.kind != "logistic":
            raise UsageError("probabilities are defined for logistic models only")
        return _sigmoid(self.linear_predictor(X))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "features": list(self.features),
            "coefficients": {f: float(self.coefficients[f]) for f in self.features},
            "intercept": None if self.intercept is None else float(self.intercept),
            "alpha": float(self.alpha),
            "lam": float(self.lam),
            "standardization": {
                f: [float(m), float(s)]
                for f, (m, s) in self.standardization.items()
            },
            "seed": int(self.seed),
            "fold": self.fold,
            "training_ids": list(self.training_ids),
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "PrognosticModel":
        return cls(
            kind=payload["kind"],
            features=tuple(payload["features"]),
            coefficients=dict(payload["coefficients"]),
            intercept=payload["intercept"],
            alpha=payload["alpha"],
            lam=payload["lam"],
            standardization={
                f: (m, s) for f, (m, s) in payload["standardization"].items()
            },
            seed=payload["seed"],
            fold=payload["fold"],
            training_ids=tuple(payload["training_ids"]),
        )

    def to_json(self, path: str) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def from_json(cls, path: str) -> "PrognosticModel":
        return cls.from_dict(load_json(path))


# ---------------------------------------------------------------------------
# shared numerics


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_matrix(X, feature_names) -> tuple[np.ndarray, tuple[str, ...]]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise UsageError("X must be a 2-D feature matrix")
    if not np.isfinite(X).all():
        raise UsageError("X contains NaN or infinite values")
    if feature_names is None:
        names = tuple(f"x{j}" for j in range(X.shape[1]))
    else:
        names = tuple(str(f) for f in feature_names)
        if len(names) != X.shape[1]:
            raise UsageError("feature_names length does not match X")
    return X, names


def _check_binary(y) -> np.ndarray:
    y = np.asarray(y)
    values = np.unique(y)
    if not np.isin(values, (0, 1)).all():
        raise UsageError("y must be binary (0/1)")
    if len(values) < 2:
        raise DegenerateInputError("y contains a single class")
    return y.astype(np.float64)


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    scale = np.where(sd > 0, sd, 1.0)
    return (X - mu) / scale, mu, scale


def _penalty(beta: np.ndarray, lam: float, alpha: float) -> float:
    return lam * (
        alpha * np.abs(beta).sum() + 0.5 * (1.0 - alpha) * (beta @ beta)
    )


def logistic_nll(X, y, beta, intercept: float = 0.0) -> float:
    """Mean negative Bernoulli log-likelihood at the given coefficients."""
    eta = np.asarray(X) @ np.asarray(beta) + intercept
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def logistic_nll_grad(X, y, beta, intercept: float = 0.0):
    """Analytic gradient of :func:`logistic_nll` w.r.t. (beta, intercept)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    resid = _sigmoid(X @ np.asarray(beta) + intercept) - y
    return X.T @ resid / len(y), float(resid.mean())


class _CoxStructure:
    """Sorted-order risk-set bookkeeping shared by every Cox evaluation.

    Rows are sorted by time once; risk sums become suffix sums and the
    per-subject accumulations over event times become prefix sums over the
    distinct event times, so each likelihood pass is O(n log n). Tied event
    times share one Breslow denominator.
    """

    def __init__(self, times, events):
        times = np.asarray(times, dtype=np.float64)
        events = np.asarray(events)
        if times.ndim != 1 or times.shape != events.shape:
            raise UsageError("times and events must be aligned 1-D arrays")
        if not np.isfinite(times).all():
            raise UsageError("times must be finite")
        ev = np.unique(events)
        if not np.isin(ev, (0, 1)).all():
            raise UsageError("events must be binary (0/1)")
        d = events.astype(np.float64)
        if d.sum() < 1:
            raise DegenerateInputError("at least one observed event is required")
        self.n = len(times)
        self.order = np.argsort(times, kind="stable")
        self.t = times[self.order]
        self.d = d[self.order]
        event_times = self.t[self.d > 0]
        self.uniq = np.unique(event_times)
        self.risk_start = np.searchsorted(self.t, self.uniq, side="left")
        self.d_k = np.bincount(
            np.searchsorted(self.uniq, event_times), minlength=len(self.uniq)
        ).astype(np.float64)
        # number of distinct event times at or before each row's time
        self.cum_idx = np.searchsorted(self.uniq, self.t, side="right")

    def terms(self, eta_sorted: np.ndarray):
        """Return (nll, resid, weight) for sorted-order linear predictors.

        resid is d - theta * A (the negative gradient of n*NLL w.r.t. eta)
        and weight the diagonal of the corresponding Hessian, both in sorted
        row order and not yet divided by n.
        """
        shift = eta_sorted.max()
        theta = np.exp(eta_sorted - shift)
        suffix = np.cumsum(theta[::-1])[::-1]
        s_k = suffix[self.risk_start]
        nll = -(
            float(eta_sorted @ self.d)
            - float(self.d_k @ (np.log(s_k) + shift))
        ) / self.n
        c1 = np.concatenate(([0.0], np.cumsum(self.d_k / s_k)))
        c2 = np.concatenate(([0.0], np.cumsum(self.d_k / s_k**2)))
        a = c1[self.cum_idx]
        b = c2[self.cum_idx]
        resid = self.d - theta * a
        weight = theta * a - theta**2 * b
        return nll, resid, weight


def cox_nll(X, times, events, beta) -> float:
    """Breslow negative log partial likelihood divided by n."""
    struct = _CoxStructure(times, events)
    eta = np.asarray(X, dtype=np.float64) @ np.asarray(beta)
    nll, _, _ = struct.terms(eta[struct.order])
    return nll


def cox_nll_grad(X, times, events, beta) -> np.ndarray:
    """Analytic gradient of :func:`cox_nll` w.r.t. beta."""
    X = np.asarray(X, dtype=np.float64)
    struct = _CoxStructure(times, events)
    eta = X @ np.asarray(beta)
    _, resid, _ = struct.terms(eta[struct.order])
    return -(X[struct.order].T @ resid) / struct.n


# ---------------------------------------------------------------------------
# solvers (standardized units)


def _solve_quadratic_steps(
    ZF, objective, expansion, beta, b, use_intercept, lam, alpha, tol, max_passes
):
    """Outer descent loop shared by the logistic and Cox fits.

    ``expansion(eta)`` must return (weights, working_response) for the
    current linear predictor; ``objective(eta, beta)`` the true penalized
    objective. Each quadratic subproblem is solved by the CD kernel, then
    step-halved onto the true objective so the recorded trace is
    non-increasing. Declares convergence when an accepted step moves no
    coefficient by ``tol`` or when no step improves the objective.
    """
    n = ZF.shape[0]
    lam1 = lam * alpha
    lam2 = lam * (1.0 - alpha)
    eta = b + ZF @ beta
    obj = float(objective(eta, beta))
    trace = [obj]
    used = 0
    while True:
        w, z = expansion(eta)
        wn = np.ascontiguousarray(w / n)
        beta_new = beta.copy()
        r = z - b - ZF @ beta_new
        b_new, passes, _ = enet_wls(
            ZF, wn, np.ascontiguousarray(r), beta_new, b,
            use_intercept, lam1, lam2, tol, max_passes - used,
        )
        used += passes
        d_beta = beta_new - beta
        d_b = b_new - b
        step = 1.0
        improved = False
        for _ in range(32):
            cand_beta = beta + step * d_beta
            cand_b = b + step * d_b
            cand_eta = cand_b + ZF @ cand_beta
            cand_obj = objective(cand_eta, cand_beta)
            if cand_obj <= obj + 1e-12:
                improved = True
                break
            step *= 0.5
        if not improved:
            # the subproblem direction cannot lower the true objective any
            # further at float precision; accept the current point
            return beta, b, used, trace
        maxdelta = np.max(np.abs(cand_beta - beta)) if len(beta) else 0.0
        maxdelta = max(maxdelta, abs(cand_b - b))
        beta, b, eta, obj = cand_beta, cand_b, cand_eta, cand_obj
        trace.append(obj)
        if maxdelta < tol:
            return beta, b, used, trace
        if used >= max_passes:
            raise ConvergenceError(
                f"coordinate descent used {used} passes without converging"
            )


def _solve_logistic(ZF, y, lam, alpha, beta, b, tol, max_passes):
    def objective(eta, beta_cur):
        return float(np.mean(np.logaddexp(0.0, eta) - y * eta)) + _penalty(
            beta_cur, lam, alpha
        )

    def expansion(eta):
        pr = _sigmoid(eta)
        w = np.maximum(pr * (1.0 - pr), _W_FLOOR_LOGISTIC)
        return w, eta + (y - pr) / w

    return _solve_quadratic_steps(
        ZF, objective, expansion, beta, b, True, lam, alpha, tol, max_passes
    )


def _solve_cox(ZF_sorted, struct, lam, alpha, beta, tol, max_passes):
    def objective(eta, beta_cur):
        nll, _, _ = struct.terms(eta)
        return nll + _penalty(beta_cur, lam, alpha)

    def expansion(eta):
        _, resid, weight = struct.terms(eta)
        w = np.maximum(weight, _W_FLOOR_COX)
        return w, eta + resid / w

    beta, _, used, trace = _solve_quadratic_steps(
        ZF_sorted, objective, expansion, beta, 0.0, False, lam, alpha, tol, max_passes
    )
    return beta, used, trace


# ---------------------------------------------------------------------------
# fitting


def _finish_model(
    kind, names, beta_std, b_std, mu, scale, alpha, lam, seed, fold,
    training_ids, used, trace,
) -> PrognosticModel:
    beta_raw = beta_std / scale
    if kind == "logistic":
        intercept = float(b_std - (beta_std * mu / scale).sum())
    else:
        intercept = None
    return PrognosticModel(
        kind=kind,
        features=names,
        coefficients={f: float(c) for f, c in zip(names, beta_raw)},
        intercept=intercept,
        alpha=float(alpha),
        lam=float(lam),
        standardization={
            f: (float(m), float(s)) for f, m, s in zip(names, mu, scale)
        },
        seed=int(seed),
        fold=fold,
        training_ids=tuple(str(i) for i in training_ids),
        n_passes=used,
        objective_trace=tuple(trace),
    )


def fit_logistic_elasticnet(
    X,
    y,
    *,
    alpha: float = 0.5,
    lam: float = 0.0,
    seed: int = 0,
    feature_names: Optional[Sequence[str]] = None,
    training_ids: Sequence[str] = (),
    fold: Optional[int] = None,
    tol: float = COEF_TOL,
    max_passes: int = MAX_PASSES,
) -> PrognosticModel:
    """Fit a binary elastic-net logistic model by coordinate descent.

    The seed is recorded in the model for provenance; the fit itself is
    deterministic. Raises :class:`ConvergenceError` when the pass budget
    runs out, which a separable design with lam=0 will genuinely do.
    """
    X, names = _check_matrix(X, feature_names)
    y = _check_binary(y)
    if len(y) != X.shape[0]:
        raise UsageError("X and y row counts differ")
    Z, mu, scale = _standardize(X)
    ZF = np.asfortranarray(Z)
    beta = np.zeros(X.shape[1])
    b = float(np.log(y.mean() / (1.0 - y.mean())))
    beta, b, used, trace = _solve_logistic(ZF, y, lam, alpha, beta, b, tol, max_passes)
    return _finish_model(
        "logistic", names, beta, b, mu, scale, alpha, lam, seed, fold,
        training_ids, used, trace,
    )


def fit_coxnet(
    X,
    times,
    events,
    *,
    alpha: float = 0.5,
    lam: float = 0.0,
    seed: int = 0,
    feature_names: Optional[Sequence[str]] = None,
    training_ids: Sequence[str] = (),
    fold: Optional[int] = None,
    tol: float = COEF_TOL,
    max_passes: int = MAX_PASSES,
) -> PrognosticModel:
    """Fit an elastic-net Cox model (Breslow ties) by coordinate descent."""
    X, names = _check_matrix(X, feature_names)
    struct = _CoxStructure(times, events)
    if struct.n != X.shape[0]:
        raise UsageError("X and times row counts differ")
    Z, mu, scale = _standardize(X)
    ZF = np.asfortranarray(Z[struct.order])
    beta = np.zeros(X.shape[1])
    beta, used, trace = _solve_cox(ZF, struct, lam, alpha, beta, tol, max_passes)
    return _finish_model(
        "cox", names, beta, 0.0, mu, scale, alpha, lam, seed, fold,
        training_ids, used, trace,
    )


# ---------------------------------------------------------------------------
# regularization path


@dataclass(frozen=True, eq=False)
class PathFit:
    """Warm-started solutions along a descending lambda grid.

    ``coefs`` holds raw-unit coefficients, one row per lambda, and
    ``intercepts`` the matching raw-unit intercepts (zeros for Cox).
    """

    kind: str
    alpha: float
    feature_names: tuple[str, ...]
    lambdas: np.ndarray
    coefs: np.ndarray
    intercepts: np.ndarray
    nnz: np.ndarray
    n_passes: int

    def linear_predictors(self, X) -> np.ndarray:
        """(n_lambdas, n_rows) raw-unit eta matrix for scoring."""
        X = np.asarray(X, dtype=np.float64)
        return self.coefs @ X.T + self.intercepts[:, None]


def lambda_grid(
    X, *, y=None, times=None, events=None, kind: str = "logistic",
    alpha: float = 0.5, n_lambdas: int = 50, min_ratio: float = 1e-3,
) -> np.ndarray:
    """Descending log-spaced grid from the smallest all-zero lambda.

    lambda_max is the largest absolute standardized-gradient entry of the
    null model's mean NLL, divided by alpha (floored for near-ridge fits).
    """
    X, _ = _check_matrix(X, None)
    Z, _, _ = _standardize(X)
    n = X.shape[0]
    if kind == "logistic":
        y = _check_binary(y)
        g = Z.T @ (y - y.mean()) / n
    elif kind == "cox":
        struct = _CoxStructure(times, events)
        _, resid, _ = struct.terms(np.zeros(n))
        g = Z[struct.order].T @ resid / n
    else:
        raise UsageError(f"unknown model kind {kind!r}")
    lam_max = float(np.max(np.abs(g))) / max(alpha, 1e-3)
    lam_max = max(lam_max, 1e-12)
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambdas)


def fit_path(
    X,
    *,
    y=None,
    times=None,
    events=None,
    kind: str = "logistic",
    alpha: float = 0.5,
    lambdas: Optional[np.ndarray] = None,
    n_lambdas: int = 50,
    min_ratio: float = 1e-3,
    max_nnz: Optional[int] = None,
    feature_names: Optional[Sequence[str]] = None,
    tol: float = COEF_TOL,
    max_passes: int = MAX_PASSES,
) -> PathFit:
    """Fit the whole descending-lambda path with warm starts.

    With ``max_nnz`` the path stops before the first solution whose support
    exceeds the cap, so budgeted feature selection never pays for the dense
    tail of the path.
    """
    X, names = _check_matrix(X, feature_names)
    if kind == "logistic":
        y = _check_binary(y)
        if len(y) != X.shape[0]:
            raise UsageError("X and y row counts differ")
        struct = None
    elif kind == "cox":
        struct = _CoxStructure(times, events)
        if struct.n != X.shape[0]:
            raise UsageError("X and times row counts differ")
    else:
        raise UsageError(f"unknown model kind {kind!r}")
    if lambdas is None:
        lambdas = lambda_grid(
            X, y=y, times=times, events=events, kind=kind, alpha=alpha,
            n_lambdas=n_lambdas, min_ratio=min_ratio,
        )
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if len(lambdas) > 1 and not (np.diff(lambdas) < 0).all():
        raise UsageError("lambdas must be strictly decreasing")

    Z, mu, scale = _standardize(X)
    if kind == "cox":
        ZF = np.asfortranarray(Z[struct.order])
        beta = np.zeros(X.shape[1])
        b = 0.0
    else:
        ZF = np.asfortranarray(Z)
        beta = np.zeros(X.shape[1])
        b = float(np.log(y.mean() / (1.0 - y.mean())))

    kept, coefs, intercepts, nnz = [], [], [], []
    total = 0
    for lam in lambdas:
        if kind == "logistic":
            beta, b, used, _ = _solve_logistic(
                ZF, y, lam, alpha, beta, b, tol, max_passes
            )
        else:
            beta, used, _ = _solve_cox(ZF, struct, lam, alpha, beta, tol, max_passes)
        total += used
        support = int(np.count_nonzero(beta))
        if max_nnz is not None and support > max_nnz:
            break
        kept.append(lam)
        beta_raw = beta / scale
        coefs.append(beta_raw)
        intercepts.append(
            float(b - (beta * mu / scale).sum()) if kind == "logistic" else 0.0
        )
        nnz.append(support)
    return PathFit(
        kind=kind,
        alpha=float(alpha),
        feature_names=names,
        lambdas=np.array(kept),
        coefs=np.array(coefs) if coefs else np.zeros((0, X.shape[1])),
        intercepts=np.array(intercepts),
        nnz=np.array(nnz, dtype=int),
        n_passes=total,
    )


# ---------------------------------------------------------------------------
# risk scores and late fusion


def compute_rrs(model: PrognosticModel, x, patient_id: str = "") -> RiskScore:
    """Coefficient-weighted feature sum, no intercept.

    ``x`` may be a mapping by feature name or a sequence aligned with
    ``model.features``.
    """
    if isinstance(x, Mapping):
        missing = [f for f in model.features if f not in x]
        if missing:
            raise UsageError(f"row is missing model features {missing}")
        values = np.array([float(x[f]) for f in model.features])
    else:
        values = np.asarray(x, dtype=np.float64).ravel()
        if len(values) != len(model.features):
            raise UsageError(
                f"expected {len(model.features)} feature values, got {len(values)}"
            )
    return RiskScore(patient_id, float(values @ model.coefficient_vector()))


def risk_scores(model: PrognosticModel, X) -> np.ndarray:
    """Vectorized :func:`compute_rrs` over rows; returns plain values."""
    return model._feature_matrix(X) @ model.coefficient_vector()


_FUSION_CLINICAL = ("age", "sex", "mgmt")


def _encode_clinical(clinical: pd.DataFrame, include_mgmt: bool) -> np.ndarray:
    needed = _FUSION_CLINICAL[: 2 + include_mgmt]
    missing = [c for c in needed if c not in clinical.columns]
    if missing:
        raise UsageError(f"clinical rows are missing columns {missing}")
    cols = [np.asarray(clinical["age"], dtype=np.float64)]
    sex = clinical["sex"].astype(str)
    bad = set(sex.unique()) - {"female", "male"}
    if bad:
        raise UsageError(f"unknown sex values {sorted(bad)}")
    cols.append((sex == "female").to_numpy(np.float64))
    if include_mgmt:
        mgmt = clinical["mgmt"].astype(str)
        bad = set(mgmt.unique()) - {"methylated", "unmethylated"}
        if bad:
            raise UsageError(
                f"mgmt must be known for fusion models, got {sorted(bad)}"
            )
        cols.append((mgmt == "methylated").to_numpy(np.float64))
    return np.column_stack(cols)


def fusion_matrix(
    scores, clinical: pd.DataFrame, include_mgmt: bool = False
) -> np.ndarray:
    """Design matrix [RRS, age, sex(, mgmt)] as used by late-fusion models.

    ``scores`` must already be aligned with the clinical rows; sex and mgmt
    are encoded as female=1 and methylated=1.
    """
    values = np.asarray(scores, dtype=np.float64)
    if len(values) != len(clinical):
        raise UsageError("scores and clinical row counts differ")
    return np.column_stack([values, _encode_clinical(clinical, include_mgmt)])


def late_fuse(
    scores,
    clinical: pd.DataFrame,
    outcome,
    kind: str = "logistic",
    *,
    include_mgmt: bool = False,
    alpha: float = 0.5,
    lam: float = 0.0,
    seed: int = 0,
    rrs_training_ids: Iterable[str] = (),
    test_ids: Iterable[str] = (),
    fold: Optional[int] = None,
    tol: float = COEF_TOL,
    max_passes: int = MAX_PASSES,
) -> PrognosticModel:
    """Fit a clinical+RRS model on rows the risk score never trained on.

    ``scores`` is a sequence of :class:`RiskScore` (matched to ``clinical``
    by patient_id) or an array already aligned with the rows. ``outcome``
    is the binary label array for logistic fusion or a (times, events)
    pair for Cox. The leakage guard is structural: any overlap between the
    RRS model's training rows and the declared evaluation rows, or between
    the fusion rows themselves and the evaluation rows, is a hard error.
    """
    if "patient_id" not in clinical.columns:
        raise UsageError("clinical rows are missing columns ['patient_id']")
    ids = tuple(str(i) for i in clinical["patient_id"])
    test = set(str(i) for i in test_ids)
    trained = set(str(i) for i in rrs_training_ids)
    overlap = trained & test
    if overlap:
        raise LeakageError(
            "risk score weights were fitted on rows with test provenance: "
            f"{sorted(overlap)[:5]}"
        )
    overlap = set(ids) & test
    if overlap:
        raise LeakageError(
            f"fusion training rows carry test provenance: {sorted(overlap)[:5]}"
        )
    if isinstance(scores, np.ndarray) or (
        len(scores) and not isinstance(next(iter(scores)), RiskScore)
    ):
        values = np.asarray(scores, dtype=np.float64)
        if len(values) != len(ids):
            raise UsageError("scores and clinical row counts differ")
    else:
        by_id = {s.patient_id: s.value for s in scores}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise UsageError(f"no risk score for patients {missing[:5]}")
        values = np.array([by_id[i] for i in ids])

    X = fusion_matrix(values, clinical, include_mgmt)
    names = ("RRS",) + _FUSION_CLINICAL[: 2 + include_mgmt]
    common = dict(
        alpha=alpha, lam=lam, seed=seed, feature_names=names,
        training_ids=ids, fold=fold, tol=tol, max_passes=max_passes,
    )
    if kind == "logistic":
        return fit_logistic_elasticnet(X, outcome, **common)
    if kind == "cox":
        times, events = outcome
        return fit_coxnet(X, times, events, **common)
    raise UsageError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# ranking metrics


def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    values = np.unique(labels)
    if not np.isin(values, (0, 1)).all():
        raise UsageError("labels must be binary (0/1)")
    if len(values) < 2:
        raise DegenerateInputError("both classes are required for AUC")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def harrell_cindex(risks, times, events) -> float:
    """Harrell concordance over admissible pairs.

    A pair is admissible when the earlier subject's event was observed and
    its time is strictly smaller; risk ties count one half. With no
    admissible pair the index is the neutral 0.5.
    """
    risks = np.asarray(risks, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events).astype(bool)
    if not (len(risks) == len(times) == len(events)):
        raise UsageError("risks, times, and events must be aligned")
    admissible = events[:, None] & (times[:, None] < times[None, :])
    den = float(admissible.sum())
    if den == 0:
        return 0.5
    diff = risks[:, None] - risks[None, :]
    num = float((admissible & (diff > 0)).sum()) + 0.5 * float(
        (admissible & (diff == 0)).sum()
    )
    return num / den
