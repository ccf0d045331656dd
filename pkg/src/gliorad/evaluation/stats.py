"""Resampling statistics and survival tests for the evaluation protocol.

Everything here is deterministic under an explicit seed and validates its
inputs; degenerate inputs raise instead of returning silently wrong numbers.
"""

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import chi2 as chi2_dist
from scipy.stats import mannwhitneyu, norm

from ..errors import ConvergenceError, DegenerateInputError, UsageError
from ..modeling import auc_roc

__all__ = [
    "BootstrapCI",
    "KaplanMeierCurve",
    "LogrankResult",
    "YoudenResult",
    "EffectEstimate",
    "bootstrap_ci",
    "permutation_test_mean_metric",
    "kaplan_meier",
    "logrank_test",
    "kaplan_meier_logrank",
    "youden_threshold",
    "cohort_balance_tests",
    "effect_ratios",
    "prediction_correlation",
]


def _as_float_vector(x, name: str) -> np.ndarray:
    out = np.asarray(x, dtype=np.float64).ravel()
    if out.size == 0:
        raise UsageError(f"{name} must be non-empty")
    if not np.all(np.isfinite(out)):
        raise UsageError(f"{name} must be finite")
    return out


def _as_binary(labels, name: str = "labels") -> np.ndarray:
    out = np.asarray(labels, dtype=np.float64).ravel()
    if not np.isin(out, (0.0, 1.0)).all():
        raise UsageError(f"{name} must be binary (0/1)")
    return out


# ---------------------------------------------------------------------------
# Bootstrap

@dataclass(frozen=True)
class BootstrapCI:
    """Point estimate with a percentile confidence interval."""

    estimate: float
    low: float
    high: float
    level: float
    n_resamples: int


def bootstrap_ci(
    samples: Optional[Sequence[float]] = None,
    *,
    scores: Optional[Sequence[float]] = None,
    labels: Optional[Sequence[float]] = None,
    metric: Optional[Callable[[np.ndarray, np.ndarray], float]] = None,
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> BootstrapCI:
    """Percentile bootstrap CI for a metric.

    Two modes: ``samples`` resamples precomputed per-split metric values and
    brackets their mean; ``scores`` + ``labels`` resamples rows and
    recomputes ``metric`` (AUC by default). Row resampling is stratified by
    label so every resample keeps both classes and the metric stays defined.
    """
    if (samples is None) == (scores is None):
        raise UsageError("pass either samples or scores+labels, not both")
    if not 0.0 < level < 1.0:
        raise UsageError(f"level must be in (0, 1), got {level}")
    if n_resamples < 1:
        raise UsageError(f"n_resamples must be >= 1, got {n_resamples}")
    rng = np.random.default_rng(seed)

    if samples is not None:
        values = _as_float_vector(samples, "samples")
        estimate = float(values.mean())
        draws = rng.integers(0, values.size, size=(n_resamples, values.size))
        boot = values[draws].mean(axis=1)
    else:
        if labels is None:
            raise UsageError("scores require labels")
        sc = _as_float_vector(scores, "scores")
        lab = _as_binary(labels)
        if sc.size != lab.size:
            raise UsageError("scores and labels must have equal length")
        if lab.min() == lab.max():
            raise DegenerateInputError("labels contain a single class")
        metric_fn = metric if metric is not None else auc_roc
        estimate = float(metric_fn(sc, lab))
        pos = np.flatnonzero(lab == 1.0)
        neg = np.flatnonzero(lab == 0.0)
        boot = np.empty(n_resamples)
        for b in range(n_resamples):
            take = np.concatenate([
                pos[rng.integers(0, pos.size, size=pos.size)],
                neg[rng.integers(0, neg.size, size=neg.size)],
            ])
            boot[b] = metric_fn(sc[take], lab[take])

    alpha = 1.0 - level
    low, high = np.quantile(boot, [alpha / 2.0, 1.0 - alpha / 2.0])
    return BootstrapCI(estimate, float(low), float(high), level, n_resamples)


# ---------------------------------------------------------------------------
# Permutation test

def permutation_test_mean_metric(
    samples_a: Sequence[float],
    samples_b: Sequence[float],
    *,
    paired: bool,
    n_permutations: int = 10000,
    seed: int = 0,
) -> float:
    """Two-sided permutation p-value for a difference in mean metric.

    Paired mode sign-flips the per-index differences; unpaired mode shuffles
    the pooled group labels. p = (1 + #{|permuted| >= |observed|}) /
    (n_permutations + 1), so identical inputs give exactly 1.0 and the
    smallest attainable p is 1 / (n_permutations + 1).
    """
    a = _as_float_vector(samples_a, "samples_a")
    b = _as_float_vector(samples_b, "samples_b")
    if n_permutations < 1:
        raise UsageError(f"n_permutations must be >= 1, got {n_permutations}")
    rng = np.random.default_rng(seed)

    if paired:
        if a.size != b.size:
            raise UsageError("paired samples must have equal length")
        diff = a - b
        observed = abs(float(diff.mean()))
        signs = np.where(rng.random((n_permutations, diff.size)) < 0.5, 1.0, -1.0)
        permuted = np.abs((signs * diff).mean(axis=1))
    else:
        pool = np.concatenate([a, b])
        observed = abs(float(a.mean() - b.mean()))
        permuted = np.empty(n_permutations)
        for p in range(n_permutations):
            mixed = pool[rng.permutation(pool.size)]
            permuted[p] = abs(mixed[: a.size].mean() - mixed[a.size :].mean())
    return float((1 + int((permuted >= observed).sum())) / (n_permutations + 1))


# ---------------------------------------------------------------------------
# Survival

@dataclass(frozen=True)
class KaplanMeierCurve:
    """Product-limit estimate: S(t) after each distinct event time."""

    times: Tuple[float, ...]
    survival: Tuple[float, ...]
    at_risk: Tuple[int, ...]
    n_events: Tuple[int, ...]


@dataclass(frozen=True)
class LogrankResult:
    curves: Mapping[str, KaplanMeierCurve]
    chi2: float
    p_value: float


def _check_survival(times, events, name: str) -> Tuple[np.ndarray, np.ndarray]:
    t = _as_float_vector(times, f"{name} times")
    e = np.asarray(events).ravel()
    if t.size != e.size:
        raise UsageError(f"{name} times and events must have equal length")
    if t.min() < 0:
        raise UsageError(f"{name} times must be non-negative")
    return t, e.astype(bool)


def kaplan_meier(times, events) -> KaplanMeierCurve:
    """Kaplan-Meier product-limit estimator."""
    t, e = _check_survival(times, events, "group")
    order = np.argsort(t, kind="stable")
    t, e = t[order], e[order]
    event_times = np.unique(t[e])
    survival, at_risk, n_events = [], [], []
    s = 1.0
    for et in event_times:
        n_i = int((t >= et).sum())
        d_i = int(((t == et) & e).sum())
        s *= 1.0 - d_i / n_i
        survival.append(s)
        at_risk.append(n_i)
        n_events.append(d_i)
    return KaplanMeierCurve(
        tuple(float(x) for x in event_times),
        tuple(survival), tuple(at_risk), tuple(n_events),
    )


def logrank_test(times_a, events_a, times_b, events_b) -> Tuple[float, float]:
    """Two-group log-rank test; returns (chi-square, p) with 1 df."""
    ta, ea = _check_survival(times_a, events_a, "group A")
    tb, eb = _check_survival(times_b, events_b, "group B")
    event_times = np.unique(np.concatenate([ta[ea], tb[eb]]))
    observed_minus_expected = 0.0
    variance = 0.0
    for et in event_times:
        n1 = int((ta >= et).sum())
        n2 = int((tb >= et).sum())
        d1 = int(((ta == et) & ea).sum())
        d2 = int(((tb == et) & eb).sum())
        n, d = n1 + n2, d1 + d2
        if n < 2:
            continue
        observed_minus_expected += d1 - d * n1 / n
        variance += d * (n1 / n) * (n2 / n) * (n - d) / (n - 1)
    if variance <= 0.0:
        return 0.0, 1.0  # no admissible events: nothing to compare
    chi2 = observed_minus_expected ** 2 / variance
    return float(chi2), float(chi2_dist.sf(chi2, 1))


def kaplan_meier_logrank(
    groups: Mapping[str, Tuple[Sequence[float], Sequence[float]]],
) -> LogrankResult:
    """KM curves per stratum plus the two-group log-rank p-value."""
    if len(groups) != 2:
        raise UsageError(f"log-rank comparison needs exactly 2 groups, got {len(groups)}")
    curves = {name: kaplan_meier(t, e) for name, (t, e) in groups.items()}
    (ta, ea), (tb, eb) = (groups[name] for name in groups)
    chi2, p = logrank_test(ta, ea, tb, eb)
    return LogrankResult(curves, chi2, p)


# ---------------------------------------------------------------------------
# Operating threshold

@dataclass(frozen=True)
class YoudenResult:
    threshold: float
    j: float
    sensitivity: float
    specificity: float


def youden_threshold(scores, labels) -> YoudenResult:
    """Threshold maximizing sensitivity + specificity - 1.

    Classification rule is score >= threshold; candidates are midpoints
    between adjacent distinct scores plus the outer edges, and exact ties in
    J resolve to the lowest threshold.
    """
    sc = _as_float_vector(scores, "scores")
    lab = _as_binary(labels)
    if sc.size != lab.size:
        raise UsageError("scores and labels must have equal length")
    if lab.min() == lab.max():
        raise DegenerateInputError("labels contain a single class")
    distinct = np.unique(sc)
    candidates = np.concatenate([
        [distinct[0] - 1.0],
        (distinct[:-1] + distinct[1:]) / 2.0,
        [distinct[-1] + 1.0],
    ])
    pos, neg = sc[lab == 1.0], sc[lab == 0.0]
    best = None
    for thr in candidates:
        tpr = float((pos >= thr).mean())
        fpr = float((neg >= thr).mean())
        j = tpr - fpr
        if best is None or j > best[0] + 1e-12:
            best = (j, thr, tpr, 1.0 - fpr)
    j, thr, sens, spec = best
    return YoudenResult(float(thr), float(j), sens, spec)


# ---------------------------------------------------------------------------
# Cohort balance

def _two_proportion_z(x1: int, n1: int, x2: int, n2: int) -> float:
    if min(n1, n2) < 1:
        raise DegenerateInputError("proportion test needs rows on both sides")
    p1, p2 = x1 / n1, x2 / n2
    pooled = (x1 + x2) / (n1 + n2)
    se = np.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    if se == 0.0:
        return 1.0  # pooled proportion 0 or 1 forces p1 == p2
    z = (p1 - p2) / se
    return float(2.0 * norm.sf(abs(z)))


def _chi2_association(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson chi-squared (no continuity correction) on a 2x2 table."""
    table = np.array([
        [int(((a == 1) & (b == 1)).sum()), int(((a == 1) & (b == 0)).sum())],
        [int(((a == 0) & (b == 1)).sum()), int(((a == 0) & (b == 0)).sum())],
    ], dtype=np.float64)
    if (table.sum(axis=0) == 0).any() or (table.sum(axis=1) == 0).any():
        raise DegenerateInputError("chi-squared table has an empty margin")
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / table.sum()
    chi2 = float(((table - expected) ** 2 / expected).sum())
    return float(chi2_dist.sf(chi2, 1))


def cohort_balance_tests(train: pd.DataFrame, ext: pd.DataFrame) -> Mapping[str, float]:
    """Per-variable balance p-values between the two cohorts.

    Age uses a two-sided Mann-Whitney U; binary shares (female, methylated,
    dead within 6 months) use a two-proportion z-test on rows where the
    variable is known; overall survival uses the log-rank test. The
    mgmt_vs_outcome entry is an association chi-squared on the pooled rows,
    not a balance test.
    """
    for name, frame in (("train", train), ("ext", ext)):
        if len(frame) == 0:
            raise UsageError(f"{name} cohort is empty")
    out = {}
    out["age"] = float(mannwhitneyu(
        train["age"], ext["age"], alternative="two-sided"
    ).pvalue)
    out["sex"] = _two_proportion_z(
        int((train["sex"] == "female").sum()), len(train),
        int((ext["sex"] == "female").sum()), len(ext),
    )
    tr_known = train[train["mgmt"] != "unknown"]
    ex_known = ext[ext["mgmt"] != "unknown"]
    out["mgmt"] = _two_proportion_z(
        int((tr_known["mgmt"] == "methylated").sum()), len(tr_known),
        int((ex_known["mgmt"] == "methylated").sum()), len(ex_known),
    )
    tr_out = train[train["survival_6m"] != "unknown"]
    ex_out = ext[ext["survival_6m"] != "unknown"]
    out["survival_6m"] = _two_proportion_z(
        int((tr_out["survival_6m"] == "<=6m").sum()), len(tr_out),
        int((ex_out["survival_6m"] == "<=6m").sum()), len(ex_out),
    )
    _, out["overall_survival"] = logrank_test(
        train["os_days"], train["event"], ext["os_days"], ext["event"],
    )
    pooled = pd.concat([train, ext], ignore_index=True)
    both = pooled[(pooled["mgmt"] != "unknown") & (pooled["survival_6m"] != "unknown")]
    out["mgmt_vs_outcome"] = _chi2_association(
        (both["mgmt"] == "methylated").to_numpy().astype(int),
        (both["survival_6m"] == "<=6m").to_numpy().astype(int),
    )
    return out


# ---------------------------------------------------------------------------
# Effect ratios

@dataclass(frozen=True)
class EffectEstimate:
    """exp(beta) with a Wald interval from the observed information."""

    name: str
    ratio: float
    low: float
    high: float
    coefficient: float
    se: float


_CATEGORY_CODES = {
    "sex": ("female", "sex"),
    "mgmt": ("methylated", "mgmt"),
}


def _effect_design(rows: pd.DataFrame, variables: Sequence[str]) -> np.ndarray:
    columns = []
    for var in variables:
        if var not in rows.columns:
            raise UsageError(f"rows are missing variable column {var!r}")
        if var in _CATEGORY_CODES:
            positive, _ = _CATEGORY_CODES[var]
            values = rows[var]
            if (values == "unknown").any():
                raise UsageError(f"{var} contains unknown values; filter rows first")
            columns.append((values == positive).to_numpy(dtype=np.float64))
        else:
            columns.append(_as_float_vector(rows[var].to_numpy(), var))
    return np.column_stack(columns)


def _logistic_information_fit(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unpenalized logistic MLE with intercept; returns (beta, covariance)."""
    n, p = X.shape
    design = np.column_stack([np.ones(n), X])
    beta = np.zeros(p + 1)
    for _ in range(100):
        eta = design @ beta
        prob = 1.0 / (1.0 + np.exp(-eta))
        w = prob * (1.0 - prob)
        info = design.T @ (design * w[:, None])
        grad = design.T @ (y - prob)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular information matrix (separation?)") from exc
        beta = beta + step
        if np.abs(step).max() < 1e-10:
            cov = np.linalg.inv(info)
            return beta, cov
    raise ConvergenceError("logistic effect model did not converge in 100 iterations")


def _cox_information_fit(
    X: np.ndarray, times: np.ndarray, events: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Unpenalized Cox MLE (Breslow ties); returns (beta, covariance)."""
    order = np.argsort(times, kind="stable")
    Xs, ts, es = X[order], times[order], events[order]
    n, p = Xs.shape
    uniq = np.unique(ts[es])
    risk_start = np.searchsorted(ts, uniq, side="left")
    beta = np.zeros(p)

    def parts(b):
        eta = Xs @ b
        shift = eta.max()
        w = np.exp(eta - shift)
        s0 = np.cumsum(w[::-1])[::-1]
        s1 = np.cumsum((w[:, None] * Xs)[::-1], axis=0)[::-1]
        s2 = np.cumsum((w[:, None, None] * (Xs[:, :, None] * Xs[:, None, :]))[::-1], axis=0)[::-1]
        grad = np.zeros(p)
        info = np.zeros((p, p))
        for et, start in zip(uniq, risk_start):
            at = (ts == et) & es
            d = int(at.sum())
            m1 = s1[start] / s0[start]
            grad += Xs[at].sum(axis=0) - d * m1
            info += d * (s2[start] / s0[start] - np.outer(m1, m1))
        return grad, info

    for _ in range(100):
        grad, info = parts(beta)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular information matrix (separation?)") from exc
        beta = beta + step
        if np.abs(step).max() < 1e-10:
            _, info = parts(beta)
            return beta, np.linalg.inv(info)
    raise ConvergenceError("Cox effect model did not converge in 100 iterations")


def effect_ratios(
    kind: str,
    rows: pd.DataFrame,
    variables: Sequence[str],
    *,
    level: float = 0.95,
) -> Tuple[EffectEstimate, ...]:
    """Multivariate odds or hazard ratios with Wald confidence intervals.

    ``kind`` "logistic" regresses the 6-month outcome (odds ratios);
    "cox" uses os_days/event (hazard ratios). Categorical sex/mgmt encode
    female=1 and methylated=1; everything else is taken per unit.
    """
    if kind not in ("logistic", "cox"):
        raise UsageError(f"kind must be 'logistic' or 'cox', got {kind!r}")
    if not variables:
        raise UsageError("variables must be non-empty")
    X = _effect_design(rows, variables)
    if kind == "logistic":
        known = rows["survival_6m"].to_numpy()
        if (known == "unknown").any():
            raise UsageError("rows contain unknown 6-month outcomes; filter first")
        y = (known == "<=6m").astype(np.float64)
        if y.min() == y.max():
            raise DegenerateInputError("outcome contains a single class")
        beta_full, cov = _logistic_information_fit(X, y)
        beta, variances = beta_full[1:], np.diag(cov)[1:]
    else:
        times = _as_float_vector(rows["os_days"].to_numpy(), "os_days")
        events = rows["event"].to_numpy().astype(bool)
        if not events.any():
            raise DegenerateInputError("no events; hazard ratios undefined")
        beta, cov = _cox_information_fit(X, times, events)
        variances = np.diag(cov)
    z = float(norm.ppf(0.5 + level / 2.0))
    out = []
    for name, b, var in zip(variables, beta, variances):
        se = float(np.sqrt(var))
        out.append(EffectEstimate(
            name, float(np.exp(b)), float(np.exp(b - z * se)),
            float(np.exp(b + z * se)), float(b), se,
        ))
    return tuple(out)


# ---------------------------------------------------------------------------
# Agreement

def prediction_correlation(preds_a, preds_b) -> float:
    """Pearson correlation between two prediction vectors."""
    a = _as_float_vector(preds_a, "preds_a")
    b = _as_float_vector(preds_b, "preds_b")
    if a.size != b.size:
        raise UsageError("prediction vectors must have equal length")
    if a.size < 2:
        raise UsageError("correlation needs at least 2 predictions")
    if a.std() == 0.0 or b.std() == 0.0:
        raise DegenerateInputError("constant predictions have no defined correlation")
    return float(np.corrcoef(a, b)[0, 1])
