"""Repeated-CV feature selection with a budget on the active-set size.

Each repetition reshuffles the k-fold assignment, scores the descending
elastic-net path by cross-validation, and picks the strongest penalty
whose full-train support fits the feature budget f with the best mean CV
score. Selection frequencies are counted across the n repetition winners
and thresholded at p_sel (inclusive).

The budget is a post-hoc constraint on one shared path, so the n x |f|
grid collapses to n path runs per repetition plus cheap per-f reductions;
the reduced results are identical to independent (f, seed) runs and are
combined in (f, repetition) order. With SMOTE enabled the minority class
is oversampled inside every training fit, including the full-train refit,
each with its own derived seed.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from ._util import derive_seed, dump_json, load_json, rng_for
from .errors import LeakageError, UsageError
from .modeling import (
    PathFit,
    auc_roc,
    fit_coxnet,
    fit_logistic_elasticnet,
    fit_path,
    harrell_cindex,
)
from .tabular import smote_oversample

_NEUTRAL_SCORE = 0.5


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs of the repeated-CV selection procedure."""

    n: int = 10
    k: int = 4
    p_sel: float = 0.5
    f_grid: tuple[int, ...] = (5, 10, 20, 30, 40, 50)
    seed: int = 0
    smote: bool = False
    alpha: float = 0.5
    n_lambdas: int = 50

    def __post_init__(self) -> None:
        if self.n < 1:
            raise UsageError("n repetitions must be >= 1")
        if self.k < 2:
            raise UsageError("k folds must be >= 2")
        if not (0.0 < self.p_sel <= 1.0):
            raise UsageError("p_sel must lie in (0, 1]")
        if not self.f_grid or any(f < 1 for f in self.f_grid):
            raise UsageError("f_grid must hold positive budgets")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "p_sel": self.p_sel,
            "f_grid": list(self.f_grid),
            "seed": self.seed,
            "smote": self.smote,
            "alpha": self.alpha,
            "n_lambdas": self.n_lambdas,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "SelectionConfig":
        return cls(
            n=payload["n"],
            k=payload["k"],
            p_sel=payload["p_sel"],
            f_grid=tuple(payload["f_grid"]),
            seed=payload["seed"],
            smote=payload["smote"],
            alpha=payload["alpha"],
            n_lambdas=payload["n_lambdas"],
        )


@dataclass(frozen=True)
class SelectionResult:
    """Winners of one feature budget, reduced over the n repetitions.

    ``frequencies`` stores only features that won at least once; every
    value is a multiple of 1/n. ``empty`` flags the degenerate but valid
    outcome that every repetition's winner had no features at all.
    """

    f: int
    frequencies: Mapping[str, float]
    selected: tuple[str, ...]
    empty: bool
    cv_scores: tuple[float, ...]
    config: SelectionConfig

    def frequency(self, feature: str) -> float:
        return self.frequencies.get(feature, 0.0)

    def mean_score(self) -> float:
        return float(np.mean(self.cv_scores))

    def to_dict(self) -> dict:
        return {
            "f": self.f,
            "frequencies": {k: float(v) for k, v in self.frequencies.items()},
            "selected": list(self.selected),
            "empty": self.empty,
            "cv_scores": [float(s) for s in self.cv_scores],
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "SelectionResult":
        return cls(
            f=payload["f"],
            frequencies=dict(payload["frequencies"]),
            selected=tuple(payload["selected"]),
            empty=payload["empty"],
            cv_scores=tuple(payload["cv_scores"]),
            config=SelectionConfig.from_dict(payload["config"]),
        )

    def to_json(self, path: str) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def from_json(cls, path: str) -> "SelectionResult":
        return cls.from_dict(load_json(path))


@dataclass(frozen=True)
class BudgetSelection:
    """Per-budget selection results plus the winning budget.

    The per-repetition ``cv_scores`` inside each SelectionResult measure the
    best model attainable under the budget and are non-decreasing in f by
    construction (a larger budget only widens the choice). The budget itself
    is therefore judged by ``refit_scores``: repeated k-fold CV of a model
    refit on the thresholded feature set, which does degrade when a loose
    budget lets unstable features through.
    """

    best_f: int
    results: Mapping[int, SelectionResult]
    refit_scores: Mapping[int, tuple[float, ...]]

    @property
    def best(self) -> SelectionResult:
        return self.results[self.best_f]

    def mean_scores(self) -> dict[int, float]:
        return {f: r.mean_score() for f, r in self.results.items()}

    def mean_refit_scores(self) -> dict[int, float]:
        return {f: float(np.mean(s)) for f, s in self.refit_scores.items()}

    def to_dict(self) -> dict:
        return {
            "best_f": self.best_f,
            "results": {str(f): r.to_dict() for f, r in self.results.items()},
            "refit_scores": {
                str(f): [float(v) for v in s] for f, s in self.refit_scores.items()
            },
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "BudgetSelection":
        return cls(
            best_f=payload["best_f"],
            results={
                int(f): SelectionResult.from_dict(r)
                for f, r in payload["results"].items()
            },
            refit_scores={
                int(f): tuple(s) for f, s in payload["refit_scores"].items()
            },
        )


# ---------------------------------------------------------------------------
# inner machinery


def _guard_provenance(row_ids, test_ids) -> None:
    test = set(str(i) for i in test_ids)
    if not test:
        return
    if row_ids is None:
        raise UsageError("row_ids are required when test provenance is declared")
    leaked = set(str(i) for i in row_ids) & test
    if leaked:
        raise LeakageError(
            f"selection rows carry test provenance: {sorted(leaked)[:5]}"
        )


def _check_outcome(X, y, times, events, kind, smote):
    X = np.asarray(X, dtype=np.float64)
    if kind == "logistic":
        if y is None:
            raise UsageError("logistic selection needs y")
        y = np.asarray(y, dtype=np.float64)
        if len(y) != len(X):
            raise UsageError("X and y row counts differ")
    elif kind == "cox":
        if times is None or events is None:
            raise UsageError("cox selection needs times and events")
        if smote:
            raise UsageError("SMOTE applies to binary outcomes only")
    else:
        raise UsageError(f"unknown model kind {kind!r}")
    return X, y


def _stratified_folds(y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    folds = np.empty(len(y), dtype=int)
    for cls in (0.0, 1.0):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        folds[idx] = np.arange(len(idx)) % k
    return folds


def _shuffled_folds(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    folds = np.empty(n, dtype=int)
    folds[rng.permutation(n)] = np.arange(n) % k
    return folds


def _fold_score(eta: np.ndarray, y, times, events, held, kind) -> float:
    if kind == "logistic":
        y_held = y[held]
        if y_held.min() == y_held.max():
            return _NEUTRAL_SCORE  # degenerate fold; AUC undefined
        return auc_roc(eta, y_held)
    return harrell_cindex(eta, times[held], events[held])


def _rep_scores(X, y, times, events, kind, cfg, rep, max_nnz, feature_names):
    """One repetition: full-train refit path + k-fold mean CV scores."""
    if cfg.smote and kind == "logistic":
        Xr, yr, _ = smote_oversample(
            X, y, seed=derive_seed(cfg.seed, "selection", "refit", rep)
        )
    else:
        Xr, yr = X, y
    refit = fit_path(
        Xr, y=yr, times=times, events=events, kind=kind, alpha=cfg.alpha,
        n_lambdas=cfg.n_lambdas, max_nnz=max_nnz, feature_names=feature_names,
    )
    if len(refit.lambdas) == 0:
        return refit, np.zeros(0)
    rng = rng_for(cfg.seed, "selection", "folds", rep)
    if kind == "logistic":
        folds = _stratified_folds(y, cfg.k, rng)
    else:
        folds = _shuffled_folds(len(X), cfg.k, rng)
    scores = np.empty((cfg.k, len(refit.lambdas)))
    for fold in range(cfg.k):
        held = folds == fold
        Xt = X[~held]
        if kind == "logistic":
            yt = y[~held]
            if cfg.smote:
                Xt, yt, _ = smote_oversample(
                    Xt, yt, seed=derive_seed(cfg.seed, "selection", rep, fold)
                )
            pf = fit_path(
                Xt, y=yt, kind=kind, alpha=cfg.alpha,
                lambdas=refit.lambdas, feature_names=feature_names,
            )
        else:
            pf = fit_path(
                Xt, times=times[~held], events=events[~held], kind=kind,
                alpha=cfg.alpha, lambdas=refit.lambdas,
                feature_names=feature_names,
            )
        eta = pf.linear_predictors(X[held])
        for li in range(len(refit.lambdas)):
            scores[fold, li] = _fold_score(eta[li], y, times, events, held, kind)
    return refit, scores.mean(axis=0)


def _winner(refit: PathFit, mean_scores: np.ndarray, f: int):
    """Strongest-penalty best-scoring path point whose support fits f."""
    eligible = np.flatnonzero(refit.nnz <= f)
    if len(eligible) == 0:
        return (), float("-inf")
    best = eligible[int(np.argmax(mean_scores[eligible]))]  # first max = largest lambda
    support = tuple(
        name
        for name, c in zip(refit.feature_names, refit.coefs[best])
        if c != 0.0
    )
    return support, float(mean_scores[best])


def _reduce_winners(
    winners: Sequence[tuple[str, ...]],
    scores: Sequence[float],
    f: int,
    cfg: SelectionConfig,
    feature_order: Sequence[str],
) -> SelectionResult:
    counts = Counter()
    for support in winners:
        counts.update(support)
    frequencies = {
        name: counts[name] / cfg.n for name in feature_order if counts[name] > 0
    }
    selected = tuple(
        name for name in feature_order if frequencies.get(name, 0.0) >= cfg.p_sel
    )
    return SelectionResult(
        f=f,
        frequencies=frequencies,
        selected=selected,
        empty=all(len(w) == 0 for w in winners),
        cv_scores=tuple(scores),
        config=cfg,
    )


def _run_repetitions(X, y, times, events, kind, cfg, max_nnz, feature_names, n_jobs):
    runs = Parallel(n_jobs=n_jobs)(
        delayed(_rep_scores)(
            X, y, times, events, kind, cfg, rep, max_nnz, feature_names
        )
        for rep in range(cfg.n)
    )
    return list(runs)


def _refit_cv_scores(
    X, y, times, events, kind, selected, cfg, feature_names
) -> tuple[float, ...]:
    """Repeated k-fold CV of a model refit on the selected features.

    Uses a small ridge so near-separable large feature sets still score
    instead of diverging; an empty set scores as the uninformative 0.5.
    """
    if not selected:
        return tuple(_NEUTRAL_SCORE for _ in range(cfg.n))
    index = {name: j for j, name in enumerate(feature_names)}
    Xs = X[:, [index[name] for name in selected]]
    scores = []
    for rep in range(cfg.n):
        rng = rng_for(cfg.seed, "selection", "budget", rep)
        if kind == "logistic":
            folds = _stratified_folds(y, cfg.k, rng)
        else:
            folds = _shuffled_folds(len(X), cfg.k, rng)
        per_fold = []
        for fold in range(cfg.k):
            held = folds == fold
            if kind == "logistic":
                Xt, yt = Xs[~held], y[~held]
                if cfg.smote:
                    Xt, yt, _ = smote_oversample(
                        Xt, yt,
                        seed=derive_seed(cfg.seed, "selection", "budget", rep, fold),
                    )
                model = fit_logistic_elasticnet(Xt, yt, lam=1e-3, alpha=0.0)
            else:
                model = fit_coxnet(
                    Xs[~held], times[~held], events[~held], lam=1e-3, alpha=0.0
                )
            eta = model.linear_predictor(Xs[held])
            per_fold.append(_fold_score(eta, y, times, events, held, kind))
        scores.append(float(np.mean(per_fold)))
    return tuple(scores)


# ---------------------------------------------------------------------------
# public operations


def select_for_budget(
    X,
    *,
    y=None,
    times=None,
    events=None,
    f: int,
    cfg: SelectionConfig = SelectionConfig(),
    kind: str = "logistic",
    feature_names: Optional[Sequence[str]] = None,
    row_ids: Optional[Sequence[str]] = None,
    test_ids: Sequence[str] = (),
    n_jobs: int = 1,
) -> SelectionResult:
    """Repeated-CV selection at one fixed feature budget.

    The path is truncated at max(f, max(cfg.f_grid)) support so results
    agree exactly with :func:`optimize_feature_budget` at the same budget.
    """
    if f < 1:
        raise UsageError("f must be a positive feature budget")
    _guard_provenance(row_ids, test_ids)
    X, y = _check_outcome(X, y, times, events, kind, cfg.smote)
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(X.shape[1]))
    max_nnz = max(f, max(cfg.f_grid))
    runs = _run_repetitions(
        X, y, times, events, kind, cfg, max_nnz, tuple(feature_names), n_jobs
    )
    winners, scores = zip(*(_winner(refit, ms, f) for refit, ms in runs))
    return _reduce_winners(winners, scores, f, cfg, tuple(feature_names))


def optimize_feature_budget(
    X,
    *,
    y=None,
    times=None,
    events=None,
    cfg: SelectionConfig = SelectionConfig(),
    kind: str = "logistic",
    feature_names: Optional[Sequence[str]] = None,
    row_ids: Optional[Sequence[str]] = None,
    test_ids: Sequence[str] = (),
    n_jobs: int = 1,
) -> BudgetSelection:
    """Run the budget grid and keep the f with the best refit CV score.

    The budgets share the per-repetition path fits; only the winner lookup
    differs. Each budget's thresholded feature set is then scored by
    repeated k-fold refit CV, and the best mean wins, with exact ties
    breaking toward the smaller f. Scoring the resulting set rather than
    the per-repetition winners is what lets a small budget win at all: the
    winners' own scores cannot decrease when the budget grows.
    """
    _guard_provenance(row_ids, test_ids)
    X, y = _check_outcome(X, y, times, events, kind, cfg.smote)
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(X.shape[1]))
    feature_names = tuple(feature_names)
    runs = _run_repetitions(
        X, y, times, events, kind, cfg, max(cfg.f_grid), feature_names, n_jobs
    )
    results: dict[int, SelectionResult] = {}
    refit_scores: dict[int, tuple[float, ...]] = {}
    for f in sorted(set(cfg.f_grid)):
        winners, scores = zip(*(_winner(refit, ms, f) for refit, ms in runs))
        results[f] = _reduce_winners(winners, scores, f, cfg, feature_names)
        refit_scores[f] = _refit_cv_scores(
            X, y, times, events, kind, results[f].selected, cfg, feature_names
        )
    best_f = _best_budget(
        {f: float(np.mean(s)) for f, s in refit_scores.items()}
    )
    return BudgetSelection(best_f=best_f, results=results, refit_scores=refit_scores)


def _best_budget(mean_scores: Mapping[int, float]) -> int:
    best_f, best = None, float("-inf")
    for f in sorted(mean_scores):
        if mean_scores[f] > best:
            best_f, best = f, mean_scores[f]
    return best_f
