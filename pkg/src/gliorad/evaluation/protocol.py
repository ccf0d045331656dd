"""Repeated-split evaluation protocol with one-shot external testing.

The cohort is divided by center into TrainEval and ExtTest. Each ModelSpec
is evaluated on N stratified 80/20 splits of TrainEval (selection and all
training happen on the 80%), yielding inner_folds x N cross-validation
estimates plus N internal-test estimates. External testing happens exactly
once per spec: a consensus model retrained on all of TrainEval scores the
ExtTest rows a single time, and the evaluation object remembers that its
external budget is spent.
"""

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .._util import canonical_json, derive_seed, rng_for
from ..errors import ConvergenceError, DegenerateInputError, LeakageError, UsageError
from ..modeling import (
    PrognosticModel,
    _encode_clinical,
    auc_roc,
    fit_logistic_elasticnet,
    fusion_matrix,
    late_fuse,
    risk_scores,
)
from ..selection import SelectionConfig, _stratified_folds, optimize_feature_budget
from ..tabular import SUBSETS, smote_oversample, subset_mask, validate_cohort_frame
from .stats import (
    BootstrapCI,
    EffectEstimate,
    LogrankResult,
    YoudenResult,
    bootstrap_ci,
    cohort_balance_tests,
    effect_ratios,
    kaplan_meier_logrank,
    permutation_test_mean_metric,
    youden_threshold,
)

__all__ = [
    "ModelSpec",
    "SplitPlan",
    "CohortSplits",
    "RepetitionRecord",
    "SpecEvaluation",
    "ExternalTestResult",
    "EvaluationReport",
    "ReportRow",
    "PairwiseComparison",
    "table1_models",
    "split_cohort",
    "statistical_evaluation",
    "finalize_external_test",
    "assemble_report",
    "report_table",
]

# near-unpenalized ridge for refits on an already-chosen feature set; the
# tiny penalty only guards against separation, matching how feature budgets
# were scored during selection
_REFIT_LAM = 1e-3
_NEUTRAL_SCORE = 0.5

_SUBSET_INDEX = {"S-1": 1, "S-2": 2, "S-3": 3}


# ---------------------------------------------------------------------------
# Protocol configuration types

@dataclass(frozen=True)
class ModelSpec:
    """One modeling configuration: a patient subset plus feature groups."""

    subset: str
    demographics: bool = False
    image: bool = False
    molecular: bool = False

    def __post_init__(self):
        if self.subset not in SUBSETS:
            raise UsageError(f"subset must be one of {SUBSETS}, got {self.subset!r}")
        if not (self.demographics or self.image or self.molecular):
            raise UsageError("a model spec needs at least one feature group")
        if self.molecular and self.subset == "S-1":
            raise UsageError("molecular features require known MGMT (subset S-2 or S-3)")
        if self.molecular and not self.demographics:
            raise UsageError("molecular features are only modeled alongside demographics")

    @property
    def name(self) -> str:
        parts = []
        if self.demographics:
            parts.append("demo")
        if self.molecular:
            parts.append("mgmt")
        if self.image:
            parts.append("img")
        return f"M{_SUBSET_INDEX[self.subset]}-" + "-".join(parts)

    def to_dict(self) -> dict:
        return {
            "subset": self.subset, "demographics": self.demographics,
            "image": self.image, "molecular": self.molecular,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ModelSpec":
        return cls(**dict(payload))

    @classmethod
    def from_name(cls, name: str) -> "ModelSpec":
        """Inverse of :attr:`name` for the ``M2-demo-mgmt-img`` grammar."""
        head, _, rest = name.partition("-")
        subsets = {f"M{i}": s for s, i in _SUBSET_INDEX.items()}
        parts = rest.split("-") if rest else []
        if head not in subsets or not parts or any(p not in ("demo", "mgmt", "img") for p in parts):
            raise UsageError(f"unrecognized model name {name!r}")
        spec = cls(
            subsets[head],
            demographics="demo" in parts,
            image="img" in parts,
            molecular="mgmt" in parts,
        )
        if spec.name != name:
            raise UsageError(f"malformed model name {name!r}; did you mean {spec.name!r}?")
        return spec


def table1_models() -> Tuple[ModelSpec, ...]:
    """The 13 canonical subset/feature-group combinations."""
    out = []
    for subset in SUBSETS:
        out.append(ModelSpec(subset, demographics=True))
        out.append(ModelSpec(subset, image=True))
        out.append(ModelSpec(subset, demographics=True, image=True))
        if subset != "S-1":
            out.append(ModelSpec(subset, demographics=True, molecular=True))
            out.append(ModelSpec(subset, demographics=True, molecular=True, image=True))
    return tuple(out)


@dataclass(frozen=True)
class SplitPlan:
    """Center assignment and resampling layout for one evaluation run."""

    train_centers: Tuple[str, ...] = ("SPHN-1", "SPHN-2", "UPENN")
    ext_centers: Tuple[str, ...] = ("SPHN-3", "SPHN-4", "SPHN-5")
    n_repetitions: int = 10
    train_fraction: float = 0.8
    inner_folds: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "train_centers", tuple(self.train_centers))
        object.__setattr__(self, "ext_centers", tuple(self.ext_centers))
        if not self.train_centers:
            raise UsageError("train_centers must be non-empty")
        shared = set(self.train_centers) & set(self.ext_centers)
        if shared:
            raise UsageError(f"centers cannot be in both cohorts: {sorted(shared)}")
        if self.n_repetitions < 1:
            raise UsageError(f"n_repetitions must be >= 1, got {self.n_repetitions}")
        if not 0.0 < self.train_fraction < 1.0:
            raise UsageError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.inner_folds < 2:
            raise UsageError(f"inner_folds must be >= 2, got {self.inner_folds}")

    def to_dict(self) -> dict:
        return {
            "train_centers": list(self.train_centers),
            "ext_centers": list(self.ext_centers),
            "n_repetitions": self.n_repetitions,
            "train_fraction": self.train_fraction,
            "inner_folds": self.inner_folds,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "SplitPlan":
        data = dict(payload)
        data["train_centers"] = tuple(data["train_centers"])
        data["ext_centers"] = tuple(data["ext_centers"])
        return cls(**data)


@dataclass(frozen=True)
class CohortSplits:
    """Deterministic TrainEval/ExtTest assignment plus the N inner splits.

    Patients whose 6-month outcome cannot be derived (censored before the
    cutoff) are excluded up front; the binary endpoint is undefined for
    them. ``repetitions`` holds (train_ids, test_ids) per repetition.
    """

    plan: SplitPlan
    train_ids: Tuple[str, ...]
    ext_ids: Tuple[str, ...]
    excluded_ids: Tuple[str, ...]
    repetitions: Tuple[Tuple[Tuple[str, ...], Tuple[str, ...]], ...]


def split_cohort(cohort: pd.DataFrame, plan: SplitPlan) -> CohortSplits:
    """Assign centers to cohorts and draw N stratified 80/20 splits.

    Stratification is on the 6-month outcome: each class contributes
    round((1 - train_fraction) * n_class) patients to every internal test
    set, so test prevalence tracks cohort prevalence to within a patient.
    """
    validate_cohort_frame(cohort)
    known_centers = set(plan.train_centers) | set(plan.ext_centers)
    stray = sorted(set(cohort["center"]) - known_centers)
    if stray:
        raise UsageError(f"centers {stray} are in neither cohort of the plan")

    usable = cohort[cohort["survival_6m"] != "unknown"]
    excluded = tuple(sorted(cohort.loc[cohort["survival_6m"] == "unknown", "patient_id"]))
    in_train = usable["center"].isin(plan.train_centers)
    train_rows = usable[in_train]
    ext_ids = tuple(sorted(usable.loc[~in_train, "patient_id"]))
    train_ids = tuple(sorted(train_rows["patient_id"]))
    if not train_ids:
        raise UsageError("no TrainEval patients with a known 6-month outcome")

    by_class = {
        label: sorted(train_rows.loc[train_rows["survival_6m"] == label, "patient_id"])
        for label in ("<=6m", ">6m")
    }
    repetitions = []
    for rep in range(plan.n_repetitions):
        rng = rng_for(plan.seed, "protocol", "split", rep)
        test: list = []
        for label in ("<=6m", ">6m"):
            ids = np.array(by_class[label], dtype=object)
            n_test = int((1.0 - plan.train_fraction) * len(ids) + 0.5)
            perm = rng.permutation(len(ids))
            test.extend(ids[perm[:n_test]])
        test_set = set(test)
        train = tuple(sorted(i for i in train_ids if i not in test_set))
        repetitions.append((train, tuple(sorted(test))))
    return CohortSplits(plan, train_ids, ext_ids, excluded, tuple(repetitions))


# ---------------------------------------------------------------------------
# Per-spec evaluation

@dataclass(frozen=True)
class RepetitionRecord:
    """Selection outcome and metric estimates for one 80/20 repetition."""

    repetition: int
    best_f: Optional[int]
    selected: Tuple[str, ...]
    cv_scores: Tuple[float, ...]
    internal_score: float
    n_train: int
    n_test: int

    def to_dict(self) -> dict:
        return {
            "repetition": self.repetition, "best_f": self.best_f,
            "selected": list(self.selected), "cv_scores": list(self.cv_scores),
            "internal_score": self.internal_score,
            "n_train": self.n_train, "n_test": self.n_test,
        }


@dataclass
class SpecEvaluation:
    """All repetition results for one ModelSpec, pre external test.

    ``ext_consumed`` flips when :func:`finalize_external_test` runs; a
    second attempt on the same evaluation is a provenance violation.
    """

    spec: ModelSpec
    plan: SplitPlan
    splits: CohortSplits
    records: Tuple[RepetitionRecord, ...]
    feature_names: Tuple[str, ...]
    smote: bool
    ext_consumed: bool = field(default=False, compare=False)

    def __post_init__(self):
        if len(self.records) != self.plan.n_repetitions:
            raise UsageError("one record per repetition is required")
        for rec in self.records:
            if len(rec.cv_scores) != self.plan.inner_folds:
                raise UsageError("one CV score per inner fold is required")

    @property
    def cv_scores(self) -> Tuple[float, ...]:
        return tuple(s for rec in self.records for s in rec.cv_scores)

    @property
    def internal_scores(self) -> Tuple[float, ...]:
        return tuple(rec.internal_score for rec in self.records)

    def consensus_features(self) -> Tuple[str, ...]:
        """Features selected in strictly more than half the repetitions."""
        counts: dict = {}
        for rec in self.records:
            for name in rec.selected:
                counts[name] = counts.get(name, 0) + 1
        cutoff = len(self.records) / 2.0
        return tuple(n for n in self.feature_names if counts.get(n, 0) > cutoff)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "plan": self.plan.to_dict(),
            "records": [rec.to_dict() for rec in self.records],
            "smote": self.smote,
        }


class _SpecModel:
    """A fitted spec model: image refit (optional) plus the clinical head."""

    def __init__(self, spec: ModelSpec, image_model: Optional[PrognosticModel],
                 head: Optional[PrognosticModel], column_index: np.ndarray):
        self._spec = spec
        self._image = image_model
        self._head = head
        self._cols = column_index

    @property
    def image_model(self) -> Optional[PrognosticModel]:
        return self._image

    @property
    def head(self) -> Optional[PrognosticModel]:
        return self._head

    def rrs(self, feats: np.ndarray, idx: np.ndarray) -> np.ndarray:
        if self._image is None:
            return np.zeros(len(idx))
        return risk_scores(self._image, feats[np.ix_(idx, self._cols)])

    def predict(self, feats: Optional[np.ndarray], clin: pd.DataFrame,
                idx: np.ndarray) -> np.ndarray:
        spec = self._spec
        if spec.image:
            scores = self.rrs(feats, idx)
            if not (spec.demographics or spec.molecular):
                return scores
            if self._head is None:
                return scores
            X = fusion_matrix(scores, clin.iloc[idx], spec.molecular)
            return self._head.linear_predictor(X)
        X = _encode_clinical(clin.iloc[idx], spec.molecular)
        return self._head.linear_predictor(X)


def _fit_spec_model(
    spec: ModelSpec,
    selected: Tuple[str, ...],
    feats: Optional[np.ndarray],
    name_to_col: Mapping[str, int],
    clin: pd.DataFrame,
    y: np.ndarray,
    fit_idx: np.ndarray,
    eval_ids: Tuple[str, ...],
    smote: bool,
    seed: int,
) -> _SpecModel:
    """Train the spec's model on ``fit_idx`` rows; eval rows only guard."""
    fit_ids = tuple(clin["patient_id"].iloc[fit_idx])
    image_model = None
    cols = np.array([], dtype=int)
    rrs_fit = np.zeros(len(fit_idx))
    if spec.image and selected:
        cols = np.array([name_to_col[s] for s in selected], dtype=int)
        X_img = feats[np.ix_(fit_idx, cols)]
        y_img = y[fit_idx]
        if smote:
            X_img, y_img, _ = smote_oversample(X_img, y_img, seed=derive_seed(seed, "smote"))
        image_model = fit_logistic_elasticnet(
            X_img, y_img, alpha=0.0, lam=_REFIT_LAM,
            feature_names=selected, training_ids=fit_ids,
        )
        rrs_fit = risk_scores(image_model, feats[np.ix_(fit_idx, cols)])

    head = None
    if spec.demographics or spec.molecular:
        if spec.image:
            head = late_fuse(
                rrs_fit, clin.iloc[fit_idx], y[fit_idx],
                include_mgmt=spec.molecular, alpha=0.0, lam=_REFIT_LAM,
                rrs_training_ids=fit_ids, test_ids=eval_ids,
            )
        else:
            X = _encode_clinical(clin.iloc[fit_idx], spec.molecular)
            names = ("age", "sex") + (("mgmt",) if spec.molecular else ())
            head = fit_logistic_elasticnet(
                X, y[fit_idx], alpha=0.0, lam=_REFIT_LAM,
                feature_names=names, training_ids=fit_ids,
            )
    return _SpecModel(spec, image_model, head, cols)


def _score_or_neutral(scores: np.ndarray, labels: np.ndarray) -> float:
    if labels.min() == labels.max():
        return _NEUTRAL_SCORE  # degenerate holdout; AUC undefined
    return auc_roc(scores, labels)


def _evaluate_repetition(
    spec: ModelSpec,
    plan: SplitPlan,
    selection: SelectionConfig,
    rep: int,
    feats: Optional[np.ndarray],
    feature_names: Tuple[str, ...],
    clin: pd.DataFrame,
    y: np.ndarray,
    pos_of: Mapping[str, int],
    train_ids: Tuple[str, ...],
    test_ids: Tuple[str, ...],
) -> RepetitionRecord:
    tr = np.array([pos_of[i] for i in train_ids], dtype=int)
    te = np.array([pos_of[i] for i in test_ids], dtype=int)
    name_to_col = {n: j for j, n in enumerate(feature_names)}

    best_f, selected = None, ()
    if spec.image:
        cfg = replace(selection, seed=derive_seed(plan.seed, "protocol", spec.name, "selection", rep))
        budget = optimize_feature_budget(
            feats[tr], y=y[tr], cfg=cfg, feature_names=feature_names,
            row_ids=train_ids, test_ids=test_ids,
        )
        best_f, selected = budget.best_f, budget.best.selected

    model = _fit_spec_model(
        spec, selected, feats, name_to_col, clin, y, tr, test_ids,
        smote=selection.smote,
        seed=derive_seed(plan.seed, "protocol", spec.name, rep, "internal"),
    )
    internal = _score_or_neutral(model.predict(feats, clin, te), y[te])

    rng = rng_for(plan.seed, "protocol", spec.name, "cv", rep)
    folds = _stratified_folds(y[tr], plan.inner_folds, rng)
    cv = []
    for fold in range(plan.inner_folds):
        fit_rows = tr[folds != fold]
        held_rows = tr[folds == fold]
        held_ids = tuple(clin["patient_id"].iloc[held_rows])
        fold_model = _fit_spec_model(
            spec, selected, feats, name_to_col, clin, y, fit_rows, held_ids,
            smote=selection.smote,
            seed=derive_seed(plan.seed, "protocol", spec.name, rep, "fold", fold),
        )
        cv.append(_score_or_neutral(fold_model.predict(feats, clin, held_rows), y[held_rows]))
    return RepetitionRecord(
        rep, best_f, tuple(selected), tuple(cv), internal, len(tr), len(te),
    )


def _prepare_subset(
    features: Optional[pd.DataFrame],
    cohort: pd.DataFrame,
    spec: ModelSpec,
    plan: SplitPlan,
    splits: Optional[CohortSplits],
):
    validate_cohort_frame(cohort)
    sub = cohort[subset_mask(cohort, spec.subset)].reset_index(drop=True)
    if splits is None:
        splits = split_cohort(sub, plan)
    else:
        known = set(sub["patient_id"])
        stray = (set(splits.train_ids) | set(splits.ext_ids)) - known
        if stray:
            raise UsageError(
                f"splits reference patients outside subset {spec.subset}: {sorted(stray)[:5]}"
            )
    keep = sub["patient_id"].isin(set(splits.train_ids) | set(splits.ext_ids))
    sub = sub[keep].reset_index(drop=True)
    pos_of = {pid: i for i, pid in enumerate(sub["patient_id"])}

    feats = None
    feature_names: Tuple[str, ...] = ()
    if spec.image:
        if features is None:
            raise UsageError(f"spec {spec.name} needs image features")
        missing = [i for i in sub["patient_id"] if i not in features.index]
        if missing:
            raise UsageError(f"features are missing patients {missing[:5]}")
        feature_names = tuple(str(c) for c in features.columns)
        feats = features.loc[list(sub["patient_id"])].to_numpy(dtype=np.float64)
    y = (sub["survival_6m"] == "<=6m").to_numpy(dtype=np.float64)
    return sub, splits, pos_of, feats, feature_names, y


def statistical_evaluation(
    features: Optional[pd.DataFrame],
    cohort: pd.DataFrame,
    spec: ModelSpec,
    plan: SplitPlan,
    *,
    selection: SelectionConfig = SelectionConfig(),
    splits: Optional[CohortSplits] = None,
    n_jobs: int = 1,
) -> SpecEvaluation:
    """Run the N-repetition protocol for one spec on the TrainEval cohort.

    ``features`` is a patient-indexed frame of image features (may be None
    for purely clinical specs); ``cohort`` is the full clinical table, which
    is filtered to the spec's subset here. ExtTest rows never enter: splits
    are drawn inside TrainEval centers, and selection receives the test ids
    of each repetition as forbidden provenance.
    """
    sub, splits, pos_of, feats, feature_names, y = _prepare_subset(
        features, cohort, spec, plan, splits
    )
    jobs = (
        delayed(_evaluate_repetition)(
            spec, plan, selection, rep, feats, feature_names,
            sub, y, pos_of, train_ids, test_ids,
        )
        for rep, (train_ids, test_ids) in enumerate(splits.repetitions)
    )
    records = Parallel(n_jobs=n_jobs)(jobs)
    return SpecEvaluation(
        spec, plan, splits, tuple(records), feature_names, selection.smote,
    )


# ---------------------------------------------------------------------------
# External test

@dataclass(frozen=True)
class ExternalTestResult:
    """Single-shot external evaluation of the consensus model."""

    spec: ModelSpec
    consensus_features: Tuple[str, ...]
    auc: float
    n_ext: int
    youden: YoudenResult
    km: Optional[LogrankResult]
    km_p_value: Optional[float]
    effects: Tuple[EffectEstimate, ...]
    ext_ids: Tuple[str, ...]
    ext_scores: Tuple[float, ...]
    ext_labels: Tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "consensus_features": list(self.consensus_features),
            "auc": self.auc,
            "n_ext": self.n_ext,
            "youden_threshold": self.youden.threshold,
            "youden_j": self.youden.j,
            "km_p_value": self.km_p_value,
            "effects": [
                {"name": e.name, "ratio": e.ratio, "low": e.low, "high": e.high}
                for e in self.effects
            ],
        }


def finalize_external_test(
    features: Optional[pd.DataFrame],
    cohort: pd.DataFrame,
    evaluation: SpecEvaluation,
    *,
    selection: Optional[SelectionConfig] = None,
) -> ExternalTestResult:
    """Retrain on all of TrainEval and score the ExtTest rows once.

    Consensus features are those selected in strictly more than half of the
    repetitions. Calling this twice on the same evaluation raises: the
    external cohort answers one question per spec.
    """
    if evaluation.ext_consumed:
        raise LeakageError(
            f"external test already consumed for spec {evaluation.spec.name}"
        )
    spec, plan, splits = evaluation.spec, evaluation.plan, evaluation.splits
    smote = evaluation.smote if selection is None else selection.smote
    sub, splits, pos_of, feats, feature_names, y = _prepare_subset(
        features, cohort, spec, plan, splits
    )
    if not splits.ext_ids:
        raise UsageError("the plan has no ExtTest patients for this subset")
    tr = np.array([pos_of[i] for i in splits.train_ids], dtype=int)
    ext = np.array([pos_of[i] for i in splits.ext_ids], dtype=int)
    name_to_col = {n: j for j, n in enumerate(feature_names)}

    consensus = evaluation.consensus_features()
    model = _fit_spec_model(
        spec, consensus, feats, name_to_col, sub, y, tr, splits.ext_ids,
        smote=smote, seed=derive_seed(plan.seed, "protocol", spec.name, "final"),
    )
    train_scores = model.predict(feats, sub, tr)
    ext_scores = model.predict(feats, sub, ext)
    auc = _score_or_neutral(ext_scores, y[ext])

    cut = youden_threshold(train_scores, y[tr])
    high = ext_scores >= cut.threshold
    km = None
    km_p = None
    if high.any() and (~high).any():
        ext_rows = sub.iloc[ext]
        km = kaplan_meier_logrank({
            "high": (ext_rows.loc[high, "os_days"], ext_rows.loc[high, "event"]),
            "low": (ext_rows.loc[~high, "os_days"], ext_rows.loc[~high, "event"]),
        })
        km_p = km.p_value

    variables = []
    if spec.demographics:
        variables += ["age", "sex"]
    if spec.molecular:
        variables.append("mgmt")
    if spec.image:
        variables.append("RRS")
    train_rows = sub.iloc[tr].copy()
    if spec.image:
        train_rows["RRS"] = model.rrs(feats, tr)
    try:
        effects = effect_ratios("logistic", train_rows, variables)
    except (ConvergenceError, DegenerateInputError):
        # inestimable on this cohort (e.g. the RRS separates its own
        # training rows at small n); the external test itself still stands
        effects = ()

    evaluation.ext_consumed = True
    return ExternalTestResult(
        spec, consensus, auc, len(ext), cut, km, km_p, effects,
        tuple(splits.ext_ids),
        tuple(float(s) for s in ext_scores),
        tuple(float(v) for v in y[ext]),
    )


# ---------------------------------------------------------------------------
# Report

@dataclass(frozen=True)
class ReportRow:
    spec: ModelSpec
    cv: BootstrapCI
    internal: BootstrapCI
    ext_auc: Optional[float]
    n_train: int
    n_ext: int
    consensus_features: Tuple[str, ...]
    km_p_value: Optional[float]
    effects: Tuple[EffectEstimate, ...]

    def to_dict(self) -> dict:
        def ci(x: BootstrapCI) -> dict:
            return {"mean": x.estimate, "low": x.low, "high": x.high}
        return {
            "model": self.spec.name,
            "subset": self.spec.subset,
            "cv": ci(self.cv),
            "internal_test": ci(self.internal),
            "ext_test": self.ext_auc,
            "n_train": self.n_train,
            "n_ext": self.n_ext,
            "consensus_features": list(self.consensus_features),
            "km_p_value": self.km_p_value,
            "effects": [
                {"name": e.name, "ratio": e.ratio, "low": e.low, "high": e.high}
                for e in self.effects
            ],
        }


@dataclass(frozen=True)
class PairwiseComparison:
    model_a: str
    model_b: str
    p_value: float

    def to_dict(self) -> dict:
        return {"model_a": self.model_a, "model_b": self.model_b, "p_value": self.p_value}


@dataclass(frozen=True)
class EvaluationReport:
    plan: SplitPlan
    rows: Tuple[ReportRow, ...]
    comparisons: Tuple[PairwiseComparison, ...]
    balance: Mapping[str, Mapping[str, float]]

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "models": [row.to_dict() for row in self.rows],
            "comparisons": [c.to_dict() for c in self.comparisons],
            "balance": {k: dict(v) for k, v in self.balance.items()},
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


def assemble_report(
    evaluations: Sequence[SpecEvaluation],
    ext_results: Mapping[str, ExternalTestResult],
    cohort: pd.DataFrame,
    *,
    n_resamples: int = 1000,
    n_permutations: int = 10000,
) -> EvaluationReport:
    """Deterministic reduction of all spec results into one report.

    Internal-test estimate vectors of specs sharing a subset ride the same
    splits, so their pairwise comparisons use the paired permutation test.
    """
    if not evaluations:
        raise UsageError("at least one evaluation is required")
    plan = evaluations[0].plan
    rows = []
    for ev in evaluations:
        ext = ext_results.get(ev.spec.name)
        cv = bootstrap_ci(
            ev.cv_scores, n_resamples=n_resamples,
            seed=derive_seed(plan.seed, "report", ev.spec.name, "cv"),
        )
        internal = bootstrap_ci(
            ev.internal_scores, n_resamples=n_resamples,
            seed=derive_seed(plan.seed, "report", ev.spec.name, "internal"),
        )
        rows.append(ReportRow(
            ev.spec, cv, internal,
            None if ext is None else ext.auc,
            len(ev.splits.train_ids),
            0 if ext is None else ext.n_ext,
            ev.consensus_features() if ext is None else ext.consensus_features,
            None if ext is None else ext.km_p_value,
            () if ext is None else ext.effects,
        ))

    comparisons = []
    for i, ev_a in enumerate(evaluations):
        for ev_b in evaluations[i + 1:]:
            if ev_a.spec.subset != ev_b.spec.subset:
                continue
            p = permutation_test_mean_metric(
                ev_a.internal_scores, ev_b.internal_scores, paired=True,
                n_permutations=n_permutations,
                seed=derive_seed(plan.seed, "report", ev_a.spec.name, ev_b.spec.name),
            )
            comparisons.append(PairwiseComparison(ev_a.spec.name, ev_b.spec.name, p))

    balance: dict = {}
    for ev in evaluations:
        subset = ev.spec.subset
        if subset in balance or not ev.splits.ext_ids:
            continue
        frame = cohort.set_index("patient_id", drop=False)
        balance[subset] = dict(cohort_balance_tests(
            frame.loc[list(ev.splits.train_ids)],
            frame.loc[list(ev.splits.ext_ids)],
        ))
    return EvaluationReport(plan, tuple(rows), tuple(comparisons), balance)


def report_table(report) -> str:
    """Fixed-width text table: one model per row, CV/Internal/ExtTest columns.

    Accepts an :class:`EvaluationReport` or its ``to_dict`` payload, so a
    report reloaded from JSON renders identically.
    """
    payload = report.to_dict() if isinstance(report, EvaluationReport) else report

    def ci(x: Mapping) -> str:
        return f"{x['mean']:.2f} [{x['low']:.2f}, {x['high']:.2f}]"

    header = f"{'Model':<20} {'Subset':<7} {'CV AUC':<19} {'Internal AUC':<19} {'ExtTest AUC':<11}"
    lines = [header, "-" * len(header)]
    for row in payload["models"]:
        ext = "-" if row["ext_test"] is None else f"{row['ext_test']:.2f}"
        lines.append(
            f"{row['model']:<20} {row['subset']:<7} {ci(row['cv']):<19} "
            f"{ci(row['internal_test']):<19} {ext:<11}"
        )
    return "\n".join(lines) + "\n"
