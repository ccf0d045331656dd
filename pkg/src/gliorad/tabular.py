"""Cohort records, the patients-by-features table, ComBat, and SMOTE.

The cohort CSV carries one row per patient with the columns
``patient_id, center, age, sex, mgmt, idh, os_days, event, survival_6m``.
``survival_6m`` is derived, never author-supplied: death within 183 days is
high risk (``<=6m``), follow-up beyond 183 days is ``>6m``, and a patient
censored on or before day 183 is ``unknown`` and drops out of the binary
endpoint (but still contributes to time-to-event models).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DegenerateInputError, UsageError

SURVIVAL_CUTOFF_DAYS = 183

COHORT_COLUMNS = (
    "patient_id", "center", "age", "sex", "mgmt", "idh",
    "os_days", "event", "survival_6m",
)

SEXES = ("female", "male")
MGMT_LEVELS = ("methylated", "unmethylated", "unknown")
IDH_LEVELS = ("wildtype", "mutant", "unknown")
SUBSETS = ("S-1", "S-2", "S-3")


def derive_survival_6m(os_days: float, event: bool) -> Optional[bool]:
    """True = died within the 6-month window, False = survived it, None = censored too early."""
    if os_days < 0:
        raise UsageError(f"os_days must be non-negative, got {os_days}")
    if event and os_days <= SURVIVAL_CUTOFF_DAYS:
        return True
    if os_days > SURVIVAL_CUTOFF_DAYS:
        return False
    return None


@dataclass(frozen=True)
class CohortRecord:
    patient_id: str
    center: str
    age: float
    sex: str
    mgmt: str
    idh: str
    os_days: float
    event: bool

    def __post_init__(self):
        if self.sex not in SEXES:
            raise UsageError(f"{self.patient_id}: sex must be one of {SEXES}, got {self.sex!r}")
        if self.mgmt not in MGMT_LEVELS:
            raise UsageError(f"{self.patient_id}: mgmt must be one of {MGMT_LEVELS}")
        if self.idh not in IDH_LEVELS:
            raise UsageError(f"{self.patient_id}: idh must be one of {IDH_LEVELS}")
        if self.os_days < 0:
            raise UsageError(f"{self.patient_id}: negative os_days")

    @property
    def survival_6m(self) -> Optional[bool]:
        return derive_survival_6m(self.os_days, self.event)


def cohort_to_frame(records: Sequence[CohortRecord]) -> pd.DataFrame:
    rows = []
    for r in records:
        six = r.survival_6m
        rows.append(
            {
                "patient_id": r.patient_id,
                "center": r.center,
                "age": r.age,
                "sex": r.sex,
                "mgmt": r.mgmt,
                "idh": r.idh,
                "os_days": r.os_days,
                "event": int(r.event),
                "survival_6m": "unknown" if six is None else ("<=6m" if six else ">6m"),
            }
        )
    frame = pd.DataFrame(rows, columns=list(COHORT_COLUMNS))
    validate_cohort_frame(frame)
    return frame


def validate_cohort_frame(frame: pd.DataFrame) -> None:
    missing = [c for c in COHORT_COLUMNS if c not in frame.columns]
    if missing:
        raise UsageError(f"cohort table is missing columns {missing}")
    if frame["patient_id"].duplicated().any():
        dup = frame.loc[frame["patient_id"].duplicated(), "patient_id"].iloc[0]
        raise UsageError(f"duplicated patient_id {dup!r} in cohort table")
    derived = [
        "unknown" if derive_survival_6m(d, bool(e)) is None
        else ("<=6m" if derive_survival_6m(d, bool(e)) else ">6m")
        for d, e in zip(frame["os_days"], frame["event"])
    ]
    if list(frame["survival_6m"]) != derived:
        raise UsageError("survival_6m column disagrees with os_days/event derivation")


def load_cohort_csv(path: str) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"patient_id": str, "center": str})
    validate_cohort_frame(frame)
    return frame


def subset_mask(frame: pd.DataFrame, subset: str) -> np.ndarray:
    """Row mask of the nested clinical subsets.

    S-1 is everyone, S-2 requires known MGMT status, S-3 additionally
    restricts to IDH-wildtype patients.
    """
    if subset not in SUBSETS:
        raise UsageError(f"subset must be one of {SUBSETS}, got {subset!r}")
    mask = np.ones(len(frame), dtype=bool)
    if subset in ("S-2", "S-3"):
        mask &= (frame["mgmt"] != "unknown").to_numpy()
    if subset == "S-3":
        mask &= (frame["idh"] == "wildtype").to_numpy()
    return mask


@dataclass
class FeatureTable:
    """Feature columns plus cohort metadata, one row per patient.

    ``frame`` holds the cohort columns followed by the feature columns;
    ``feature_columns`` fixes which columns are model inputs. Metadata
    (including outcomes) is never touched by harmonization or oversampling.
    """

    frame: pd.DataFrame
    feature_columns: Tuple[str, ...]

    def __post_init__(self):
        self.feature_columns = tuple(self.feature_columns)
        if len(set(self.frame.columns)) != len(self.frame.columns):
            raise UsageError("feature table has duplicated column names")
        absent = [c for c in self.feature_columns if c not in self.frame.columns]
        if absent:
            raise UsageError(f"feature columns missing from table: {absent[:5]}")
        if "patient_id" not in self.frame.columns:
            raise UsageError("feature table needs a patient_id column")
        if self.frame["patient_id"].duplicated().any():
            raise UsageError("duplicated patient_id in feature table")
        feats = self.frame[list(self.feature_columns)]
        if not all(np.issubdtype(t, np.number) for t in feats.dtypes):
            raise UsageError("feature columns must be numeric")
        if feats.isna().any().any():
            bad = feats.columns[feats.isna().any()][0]
            raise UsageError(f"NaN in feature column {bad!r}")

    @property
    def n_patients(self) -> int:
        return len(self.frame)

    def features(self) -> np.ndarray:
        return self.frame[list(self.feature_columns)].to_numpy(dtype=np.float64)

    def with_features(self, values: np.ndarray) -> "FeatureTable":
        if values.shape != (len(self.frame), len(self.feature_columns)):
            raise UsageError("replacement feature block has the wrong shape")
        frame = self.frame.copy()
        frame[list(self.feature_columns)] = values
        return FeatureTable(frame, self.feature_columns)

    @classmethod
    def from_cohort_and_features(
        cls, cohort: pd.DataFrame, features: pd.DataFrame
    ) -> "FeatureTable":
        """Inner-join cohort metadata with a patient_id-keyed feature frame."""
        validate_cohort_frame(cohort)
        if "patient_id" not in features.columns:
            raise UsageError("feature frame needs a patient_id column")
        feature_cols = tuple(c for c in features.columns if c != "patient_id")
        merged = cohort.merge(features, on="patient_id", how="inner", validate="1:1")
        return cls(merged, feature_cols)


def load_feature_table(cohort_csv: str, features_csv: str) -> FeatureTable:
    cohort = load_cohort_csv(cohort_csv)
    features = pd.read_csv(features_csv, dtype={"patient_id": str})
    return FeatureTable.from_cohort_and_features(cohort, features)


# --------------------------------------------------------------------------
# ComBat
# --------------------------------------------------------------------------

def _design_matrix(table: FeatureTable, preserve: Sequence[str]) -> np.ndarray:
    cols = []
    for name in preserve:
        if name not in table.frame.columns:
            raise UsageError(f"preserve column {name!r} not in table")
        col = table.frame[name]
        if col.dtype == object:
            levels = sorted(col.unique())
            if len(levels) > 2:
                raise UsageError(f"preserve column {name!r} has >2 levels; encode it numerically")
            col = (col == levels[-1]).astype(float)
        cols.append(col.to_numpy(dtype=np.float64))
    return np.stack(cols, axis=1) if cols else np.empty((table.n_patients, 0))


def combat_harmonize(
    table: FeatureTable,
    batch: str = "center",
    preserve: Sequence[str] = ("age", "sex"),
) -> FeatureTable:
    """Parametric empirical-Bayes location-scale batch harmonization.

    Per feature, batch means and variances are estimated on data standardized
    against an OLS fit of batch indicators plus the ``preserve`` covariates,
    shrunk across features with the usual normal / inverse-gamma moment
    priors, and removed. Covariate-linked variation survives; metadata and
    outcome columns are untouched. A table with one batch level is returned
    unchanged (there is no adjustment direction).
    """
    if batch not in table.frame.columns:
        raise UsageError(f"batch column {batch!r} not in table")
    codes, levels = pd.factorize(table.frame[batch])
    n_batches = len(levels)
    if n_batches == 1:
        return FeatureTable(table.frame.copy(), table.feature_columns)
    counts = np.bincount(codes)
    small = [str(levels[i]) for i in np.flatnonzero(counts < 3)]
    if small:
        raise DegenerateInputError(
            f"batch(es) {small} have fewer than 3 rows; merge them or drop the patients"
        )

    X = table.features()
    n, p = X.shape
    onehot = np.eye(n_batches)[codes]
    covars = _design_matrix(table, preserve)
    design = np.concatenate([onehot, covars], axis=1)

    beta, *_ = np.linalg.lstsq(design, X, rcond=None)
    grand = (counts / n) @ beta[:n_batches]
    stand_mean = grand[None, :] + covars @ beta[n_batches:]
    resid = X - design @ beta
    var_pooled = (resid**2).mean(axis=0)
    scale = np.sqrt(var_pooled)
    keep = scale > 0  # zero-variance features have nothing to harmonize
    Z = np.zeros_like(X)
    Z[:, keep] = (X[:, keep] - stand_mean[:, keep]) / scale[keep]

    adjusted = Z.copy()
    for b in range(n_batches):
        rows = codes == b
        nb = int(rows.sum())
        zb = Z[rows][:, keep]
        g_hat = zb.mean(axis=0)
        # population variance keeps the no-adjustment state an exact fixpoint
        d_hat = zb.var(axis=0)
        g_star, d_star = _eb_shrink(zb, g_hat, d_hat, nb)
        adjusted[np.ix_(rows, keep)] = (zb - g_star) / np.sqrt(d_star)

    out = X.copy()
    out[:, keep] = adjusted[:, keep] * scale[keep] + stand_mean[:, keep]
    return table.with_features(out)


def _eb_shrink(
    zb: np.ndarray, g_hat: np.ndarray, d_hat: np.ndarray, nb: int,
    tol: float = 1e-6, max_iter: int = 200,
) -> Tuple[np.ndarray, np.ndarray]:
    """Iterative moment-matching posterior estimates for one batch.

    With fewer than two features there is nothing to borrow strength across,
    and a degenerate (zero-spread) prior already sits at the estimates; both
    cases fall back to the per-feature estimates themselves.
    """
    p = g_hat.size
    if p < 2:
        return g_hat, np.maximum(d_hat, 1e-12)
    g_bar = g_hat.mean()
    t2 = g_hat.var(ddof=1)
    m = d_hat.mean()
    s2 = d_hat.var(ddof=1)
    if s2 <= 0:
        return g_hat, np.maximum(d_hat, 1e-12)
    a_prior = (2.0 * s2 + m**2) / s2
    b_prior = (m * s2 + m**3) / s2

    g_new = g_hat.copy()
    d_new = np.maximum(d_hat.copy(), 1e-12)
    for _ in range(max_iter):
        g_old, d_old = g_new, d_new
        g_new = (t2 * nb * g_hat + d_old * g_bar) / (t2 * nb + d_old)
        sum2 = ((zb - g_new[None, :]) ** 2).sum(axis=0)
        d_new = (0.5 * sum2 + b_prior) / (nb / 2.0 + a_prior - 1.0)
        d_new = np.maximum(d_new, 1e-12)
        change = max(
            np.abs(g_new - g_old).max() / max(np.abs(g_old).max(), 1e-12),
            np.abs(d_new - d_old).max() / d_old.max(),
        )
        if change < tol:
            break
    return g_new, d_new


# --------------------------------------------------------------------------
# SMOTE
# --------------------------------------------------------------------------

def smote_oversample(
    X: np.ndarray,
    y: np.ndarray,
    k: int = 5,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Balance a binary outcome by synthetic minority interpolation.

    Each synthetic row is ``x + u * (x_nn - x)`` with ``x`` a random minority
    row, ``x_nn`` one of its k nearest minority neighbors (Euclidean, k
    clipped to minority-count - 1), and ``u`` uniform on [0, 1]. Returns
    ``(X_out, y_out, synthetic)`` where ``synthetic`` flags the appended
    rows; callers must keep flagged rows out of any evaluation set.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise UsageError("X must be 2-D with one outcome per row")
    classes = np.unique(y)
    if classes.size != 2:
        raise UsageError(f"SMOTE needs a binary outcome, got classes {classes.tolist()}")
    counts = {c: int((y == c).sum()) for c in classes}
    minority = min(classes, key=lambda c: (counts[c], c))
    majority = max(classes, key=lambda c: (counts[c], c))
    n_min, n_maj = counts[minority], counts[majority]
    if n_min == n_maj:
        return X.copy(), y.copy(), np.zeros(len(y), dtype=bool)
    if n_min < 2:
        raise DegenerateInputError("SMOTE needs at least 2 minority rows (no neighbor otherwise)")

    minority_rows = X[y == minority]
    k_eff = min(k, n_min - 1)
    d2 = ((minority_rows[:, None, :] - minority_rows[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    neighbors = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]

    rng = np.random.default_rng(seed)
    n_new = n_maj - n_min
    base = rng.integers(0, n_min, size=n_new)
    pick = rng.integers(0, k_eff, size=n_new)
    u = rng.random(size=n_new)
    x0 = minority_rows[base]
    x1 = minority_rows[neighbors[base, pick]]
    synth = x0 + u[:, None] * (x1 - x0)

    X_out = np.concatenate([X, synth], axis=0)
    y_out = np.concatenate([y, np.full(n_new, minority, dtype=y.dtype)])
    flag = np.zeros(len(X_out), dtype=bool)
    flag[len(X):] = True
    return X_out, y_out, flag
