"""Statistical evaluation: resampling statistics plus the split protocol."""

from .protocol import (
    CohortSplits,
    EvaluationReport,
    ExternalTestResult,
    ModelSpec,
    PairwiseComparison,
    RepetitionRecord,
    ReportRow,
    SpecEvaluation,
    SplitPlan,
    assemble_report,
    finalize_external_test,
    report_table,
    split_cohort,
    statistical_evaluation,
    table1_models,
)
from .stats import (
    BootstrapCI,
    EffectEstimate,
    KaplanMeierCurve,
    LogrankResult,
    YoudenResult,
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

__all__ = [
    "BootstrapCI",
    "CohortSplits",
    "EffectEstimate",
    "EvaluationReport",
    "ExternalTestResult",
    "KaplanMeierCurve",
    "LogrankResult",
    "ModelSpec",
    "PairwiseComparison",
    "RepetitionRecord",
    "ReportRow",
    "SpecEvaluation",
    "SplitPlan",
    "YoudenResult",
    "assemble_report",
    "bootstrap_ci",
    "cohort_balance_tests",
    "effect_ratios",
    "finalize_external_test",
    "kaplan_meier",
    "kaplan_meier_logrank",
    "logrank_test",
    "permutation_test_mean_metric",
    "prediction_correlation",
    "report_table",
    "split_cohort",
    "statistical_evaluation",
    "table1_models",
    "youden_threshold",
]
