"""Metrics and the experiment harness."""
from .metrics import (
    CONTAMINATION_GRID,
    TAU_GRID,
    SelectionError,
    SweepResult,
    UndefinedMetricsError,
    average_precision,
    rank_auc,
    roc_auc,
    select_threshold,
    sweep,
    sweep_predictions,
)
from .studies import STUDIES, StudyConfig, StudyError, StudyResult, rerun_manifest, run_study

__all__ = [
    "CONTAMINATION_GRID", "STUDIES", "SelectionError", "StudyConfig", "StudyError", "StudyResult",
    "SweepResult", "TAU_GRID", "UndefinedMetricsError", "average_precision", "rank_auc", "roc_auc",
    "rerun_manifest", "run_study", "select_threshold", "sweep", "sweep_predictions",
]
