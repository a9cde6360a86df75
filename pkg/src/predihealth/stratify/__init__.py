"""Predictive stratification: two specialist classifiers over disjoint
feature blocks whose probabilities feed a blending meta-model, plus dataset
handling and the evaluation metrics."""

from .metrics import ConfusionCounts, Metrics, confusion_counts, evaluate, metrics_from_counts
from .data import (
    CLINICAL_COLUMNS,
    CSV_COLUMNS,
    ECHO_COLUMNS,
    DropReport,
    FeatureMatrix,
    ParseError,
    RawDataset,
    SchemaMismatch,
    AllRowsDropped,
    load_dataset,
    preprocess,
)
from .models import (
    DegenerateLabels,
    MetaModel,
    MetaObjective,
    MissingFeatures,
    NonConvergence,
    SpecialistModel,
    StackedModel,
    load_artifact,
    predict,
    save_artifact,
    stratify_cohort,
    train_meta,
    train_specialist,
    train_stacked,
)

__all__ = [
    "AllRowsDropped",
    "CLINICAL_COLUMNS",
    "CSV_COLUMNS",
    "ConfusionCounts",
    "DegenerateLabels",
    "DropReport",
    "ECHO_COLUMNS",
    "FeatureMatrix",
    "MetaModel",
    "MetaObjective",
    "Metrics",
    "MissingFeatures",
    "NonConvergence",
    "ParseError",
    "RawDataset",
    "SchemaMismatch",
    "SpecialistModel",
    "StackedModel",
    "confusion_counts",
    "evaluate",
    "load_artifact",
    "load_dataset",
    "metrics_from_counts",
    "predict",
    "preprocess",
    "save_artifact",
    "stratify_cohort",
    "train_meta",
    "train_specialist",
    "train_stacked",
]
