"""Evaluation metrics over binary confusion counts.

Five measures: accuracy = (TP+TN)/(TP+TN+FP+FN), precision = TP/(TP+FP),
sensitivity = TP/(TP+FN), F1 = 2*precision*sensitivity/(precision+
sensitivity), and the diagnostic odds ratio DOR = (TP*TN)/(FP*FN). A
positive means "at HF risk". Division by zero is reported as undefined
(``None``), never silently coerced to 0; a DOR with an empty denominator
but positive numerator is ``+inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_json(self) -> dict[str, int]:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class Metrics:
    accuracy: Optional[float]
    precision: Optional[float]
    sensitivity: Optional[float]
    f1: Optional[float]
    dor: Optional[float]  # may be math.inf

    def to_json(self) -> dict[str, Any]:
        def render(v: Optional[float]) -> Any:
            if v is None:
                return None
            if math.isinf(v):
                return "inf"
            return v

        return {
            "accuracy": render(self.accuracy),
            "precision": render(self.precision),
            "sensitivity": render(self.sensitivity),
            "f1": render(self.f1),
            "dor": render(self.dor),
        }


def confusion_counts(predictions: Sequence[int], truth: Sequence[int]) -> ConfusionCounts:
    if len(predictions) != len(truth):
        raise ValueError("prediction and truth vectors must have equal length")
    if not predictions:
        raise ValueError("cannot evaluate empty vectors")
    tp = tn = fp = fn = 0
    for p, t in zip(predictions, truth):
        p, t = int(bool(p)), int(bool(t))
        if p == 1 and t == 1:
            tp += 1
        elif p == 0 and t == 0:
            tn += 1
        elif p == 1 and t == 0:
            fp += 1
        else:
            fn += 1
    return ConfusionCounts(tp, tn, fp, fn)


def metrics_from_counts(c: ConfusionCounts) -> Metrics:
    if c.total == 0:
        raise ValueError("metrics need at least one count")
    accuracy = (c.tp + c.tn) / c.total
    precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else None
    sensitivity = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else None
    if precision is None or sensitivity is None or (precision + sensitivity) == 0:
        f1 = None
    else:
        f1 = 2 * precision * sensitivity / (precision + sensitivity)
    numerator = c.tp * c.tn
    denominator = c.fp * c.fn
    if denominator > 0:
        dor: Optional[float] = numerator / denominator
    elif numerator > 0:
        dor = math.inf
    else:
        dor = None
    return Metrics(accuracy, precision, sensitivity, f1, dor)


def evaluate(
    predictions: Sequence[int], truth: Sequence[int]
) -> tuple[Metrics, ConfusionCounts]:
    """Compute the five metrics and the underlying confusion counts."""
    counts = confusion_counts(predictions, truth)
    return metrics_from_counts(counts), counts
