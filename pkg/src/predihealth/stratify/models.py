"""Two-specialist stacking for enrollment stratification.

One regularized logistic classifier is trained on the clinical feature
block and another on the echocardiographic block; their probabilities feed
a blending meta-model (a weighted vote: convex combination plus a decision
threshold). The meta-model is fit by exhaustive grid search, by default
maximizing sensitivity subject to a precision floor -- missing an at-risk
patient costs more than enrolling a healthy one.

Training is full-batch gradient descent with backtracking, so it is
deterministic for a fixed seed and the loss never increases between epochs.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from ..model import PatientRecord
from .data import (
    CLINICAL_COLUMNS,
    ECHO_COLUMNS,
    FEATURE_COLUMNS,
    OPTIONAL_COLUMNS,
    MissingFeatures,
    PreprocessParams,
    RawDataset,
    Row,
    patient_to_row,
    preprocess,
    transform_rows,
)
from .metrics import ConfusionCounts, Metrics, evaluate

logger = logging.getLogger(__name__)

ARTIFACT_SCHEMA = "predihealth-stacked-model/1"

W_GRID = tuple(round(0.05 * i, 2) for i in range(21))  # 0.00 .. 1.00
THETA_GRID = tuple(round(0.05 * j, 2) for j in range(1, 20))  # 0.05 .. 0.95


class TrainingError(Exception):
    code = "training_error"


class DegenerateLabels(TrainingError):
    code = "degenerate_labels"


class NonConvergence(TrainingError):
    code = "non_convergence"


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _clip_proba(p: np.ndarray) -> np.ndarray:
    return np.clip(p, 1e-9, 1.0 - 1e-9)


@dataclass(frozen=True)
class SpecialistModel:
    kind: str  # "Clinical" | "Echo"
    weights: tuple[float, ...]
    bias: float
    seed: int
    epochs: int
    learning_rate: float
    l2: float
    final_loss: float

    def predict_proba(self, block: np.ndarray) -> np.ndarray:
        if block.shape[1] != len(self.weights):
            raise ValueError(
                f"{self.kind} specialist expects {len(self.weights)} features, "
                f"got {block.shape[1]}"
            )
        z = block @ np.array(self.weights) + self.bias
        return _clip_proba(_sigmoid(z))

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "weights": list(self.weights),
            "bias": self.bias,
            "seed": self.seed,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "l2": self.l2,
            "final_loss": self.final_loss,
        }

    @staticmethod
    def from_json(data: Mapping[str, Any]) -> "SpecialistModel":
        return SpecialistModel(
            kind=data["kind"],
            weights=tuple(float(w) for w in data["weights"]),
            bias=float(data["bias"]),
            seed=int(data["seed"]),
            epochs=int(data["epochs"]),
            learning_rate=float(data["learning_rate"]),
            l2=float(data["l2"]),
            final_loss=float(data["final_loss"]),
        )


def _loss(X, y, w, b, l2: float) -> float:
    p = _clip_proba(_sigmoid(X @ w + b))
    nll = -float(np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
    return nll + 0.5 * l2 * float(w @ w)


def train_specialist(
    block: np.ndarray,
    labels: np.ndarray,
    kind: str,
    seed: int,
    epochs: int = 400,
    learning_rate: float = 0.5,
    l2: float = 1e-3,
) -> tuple[SpecialistModel, list[float]]:
    """Train one specialist by full-batch gradient descent with backtracking
    (halve the step whenever it would increase the loss), which keeps the
    per-epoch loss sequence non-increasing. Returns the model and that
    sequence."""
    X = np.asarray(block, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.shape[0] < 20:
        raise TrainingError(f"need at least 20 rows, got {X.shape[0]}")
    classes = set(np.unique(y).tolist())
    if classes != {0.0, 1.0}:
        raise DegenerateLabels(f"both classes required, got labels {sorted(classes)}")

    n = X.shape[0]
    w = np.zeros(X.shape[1])
    b = 0.0
    lr = learning_rate
    history = [_loss(X, y, w, b, l2)]
    for _ in range(epochs):
        p = _clip_proba(_sigmoid(X @ w + b))
        grad_w = X.T @ (p - y) / n + l2 * w
        grad_b = float(np.mean(p - y))
        step = lr
        while True:
            cand_w = w - step * grad_w
            cand_b = b - step * grad_b
            cand_loss = _loss(X, y, cand_w, cand_b, l2)
            if cand_loss <= history[-1] or step < 1e-12:
                break
            step /= 2.0
        w, b = cand_w, cand_b
        history.append(min(cand_loss, history[-1]))
    if history[-1] > history[0] - 1e-9 and history[0] > 1e-6:
        raise NonConvergence(
            f"{kind} specialist made no progress (loss {history[0]:.4f} -> {history[-1]:.4f})"
        )
    logger.debug("%s specialist: loss %.5f -> %.5f", kind, history[0], history[-1])
    model = SpecialistModel(
        kind=kind,
        weights=tuple(float(v) for v in w),
        bias=float(b),
        seed=seed,
        epochs=epochs,
        learning_rate=learning_rate,
        l2=l2,
        final_loss=float(history[-1]),
    )
    return model, history


# --------------------------------------------------------------------------
# Meta-model (weighted vote over specialist probabilities)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MetaObjective:
    """Maximize sensitivity subject to a precision floor; ties break to the
    higher F1, then the lower threshold."""

    precision_floor: float = 0.65

    def to_json(self) -> dict[str, Any]:
        return {"precision_floor": self.precision_floor}


@dataclass(frozen=True)
class MetaModel:
    w_clinical: float
    w_echo: float
    threshold: float
    feasible: bool = True  # False: precision floor unattainable, best-F1 fallback

    def __post_init__(self) -> None:
        if not math.isclose(self.w_clinical + self.w_echo, 1.0, abs_tol=1e-9):
            raise ValueError("blend weights must sum to 1")
        if self.w_clinical < 0 or self.w_echo < 0:
            raise ValueError("blend weights must be non-negative")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("decision threshold must lie in (0, 1)")

    def blend(self, p_clinical: np.ndarray, p_echo: np.ndarray) -> np.ndarray:
        return self.w_clinical * np.asarray(p_clinical) + self.w_echo * np.asarray(p_echo)

    def decide(self, probability: np.ndarray) -> np.ndarray:
        return (np.asarray(probability) >= self.threshold).astype(np.int64)

    def to_json(self) -> dict[str, Any]:
        return {
            "w_clinical": self.w_clinical,
            "w_echo": self.w_echo,
            "threshold": self.threshold,
            "feasible": self.feasible,
        }

    @staticmethod
    def from_json(data: Mapping[str, Any]) -> "MetaModel":
        return MetaModel(
            w_clinical=float(data["w_clinical"]),
            w_echo=float(data["w_echo"]),
            threshold=float(data["threshold"]),
            feasible=bool(data.get("feasible", True)),
        )


@dataclass(frozen=True)
class GridPoint:
    w_clinical: float
    theta: float
    sensitivity: Optional[float]
    precision: Optional[float]
    f1: Optional[float]


def _rank(value: Optional[float]) -> float:
    return -1.0 if value is None else value


def grid_search_meta(
    p_clinical: np.ndarray,
    p_echo: np.ndarray,
    labels: np.ndarray,
    objective: MetaObjective,
) -> tuple[MetaModel, list[GridPoint]]:
    """Exhaustive sweep over blend weight and threshold. Returns the chosen
    meta-model and every grid point (the recorded sweep backs the monotone
    threshold property)."""
    p_c = np.asarray(p_clinical, dtype=np.float64)
    p_e = np.asarray(p_echo, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p_c.shape != p_e.shape or p_c.shape != y.shape:
        raise ValueError("probability vectors and labels must be aligned")

    points: list[GridPoint] = []
    best_feasible: Optional[GridPoint] = None
    best_fallback: Optional[GridPoint] = None
    for w in W_GRID:
        blended = w * p_c + (1.0 - w) * p_e
        for theta in THETA_GRID:
            pred = (blended >= theta).astype(np.int64)
            metrics, _ = evaluate(pred.tolist(), y.tolist())
            point = GridPoint(w, theta, metrics.sensitivity, metrics.precision, metrics.f1)
            points.append(point)
            if (
                point.precision is not None
                and point.precision >= objective.precision_floor
            ):
                if best_feasible is None or _beats_sensitivity_first(point, best_feasible):
                    best_feasible = point
            if best_fallback is None or _beats_f1_first(point, best_fallback):
                best_fallback = point

    if best_feasible is not None:
        chosen, feasible = best_feasible, True
    else:
        # NoFeasiblePoint: the precision floor is unattainable on this data;
        # fall back to the best-F1 point and mark the model infeasible.
        assert best_fallback is not None
        chosen, feasible = best_fallback, False
        logger.warning(
            "no grid point reaches precision >= %.2f; falling back to best F1",
            objective.precision_floor,
        )
    meta = MetaModel(
        w_clinical=chosen.w_clinical,
        w_echo=round(1.0 - chosen.w_clinical, 2),
        threshold=chosen.theta,
        feasible=feasible,
    )
    return meta, points


def _beats_sensitivity_first(cand: GridPoint, best: GridPoint) -> bool:
    if _rank(cand.sensitivity) != _rank(best.sensitivity):
        return _rank(cand.sensitivity) > _rank(best.sensitivity)
    if _rank(cand.f1) != _rank(best.f1):
        return _rank(cand.f1) > _rank(best.f1)
    if cand.theta != best.theta:
        return cand.theta < best.theta
    # full tie: prefer the heavier clinical weight, for determinism
    return cand.w_clinical > best.w_clinical


def _beats_f1_first(cand: GridPoint, best: GridPoint) -> bool:
    if _rank(cand.f1) != _rank(best.f1):
        return _rank(cand.f1) > _rank(best.f1)
    if _rank(cand.sensitivity) != _rank(best.sensitivity):
        return _rank(cand.sensitivity) > _rank(best.sensitivity)
    if cand.theta != best.theta:
        return cand.theta < best.theta
    return cand.w_clinical > best.w_clinical


def train_meta(
    p_clinical: np.ndarray,
    p_echo: np.ndarray,
    labels: np.ndarray,
    objective: MetaObjective = MetaObjective(),
) -> MetaModel:
    meta, _ = grid_search_meta(p_clinical, p_echo, labels, objective)
    return meta


# --------------------------------------------------------------------------
# Stacked model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StackedModel:
    params: PreprocessParams
    clinical: SpecialistModel
    echo: SpecialistModel
    meta: MetaModel
    seed: int
    objective: MetaObjective = field(default_factory=MetaObjective)

    def predict_blocks(
        self, clinical_block: np.ndarray, echo_block: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        p_c = self.clinical.predict_proba(clinical_block)
        p_e = self.echo.predict_proba(echo_block)
        probability = self.meta.blend(p_c, p_e)
        return probability, self.meta.decide(probability)


def predict(model: StackedModel, features: Union[Row, PatientRecord]) -> tuple[float, bool]:
    """Score one patient: probability = w_c*p_c + w_e*p_e; at-risk iff the
    probability reaches the decision threshold (boundary counts as at-risk).
    Raises :class:`MissingFeatures` if required inputs are absent."""
    row = patient_to_row(features) if isinstance(features, PatientRecord) else features
    missing = [
        c for c in FEATURE_COLUMNS if c not in OPTIONAL_COLUMNS and row.get(c) is None
    ]
    if missing:
        raise MissingFeatures(missing)
    clinical_block = transform_rows([row], model.params, CLINICAL_COLUMNS)
    echo_block = transform_rows([row], model.params, ECHO_COLUMNS)
    probability, label = model.predict_blocks(clinical_block, echo_block)
    return float(probability[0]), bool(label[0])


def stratify_cohort(
    model: StackedModel, patients: Sequence[PatientRecord]
) -> list[tuple[str, float]]:
    """Rank patients by at-risk probability, descending; ties break on
    patient_id so the ordering is reproducible."""
    scored = [(p.patient_id, predict(model, p)[0]) for p in patients]
    return sorted(scored, key=lambda item: (-item[1], item[0]))


@dataclass(frozen=True)
class TrainReport:
    metrics: Metrics
    counts: ConfusionCounts
    clinical_metrics: Metrics
    echo_metrics: Metrics
    rows_total: int
    rows_kept: int
    rows_dropped: int
    train_rows: int
    holdout_rows: int
    meta_feasible: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "metrics": self.metrics.to_json(),
            "confusion": self.counts.to_json(),
            "clinical_metrics": self.clinical_metrics.to_json(),
            "echo_metrics": self.echo_metrics.to_json(),
            "rows": {
                "total": self.rows_total,
                "kept": self.rows_kept,
                "dropped": self.rows_dropped,
                "train": self.train_rows,
                "holdout": self.holdout_rows,
            },
            "meta_feasible": self.meta_feasible,
        }


def stratified_split(
    labels: np.ndarray, seed: int, holdout_fraction: float = 0.2
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic stratified split: the same holdout fraction of each
    class, shuffled by the seed."""
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    holdout_idx: list[int] = []
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(len(members))]
        cut = max(1, int(round(len(members) * holdout_fraction))) if len(members) > 1 else 0
        holdout_idx.extend(members[:cut].tolist())
        train_idx.extend(members[cut:].tolist())
    return np.array(sorted(train_idx)), np.array(sorted(holdout_idx))


def out_of_fold_proba(
    block: np.ndarray, labels: np.ndarray, kind: str, seed: int, folds: int = 5
) -> np.ndarray:
    """Cross-validated specialist probabilities: each row is scored by a
    model that never saw it, so the meta-model's grid search optimizes over
    honest inputs. Falls back to in-sample predictions when the data are
    too small to keep both classes in every fold."""
    rng = np.random.default_rng([seed, 104729])
    order = rng.permutation(len(labels))
    out = np.zeros(len(labels))
    try:
        for fold in range(folds):
            test_idx = order[fold::folds]
            train_idx = np.setdiff1d(order, test_idx)
            fold_model, _ = train_specialist(block[train_idx], labels[train_idx], kind, seed)
            out[test_idx] = fold_model.predict_proba(block[test_idx])
    except (DegenerateLabels, TrainingError):
        full, _ = train_specialist(block, labels, kind, seed)
        return full.predict_proba(block)
    return out


def train_stacked(
    raw: RawDataset,
    seed: int,
    objective: MetaObjective = MetaObjective(),
) -> tuple[StackedModel, TrainReport]:
    """Full pipeline: preprocess, stratified 80/20 split, train both
    specialists on the training split, grid-fit the meta-model on their
    out-of-fold training predictions, and report held-out metrics.

    The reported per-specialist metrics use each specialist's own
    grid-chosen operating point under the same objective, so the stacked
    and single-model numbers answer the same question."""
    matrix, drop_report = preprocess(raw)
    train_idx, holdout_idx = stratified_split(matrix.labels, seed)
    y_train = matrix.labels[train_idx]
    pc_oof = out_of_fold_proba(matrix.clinical[train_idx], y_train, "Clinical", seed)
    pe_oof = out_of_fold_proba(matrix.echo[train_idx], y_train, "Echo", seed)
    meta = train_meta(pc_oof, pe_oof, y_train, objective)
    clinical_model, _ = train_specialist(
        matrix.clinical[train_idx], y_train, "Clinical", seed
    )
    echo_model, _ = train_specialist(matrix.echo[train_idx], y_train, "Echo", seed)
    model = StackedModel(
        params=matrix.params,
        clinical=clinical_model,
        echo=echo_model,
        meta=meta,
        seed=seed,
        objective=objective,
    )

    y_hold = matrix.labels[holdout_idx]
    probability, predictions = model.predict_blocks(
        matrix.clinical[holdout_idx], matrix.echo[holdout_idx]
    )
    metrics, counts = evaluate(predictions.tolist(), y_hold.tolist())
    pc_hold = clinical_model.predict_proba(matrix.clinical[holdout_idx])
    pe_hold = echo_model.predict_proba(matrix.echo[holdout_idx])
    clinical_metrics = _specialist_holdout_metrics(pc_oof, y_train, pc_hold, y_hold, objective)
    echo_metrics = _specialist_holdout_metrics(pe_oof, y_train, pe_hold, y_hold, objective)
    report = TrainReport(
        metrics=metrics,
        counts=counts,
        clinical_metrics=clinical_metrics,
        echo_metrics=echo_metrics,
        rows_total=len(raw),
        rows_kept=len(matrix.row_ids),
        rows_dropped=drop_report.count,
        train_rows=len(train_idx),
        holdout_rows=len(holdout_idx),
        meta_feasible=meta.feasible,
    )
    return model, report


def _specialist_holdout_metrics(
    p_oof: np.ndarray,
    y_train: np.ndarray,
    p_holdout: np.ndarray,
    y_holdout: np.ndarray,
    objective: MetaObjective,
) -> Metrics:
    # blending a vector with itself pins the specialist; the grid only
    # chooses its threshold
    own, _ = grid_search_meta(p_oof, p_oof, y_train, objective)
    predictions = (p_holdout >= own.threshold).astype(int)
    metrics, _ = evaluate(predictions.tolist(), y_holdout.tolist())
    return metrics


# --------------------------------------------------------------------------
# Artifact I/O
# --------------------------------------------------------------------------


def artifact_to_json(model: StackedModel) -> dict[str, Any]:
    return {
        "schema": ARTIFACT_SCHEMA,
        "seed": model.seed,
        "objective": model.objective.to_json(),
        "preprocessing": model.params.to_json(),
        "clinical": model.clinical.to_json(),
        "echo": model.echo.to_json(),
        "meta": model.meta.to_json(),
    }


def save_artifact(model: StackedModel, path: Union[str, Path]) -> None:
    rendered = json.dumps(artifact_to_json(model), indent=2, sort_keys=True) + "\n"
    Path(path).write_text(rendered, encoding="utf-8")


def load_artifact(path: Union[str, Path]) -> StackedModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("schema") != ARTIFACT_SCHEMA:
        raise ValueError(f"unsupported model artifact schema: {data.get('schema')!r}")
    return StackedModel(
        params=PreprocessParams.from_json(data["preprocessing"]),
        clinical=SpecialistModel.from_json(data["clinical"]),
        echo=SpecialistModel.from_json(data["echo"]),
        meta=MetaModel.from_json(data["meta"]),
        seed=int(data["seed"]),
        objective=MetaObjective(**data.get("objective", {})),
    )
