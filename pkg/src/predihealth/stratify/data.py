"""Dataset loading and preprocessing for the stratification models.

The CSV contract is one header row with the clinical and echocardiographic
feature columns plus ``label`` (1 = at HF risk). Missing cells are empty
strings and stay ``None`` in memory. Preprocessing drops any row missing a
required feature (no imputation), standardizes numeric columns, encodes
booleans as 0/1 and categoricals as one-hot over the categories observed at
fit time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from ..model import PatientRecord


class DatasetError(Exception):
    code = "dataset_error"


class SchemaMismatch(DatasetError):
    code = "schema_mismatch"

    def __init__(self, column: str):
        super().__init__(f"missing column: {column}")
        self.column = column


class ParseError(DatasetError):
    code = "parse_error"

    def __init__(self, line: int, column: str, value: str):
        super().__init__(f"line {line}: cannot parse {column}={value!r}")
        self.line = line
        self.column = column


class AllRowsDropped(DatasetError):
    code = "all_rows_dropped"


class MissingFeatures(DatasetError):
    code = "missing_features"

    def __init__(self, names: Sequence[str]):
        super().__init__(f"missing features: {', '.join(sorted(names))}")
        self.names = tuple(sorted(names))


NUMERIC_COLUMNS = (
    "EF", "Age", "BMI",
    "PARETE_POST", "SETTO", "LVES_DIAM", "LVED_DIAM", "VDx", "LVMI", "ASx",
    "TAPSE", "RS", "NT_proBNP", "Creatinine", "Glucose", "Hb",
)
BOOLEAN_COLUMNS = (
    "HFpEF", "Hypertension", "Dyslipidemia", "Diabetes", "COPD",
    "BetaBlocc", "ACE_SART", "AntiAldosterone",
    "BBSx", "BBDx", "FA", "Flutter", "PM",
)
CATEGORICAL_COLUMNS = ("Diagnosi", "Diagnosi_Secondary", "NYHA", "Sex")

# EF is a single measurement surfaced to both specialists.
CLINICAL_COLUMNS = (
    "Diagnosi", "Diagnosi_Secondary", "HFpEF", "EF", "NYHA", "Age", "BMI",
    "Sex", "Hypertension", "Dyslipidemia", "Diabetes", "COPD", "BetaBlocc",
    "ACE_SART", "AntiAldosterone",
)
ECHO_COLUMNS = (
    "PARETE_POST", "SETTO", "LVES_DIAM", "LVED_DIAM", "VDx", "LVMI", "ASx",
    "TAPSE", "RS", "BBSx", "BBDx", "EF", "NT_proBNP", "Creatinine", "Glucose",
    "FA", "Flutter", "PM", "Hb",
)
FEATURE_COLUMNS = tuple(dict.fromkeys(CLINICAL_COLUMNS + ECHO_COLUMNS))
CSV_COLUMNS = FEATURE_COLUMNS + ("label",)

# A missing secondary diagnosis means "no second diagnosis", not a gap.
OPTIONAL_COLUMNS = frozenset({"Diagnosi_Secondary"})
REQUIRED_COLUMNS = tuple(c for c in FEATURE_COLUMNS if c not in OPTIONAL_COLUMNS)

# Heavy-tailed lab values are log-transformed before standardization so a
# linear model sees them on their natural scale.
LOG_COLUMNS = frozenset({"NT_proBNP"})

_TRUE = {"1", "yes", "y", "true", "si"}
_FALSE = {"0", "no", "n", "false"}


def _parse_cell(column: str, raw: str, line: int) -> Any:
    text = raw.strip()
    if text == "":
        return None
    if column in NUMERIC_COLUMNS:
        try:
            return float(text)
        except ValueError:
            raise ParseError(line, column, raw) from None
    if column in BOOLEAN_COLUMNS or column == "label":
        lowered = text.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ParseError(line, column, raw)
    return text  # categorical


Row = dict[str, Any]


@dataclass(frozen=True)
class RawDataset:
    rows: tuple[Row, ...]
    source: str = "<memory>"

    def __len__(self) -> int:
        return len(self.rows)


def load_dataset(path: Union[str, Path]) -> RawDataset:
    """Load and type-check a feature CSV. Parsing is total per cell: a bad
    cell raises :class:`ParseError` with its line number, a missing header
    column raises :class:`SchemaMismatch`."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in CSV_COLUMNS:
            if column not in header:
                raise SchemaMismatch(column)
        rows: list[Row] = []
        for line_no, record in enumerate(reader, start=2):
            row: Row = {}
            for column in CSV_COLUMNS:
                row[column] = _parse_cell(column, record.get(column) or "", line_no)
            if row["label"] is None:
                raise ParseError(line_no, "label", "")
            rows.append(row)
    return RawDataset(tuple(rows), source=str(path))


def save_dataset(rows: Sequence[Row], path: Union[str, Path]) -> None:
    """Write rows in the canonical CSV contract (inverse of load_dataset)."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            rendered = []
            for column in CSV_COLUMNS:
                value = row.get(column)
                if value is None:
                    rendered.append("")
                elif isinstance(value, bool):
                    rendered.append("1" if value else "0")
                else:
                    rendered.append(str(value))
            writer.writerow(rendered)


# --------------------------------------------------------------------------
# Preprocessing
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DropReport:
    """Row indices removed for missing required features, with the gaps."""

    dropped: tuple[tuple[int, tuple[str, ...]], ...]

    @property
    def count(self) -> int:
        return len(self.dropped)

    def to_json(self) -> list[dict[str, Any]]:
        return [
            {"row": index, "missing": list(missing)} for index, missing in self.dropped
        ]


@dataclass(frozen=True)
class PreprocessParams:
    """Fitted transform parameters, serialized inside the model artifact."""

    numeric_stats: Mapping[str, tuple[float, float]]  # column -> (mean, std)
    categories: Mapping[str, tuple[str, ...]]  # column -> observed categories

    def to_json(self) -> dict[str, Any]:
        return {
            "numeric_stats": {
                col: [mean, std] for col, (mean, std) in sorted(self.numeric_stats.items())
            },
            "categories": {
                col: list(cats) for col, cats in sorted(self.categories.items())
            },
        }

    @staticmethod
    def from_json(data: Mapping[str, Any]) -> "PreprocessParams":
        return PreprocessParams(
            numeric_stats={
                col: (float(pair[0]), float(pair[1]))
                for col, pair in data["numeric_stats"].items()
            },
            categories={
                col: tuple(cats) for col, cats in data["categories"].items()
            },
        )


def encoded_column_names(params: PreprocessParams, source_columns: Sequence[str]) -> list[str]:
    names: list[str] = []
    for column in source_columns:
        if column in CATEGORICAL_COLUMNS:
            for category in params.categories.get(column, ()):
                names.append(f"{column}={category}")
        else:
            names.append(column)
    return names


@dataclass(frozen=True)
class FeatureMatrix:
    """Numeric design matrices (one per specialist block) plus the fitted
    descriptors needed to transform new rows identically."""

    clinical: np.ndarray
    echo: np.ndarray
    labels: np.ndarray
    row_ids: tuple[int, ...]
    params: PreprocessParams
    clinical_names: tuple[str, ...]
    echo_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.clinical.shape[0] != self.echo.shape[0]:
            raise ValueError("feature blocks must have the same row count")
        if self.clinical.shape[1] != len(self.clinical_names):
            raise ValueError("clinical column descriptors out of sync")
        if self.echo.shape[1] != len(self.echo_names):
            raise ValueError("echo column descriptors out of sync")


def _missing_required(row: Row) -> tuple[str, ...]:
    return tuple(c for c in REQUIRED_COLUMNS if row.get(c) is None)


def _numeric_scale(column: str, value: float) -> float:
    if column in LOG_COLUMNS:
        return float(np.log1p(max(value, 0.0)))
    return float(value)


def fit_params(rows: Sequence[Row]) -> PreprocessParams:
    numeric_stats: dict[str, tuple[float, float]] = {}
    for column in NUMERIC_COLUMNS:
        values = np.array(
            [_numeric_scale(column, float(r[column])) for r in rows], dtype=np.float64
        )
        mean = float(values.mean())
        std = float(values.std())
        if std == 0.0:
            std = 1.0  # constant column maps to all zeros
        numeric_stats[column] = (mean, std)
    categories: dict[str, tuple[str, ...]] = {}
    for column in CATEGORICAL_COLUMNS:
        observed = sorted({r[column] for r in rows if r.get(column) is not None})
        categories[column] = tuple(observed)
    return PreprocessParams(numeric_stats=numeric_stats, categories=categories)


def _encode_value(column: str, value: Any, params: PreprocessParams) -> list[float]:
    if column in NUMERIC_COLUMNS:
        mean, std = params.numeric_stats[column]
        return [(_numeric_scale(column, float(value)) - mean) / std]
    if column in BOOLEAN_COLUMNS:
        return [1.0 if value else 0.0]
    # categorical: one-hot over fit-time categories; unseen category -> all zeros
    return [1.0 if value == cat else 0.0 for cat in params.categories[column]]


def transform_rows(
    rows: Sequence[Row], params: PreprocessParams, columns: Sequence[str]
) -> np.ndarray:
    """Encode complete rows into the numeric block for ``columns``. Rows must
    have no missing required feature; raises :class:`MissingFeatures`."""
    encoded: list[list[float]] = []
    for row in rows:
        missing = [c for c in columns if c not in OPTIONAL_COLUMNS and row.get(c) is None]
        if missing:
            raise MissingFeatures(missing)
        out: list[float] = []
        for column in columns:
            value = row.get(column)
            if column in OPTIONAL_COLUMNS and value is None:
                out.extend(0.0 for _ in params.categories[column])
                continue
            out.extend(_encode_value(column, value, params))
        encoded.append(out)
    if not encoded:
        width = len(encoded_column_names(params, columns))
        return np.zeros((0, width), dtype=np.float64)
    return np.array(encoded, dtype=np.float64)


def preprocess(raw: RawDataset) -> tuple[FeatureMatrix, DropReport]:
    """Drop rows with missing required features, standardize numerics, and
    encode booleans/categoricals. Raises :class:`AllRowsDropped` when no
    complete row remains."""
    if not raw.rows:
        raise AllRowsDropped("dataset is empty")
    kept: list[tuple[int, Row]] = []
    dropped: list[tuple[int, tuple[str, ...]]] = []
    for index, row in enumerate(raw.rows):
        missing = _missing_required(row)
        if missing:
            dropped.append((index, missing))
        else:
            kept.append((index, row))
    if not kept:
        raise AllRowsDropped(f"all {len(raw.rows)} rows had missing features")
    rows = [row for _, row in kept]
    params = fit_params(rows)
    matrix = FeatureMatrix(
        clinical=transform_rows(rows, params, CLINICAL_COLUMNS),
        echo=transform_rows(rows, params, ECHO_COLUMNS),
        labels=np.array([1 if r["label"] else 0 for r in rows], dtype=np.int64),
        row_ids=tuple(index for index, _ in kept),
        params=params,
        clinical_names=tuple(encoded_column_names(params, CLINICAL_COLUMNS)),
        echo_names=tuple(encoded_column_names(params, ECHO_COLUMNS)),
    )
    return matrix, DropReport(tuple(dropped))


# --------------------------------------------------------------------------
# PatientRecord bridge
# --------------------------------------------------------------------------

_NYHA_TO_CSV = {"I": "I", "II": "II", "III": "III", "IV": "IV"}


def patient_to_row(record: PatientRecord, label: Optional[bool] = None) -> Row:
    """Render a patient record as a dataset row (the single source of the
    record-to-column mapping)."""
    c, e = record.clinical, record.echo
    row: Row = {
        "Diagnosi": c.diagnosis_primary,
        "Diagnosi_Secondary": c.diagnosis_secondary,
        "HFpEF": c.hfpef,
        "EF": c.ef_percent,
        "NYHA": c.nyha.value if c.nyha is not None else None,
        "Age": record.age,
        "BMI": record.bmi,
        "Sex": record.sex.value,
        "Hypertension": c.hypertension,
        "Dyslipidemia": c.dyslipidemia,
        "Diabetes": c.diabetes,
        "COPD": c.copd,
        "BetaBlocc": c.beta_blocker,
        "ACE_SART": c.ace_sartan,
        "AntiAldosterone": c.anti_aldosterone,
        "PARETE_POST": e.posterior_wall_mm,
        "SETTO": e.septum_mm,
        "LVES_DIAM": e.lves_diam_mm,
        "LVED_DIAM": e.lved_diam_mm,
        "VDx": e.rv_diam_mm,
        "LVMI": e.lvmi_g_m2,
        "ASx": e.left_atrium,
        "TAPSE": e.tapse_mm,
        "RS": e.radial_strain,
        "BBSx": e.lbbb,
        "BBDx": e.rbbb,
        "NT_proBNP": e.nt_probnp_pg_ml,
        "Creatinine": e.creatinine_mg_dl,
        "Glucose": e.glucose_mg_dl,
        "FA": e.afib,
        "Flutter": e.flutter,
        "PM": e.pacemaker,
        "Hb": e.hb_g_dl,
    }
    if label is not None:
        row["label"] = bool(label)
    return row
