"""Domain types shared by every other module: patients, telemetry samples,
units, and plausibility validation.

Validation here screens for device faults (a reading no working sensor can
produce), not for clinical risk -- risk interpretation lives in
:mod:`predihealth.rules`. Plausibility bounds are therefore deliberately
wider than any clinical threshold.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Mapping, Optional, Union

# --------------------------------------------------------------------------
# Errors
# --------------------------------------------------------------------------


class ModelError(Exception):
    """Base class for domain validation errors; carries a stable code."""

    code = "model_error"


class OutOfRange(ModelError):
    """Value outside plausibility bounds: a device fault, not clinical risk."""

    code = "out_of_range"


class UnknownMetric(ModelError):
    code = "unknown_metric"


class NonMonotoneTimestamp(ModelError):
    code = "non_monotone_timestamp"


class InvalidTransition(ModelError):
    code = "invalid_transition"


# --------------------------------------------------------------------------
# Enumerations
# --------------------------------------------------------------------------


class Sex(str, Enum):
    M = "M"
    F = "F"


class NyhaClass(str, Enum):
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"


class Enrollment(str, Enum):
    CANDIDATE = "Candidate"
    ENROLLED = "Enrolled"
    DECLINED = "Declined"


class LocationMode(str, Enum):
    HOME = "Home"
    AWAY = "Away"


class VitalMetric(str, Enum):
    HEART_RATE = "HeartRate"
    SPO2 = "SpO2"
    WEIGHT = "Weight"
    SYSTOLIC_BP = "SystolicBP"
    DIASTOLIC_BP = "DiastolicBP"
    RESP_RATE = "RespRate"
    BODY_TEMP = "BodyTemp"
    SDNN = "SDNN"
    RR_INTERVALS = "RRIntervals"
    AF_DEVICE_FLAG = "AFDeviceFlag"
    ACTIVITY = "Activity"
    SLEEP = "Sleep"

    @property
    def unit(self) -> str:
        return VITAL_UNITS[self]


class EnvMetric(str, Enum):
    PM1 = "PM1"
    PM2_5 = "PM2_5"
    PM4 = "PM4"
    PM10 = "PM10"
    CO2 = "CO2"
    AIR_TEMP = "AirTemp"
    HUMIDITY = "Humidity"
    NOISE = "Noise"
    MOTION = "Motion"

    @property
    def unit(self) -> str:
        return ENV_UNITS[self]


Metric = Union[VitalMetric, EnvMetric]

VITAL_UNITS: dict[VitalMetric, str] = {
    VitalMetric.HEART_RATE: "bpm",
    VitalMetric.SPO2: "%",
    VitalMetric.WEIGHT: "kg",
    VitalMetric.SYSTOLIC_BP: "mmHg",
    VitalMetric.DIASTOLIC_BP: "mmHg",
    VitalMetric.RESP_RATE: "breaths/min",
    VitalMetric.BODY_TEMP: "degC",
    VitalMetric.SDNN: "ms",
    VitalMetric.RR_INTERVALS: "ms",
    VitalMetric.AF_DEVICE_FLAG: "boolean",
    VitalMetric.ACTIVITY: "steps",
    VitalMetric.SLEEP: "min",
}

ENV_UNITS: dict[EnvMetric, str] = {
    EnvMetric.PM1: "ug/m3",
    EnvMetric.PM2_5: "ug/m3",
    EnvMetric.PM4: "ug/m3",
    EnvMetric.PM10: "ug/m3",
    EnvMetric.CO2: "ppm",
    EnvMetric.AIR_TEMP: "degC",
    EnvMetric.HUMIDITY: "%RH",
    EnvMetric.NOISE: "dB",
    EnvMetric.MOTION: "boolean",
}

# Device-fault screen. Wider than any clinical threshold on purpose:
# rejection means "bad sensor", a risk flag means "sick patient".
VITAL_BOUNDS: dict[VitalMetric, tuple[float, float]] = {
    VitalMetric.HEART_RATE: (20.0, 250.0),
    VitalMetric.SPO2: (50.0, 100.0),
    VitalMetric.WEIGHT: (20.0, 300.0),
    VitalMetric.SYSTOLIC_BP: (50.0, 260.0),
    VitalMetric.DIASTOLIC_BP: (30.0, 160.0),
    VitalMetric.RESP_RATE: (4.0, 60.0),
    VitalMetric.BODY_TEMP: (30.0, 43.0),
    VitalMetric.SDNN: (0.0, 300.0),
    VitalMetric.RR_INTERVALS: (200.0, 3000.0),  # per interval
    VitalMetric.ACTIVITY: (0.0, 200000.0),
    VitalMetric.SLEEP: (0.0, 1440.0),
}

# Declared sensor output ranges.
ENV_BOUNDS: dict[EnvMetric, tuple[float, float]] = {
    EnvMetric.PM1: (0.0, 1000.0),
    EnvMetric.PM2_5: (0.0, 1000.0),
    EnvMetric.PM4: (0.0, 1000.0),
    EnvMetric.PM10: (0.0, 1000.0),
    EnvMetric.CO2: (0.0, 40000.0),
    EnvMetric.AIR_TEMP: (-40.0, 125.0),
    EnvMetric.HUMIDITY: (0.0, 100.0),
    EnvMetric.NOISE: (0.0, 130.0),
}

_ID_RE = re.compile(r"^[A-Za-z0-9_.-]{1,64}$")


def check_identifier(value: str, what: str = "identifier") -> str:
    """Identifiers double as path components in the series store."""
    if not isinstance(value, str) or not _ID_RE.match(value):
        raise ValueError(f"invalid {what}: {value!r}")
    return value


# --------------------------------------------------------------------------
# Timestamps (RFC 3339, UTC)
# --------------------------------------------------------------------------


def parse_rfc3339(text: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime."""
    if not isinstance(text, str):
        raise ValueError(f"timestamp must be a string, got {type(text).__name__}")
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise ValueError(f"bad RFC 3339 timestamp: {text!r}") from exc
    if dt.tzinfo is None:
        raise ValueError(f"timestamp missing UTC offset: {text!r}")
    return dt.astimezone(timezone.utc)


def format_rfc3339(dt: datetime) -> str:
    """Canonical RFC 3339 rendering: UTC, 'Z' suffix, microseconds only if set."""
    if dt.tzinfo is None:
        raise ValueError("naive datetime cannot be rendered as RFC 3339")
    dt = dt.astimezone(timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


# --------------------------------------------------------------------------
# Patient record
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ClinicalFeatures:
    """Clinical feature block. ``None`` marks a missing value; it is never
    conflated with zero."""

    diagnosis_primary: Optional[str] = None
    diagnosis_secondary: Optional[str] = None
    hfpef: Optional[bool] = None
    ef_percent: Optional[float] = None
    nyha: Optional[NyhaClass] = None
    hypertension: Optional[bool] = None
    dyslipidemia: Optional[bool] = None
    diabetes: Optional[bool] = None
    copd: Optional[bool] = None
    beta_blocker: Optional[bool] = None
    ace_sartan: Optional[bool] = None
    anti_aldosterone: Optional[bool] = None

    def __post_init__(self) -> None:
        if self.ef_percent is not None and not 5.0 <= self.ef_percent <= 85.0:
            raise ValueError(f"ef_percent out of [5, 85]: {self.ef_percent}")


_ECHO_NUMERIC_FIELDS = (
    "posterior_wall_mm",
    "septum_mm",
    "lves_diam_mm",
    "lved_diam_mm",
    "rv_diam_mm",
    "lvmi_g_m2",
    "left_atrium",
    "tapse_mm",
    "radial_strain",
    "nt_probnp_pg_ml",
    "creatinine_mg_dl",
    "glucose_mg_dl",
    "hb_g_dl",
    "ef_percent",
)


@dataclass(frozen=True)
class EchoFeatures:
    """Echocardiographic and lab feature block.

    ``left_atrium`` is stored unitless (source data does not fix diameter vs
    volume). ``ef_percent`` is the same measurement as the clinical block's,
    surfaced to both feature views.
    """

    posterior_wall_mm: Optional[float] = None
    septum_mm: Optional[float] = None
    lves_diam_mm: Optional[float] = None
    lved_diam_mm: Optional[float] = None
    rv_diam_mm: Optional[float] = None
    lvmi_g_m2: Optional[float] = None
    left_atrium: Optional[float] = None
    tapse_mm: Optional[float] = None
    radial_strain: Optional[float] = None
    lbbb: Optional[bool] = None
    rbbb: Optional[bool] = None
    afib: Optional[bool] = None
    flutter: Optional[bool] = None
    pacemaker: Optional[bool] = None
    nt_probnp_pg_ml: Optional[float] = None
    creatinine_mg_dl: Optional[float] = None
    glucose_mg_dl: Optional[float] = None
    hb_g_dl: Optional[float] = None
    ef_percent: Optional[float] = None

    def __post_init__(self) -> None:
        for name in _ECHO_NUMERIC_FIELDS:
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be non-negative: {value}")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    age: float
    sex: Sex
    bmi: float
    clinical: ClinicalFeatures = field(default_factory=ClinicalFeatures)
    echo: EchoFeatures = field(default_factory=EchoFeatures)
    enrollment: Enrollment = Enrollment.CANDIDATE
    location_mode: LocationMode = LocationMode.HOME

    def __post_init__(self) -> None:
        check_identifier(self.patient_id, "patient_id")
        if not 18 <= self.age <= 120:
            raise ValueError(f"age out of [18, 120]: {self.age}")
        if not 10 <= self.bmi <= 80:
            raise ValueError(f"bmi out of [10, 80]: {self.bmi}")


def transition_enrollment(record: PatientRecord, target: Enrollment) -> PatientRecord:
    """Enrollment moves Candidate -> Enrolled or Candidate -> Declined, only."""
    allowed = {
        (Enrollment.CANDIDATE, Enrollment.ENROLLED),
        (Enrollment.CANDIDATE, Enrollment.DECLINED),
    }
    if (record.enrollment, target) not in allowed:
        raise InvalidTransition(
            f"enrollment {record.enrollment.value} -> {target.value} not allowed"
        )
    return replace(record, enrollment=target)


# --------------------------------------------------------------------------
# Telemetry samples
# --------------------------------------------------------------------------

SampleValue = Union[float, bool, tuple[float, ...]]


@dataclass(frozen=True)
class VitalSample:
    patient_id: str
    device_id: str
    metric: VitalMetric
    value: SampleValue
    timestamp: datetime
    seq: Optional[int] = None

    @property
    def unit(self) -> str:
        return self.metric.unit


@dataclass(frozen=True)
class EnvSample:
    patient_id: str
    sensor_id: str
    metric: EnvMetric
    value: SampleValue
    timestamp: datetime
    seq: Optional[int] = None

    @property
    def unit(self) -> str:
        return self.metric.unit


def _require_utc(ts: datetime) -> None:
    if ts.tzinfo is None:
        raise ValueError("sample timestamp must be timezone-aware UTC")


def validate_vital(
    sample: VitalSample, prev_timestamp: Optional[datetime] = None
) -> VitalSample:
    """Accept a vital sample iff its value is physically plausible.

    Pure: the verdict depends only on the sample (plus the optional previous
    timestamp for the per-stream monotonicity check). Raises
    :class:`OutOfRange`, :class:`UnknownMetric` or
    :class:`NonMonotoneTimestamp` on rejection.
    """
    if not isinstance(sample.metric, VitalMetric):
        raise UnknownMetric(f"unknown vital metric: {sample.metric!r}")
    _require_utc(sample.timestamp)
    if prev_timestamp is not None and sample.timestamp < prev_timestamp:
        raise NonMonotoneTimestamp(
            f"{sample.metric.value} timestamp {format_rfc3339(sample.timestamp)} "
            f"precedes {format_rfc3339(prev_timestamp)}"
        )

    metric, value = sample.metric, sample.value
    if metric is VitalMetric.AF_DEVICE_FLAG:
        if not isinstance(value, bool):
            raise OutOfRange(f"{metric.value} requires a boolean, got {value!r}")
        return sample
    if metric is VitalMetric.RR_INTERVALS:
        if not isinstance(value, tuple) or not value:
            raise OutOfRange(f"{metric.value} requires a non-empty list of ms values")
        lo, hi = VITAL_BOUNDS[metric]
        for interval in value:
            _check_scalar(metric, interval, lo, hi)
        return sample
    lo, hi = VITAL_BOUNDS[metric]
    _check_scalar(metric, value, lo, hi)
    return sample


def validate_env(
    sample: EnvSample, prev_timestamp: Optional[datetime] = None
) -> EnvSample:
    """Accept an environmental sample iff within the sensor's declared range."""
    if not isinstance(sample.metric, EnvMetric):
        raise UnknownMetric(f"unknown environmental metric: {sample.metric!r}")
    _require_utc(sample.timestamp)
    if prev_timestamp is not None and sample.timestamp < prev_timestamp:
        raise NonMonotoneTimestamp(
            f"{sample.metric.value} timestamp {format_rfc3339(sample.timestamp)} "
            f"precedes {format_rfc3339(prev_timestamp)}"
        )
    if sample.metric is EnvMetric.MOTION:
        if not isinstance(sample.value, bool):
            raise OutOfRange(f"Motion requires a boolean, got {sample.value!r}")
        return sample
    lo, hi = ENV_BOUNDS[sample.metric]
    _check_scalar(sample.metric, sample.value, lo, hi)
    return sample


def _check_scalar(metric: Metric, value: Any, lo: float, hi: float) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise OutOfRange(f"{metric.value} requires a number, got {value!r}")
    if not lo <= float(value) <= hi:
        raise OutOfRange(
            f"{metric.value}={value} outside plausible range [{lo}, {hi}]"
        )


# --------------------------------------------------------------------------
# Canonical JSON codecs
# --------------------------------------------------------------------------


def _value_to_json(value: SampleValue) -> Any:
    if isinstance(value, tuple):
        return list(value)
    return value


def _value_from_json(raw: Any) -> SampleValue:
    if isinstance(raw, list):
        return tuple(float(v) for v in raw)
    if isinstance(raw, bool):
        return raw
    return float(raw)


def vital_to_json(sample: VitalSample) -> dict[str, Any]:
    return {
        "patient_id": sample.patient_id,
        "device_id": sample.device_id,
        "metric": sample.metric.value,
        "value": _value_to_json(sample.value),
        "timestamp": format_rfc3339(sample.timestamp),
        "seq": sample.seq,
    }


def vital_from_json(data: Mapping[str, Any]) -> VitalSample:
    return VitalSample(
        patient_id=data["patient_id"],
        device_id=data["device_id"],
        metric=VitalMetric(data["metric"]),
        value=_value_from_json(data["value"]),
        timestamp=parse_rfc3339(data["timestamp"]),
        seq=data.get("seq"),
    )


def env_to_json(sample: EnvSample) -> dict[str, Any]:
    return {
        "patient_id": sample.patient_id,
        "sensor_id": sample.sensor_id,
        "metric": sample.metric.value,
        "value": _value_to_json(sample.value),
        "timestamp": format_rfc3339(sample.timestamp),
        "seq": sample.seq,
    }


def env_from_json(data: Mapping[str, Any]) -> EnvSample:
    return EnvSample(
        patient_id=data["patient_id"],
        sensor_id=data["sensor_id"],
        metric=EnvMetric(data["metric"]),
        value=_value_from_json(data["value"]),
        timestamp=parse_rfc3339(data["timestamp"]),
        seq=data.get("seq"),
    )


def metric_from_key(key: str) -> Metric:
    """Resolve a wire metric key to its enumeration member."""
    try:
        return VitalMetric(key)
    except ValueError:
        pass
    try:
        return EnvMetric(key)
    except ValueError:
        raise UnknownMetric(f"unknown metric key: {key!r}") from None


def clinical_to_json(c: ClinicalFeatures) -> dict[str, Any]:
    return {
        "diagnosis_primary": c.diagnosis_primary,
        "diagnosis_secondary": c.diagnosis_secondary,
        "hfpef": c.hfpef,
        "ef_percent": c.ef_percent,
        "nyha": c.nyha.value if c.nyha is not None else None,
        "hypertension": c.hypertension,
        "dyslipidemia": c.dyslipidemia,
        "diabetes": c.diabetes,
        "copd": c.copd,
        "beta_blocker": c.beta_blocker,
        "ace_sartan": c.ace_sartan,
        "anti_aldosterone": c.anti_aldosterone,
    }


def clinical_from_json(data: Mapping[str, Any]) -> ClinicalFeatures:
    return ClinicalFeatures(
        diagnosis_primary=data.get("diagnosis_primary"),
        diagnosis_secondary=data.get("diagnosis_secondary"),
        hfpef=data.get("hfpef"),
        ef_percent=data.get("ef_percent"),
        nyha=NyhaClass(data["nyha"]) if data.get("nyha") is not None else None,
        hypertension=data.get("hypertension"),
        dyslipidemia=data.get("dyslipidemia"),
        diabetes=data.get("diabetes"),
        copd=data.get("copd"),
        beta_blocker=data.get("beta_blocker"),
        ace_sartan=data.get("ace_sartan"),
        anti_aldosterone=data.get("anti_aldosterone"),
    )


def echo_to_json(e: EchoFeatures) -> dict[str, Any]:
    return {
        "posterior_wall_mm": e.posterior_wall_mm,
        "septum_mm": e.septum_mm,
        "lves_diam_mm": e.lves_diam_mm,
        "lved_diam_mm": e.lved_diam_mm,
        "rv_diam_mm": e.rv_diam_mm,
        "lvmi_g_m2": e.lvmi_g_m2,
        "left_atrium": e.left_atrium,
        "tapse_mm": e.tapse_mm,
        "radial_strain": e.radial_strain,
        "lbbb": e.lbbb,
        "rbbb": e.rbbb,
        "afib": e.afib,
        "flutter": e.flutter,
        "pacemaker": e.pacemaker,
        "nt_probnp_pg_ml": e.nt_probnp_pg_ml,
        "creatinine_mg_dl": e.creatinine_mg_dl,
        "glucose_mg_dl": e.glucose_mg_dl,
        "hb_g_dl": e.hb_g_dl,
        "ef_percent": e.ef_percent,
    }


def echo_from_json(data: Mapping[str, Any]) -> EchoFeatures:
    kwargs = {key: data.get(key) for key in echo_to_json(EchoFeatures())}
    return EchoFeatures(**kwargs)


def patient_to_json(p: PatientRecord) -> dict[str, Any]:
    return {
        "patient_id": p.patient_id,
        "age": p.age,
        "sex": p.sex.value,
        "bmi": p.bmi,
        "clinical": clinical_to_json(p.clinical),
        "echo": echo_to_json(p.echo),
        "enrollment": p.enrollment.value,
        "location_mode": p.location_mode.value,
    }


def patient_from_json(data: Mapping[str, Any]) -> PatientRecord:
    return PatientRecord(
        patient_id=data["patient_id"],
        age=float(data["age"]),
        sex=Sex(data["sex"]),
        bmi=float(data["bmi"]),
        clinical=clinical_from_json(data.get("clinical", {})),
        echo=echo_from_json(data.get("echo", {})),
        enrollment=Enrollment(data.get("enrollment", "Candidate")),
        location_mode=LocationMode(data.get("location_mode", "Home")),
    )
