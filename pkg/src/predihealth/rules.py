"""Clinical risk rules: scalar thresholds, weight-trend and HRV-persistence
rules, atrial-fibrillation detection, the multimarker score with home/away
gating, and the alert lifecycle.

Every scalar predicate is strict: SpO2 < 92, heart rate > 100 or < 50,
SDNN < 20 ms, weight gain > 2 kg over the 72 h window, systolic pressure
> 140 or < 90, diastolic > 90 or < 60, respiratory rate > 20, body
temperature > 37.5 or < 36. A value sitting exactly on a threshold never
fires.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence, Union

from .model import LocationMode, VitalMetric, format_rfc3339
from .store import SeriesSegment


class RuleError(Exception):
    code = "rule_error"


class InsufficientData(RuleError):
    code = "insufficient_data"


class AlertNotFound(RuleError):
    code = "not_found"


class BadAlertState(RuleError):
    code = "bad_state"


class FlagKind(str, Enum):
    LOW_SPO2 = "LowSpO2"
    TACHYCARDIA = "Tachycardia"
    BRADYCARDIA = "Bradycardia"
    LOW_HRV_PERSISTENT = "LowHRVPersistent"
    WEIGHT_GAIN = "WeightGain"
    HIGH_SBP = "HighSBP"
    LOW_SBP = "LowSBP"
    HIGH_DBP = "HighDBP"
    LOW_DBP = "LowDBP"
    HIGH_RESP_RATE = "HighRespRate"
    FEVER = "Fever"
    HYPOTHERMIA = "Hypothermia"
    ATRIAL_FIBRILLATION = "AtrialFibrillation"
    ENV_POOR_AIR_QUALITY = "EnvPoorAirQuality"
    ENV_THERMAL_STRESS = "EnvThermalStress"
    ENV_HIGH_NOISE = "EnvHighNoise"


# Environmental flags are gated out of the score when the patient is away:
# only readings from the medical devices travel with the patient.
ENV_FLAGS = frozenset(
    {FlagKind.ENV_POOR_AIR_QUALITY, FlagKind.ENV_THERMAL_STRESS, FlagKind.ENV_HIGH_NOISE}
)

# Flags that force Red severity regardless of the additive score.
CRITICAL_FLAGS = frozenset({FlagKind.LOW_SPO2, FlagKind.ATRIAL_FIBRILLATION})


class Severity(str, Enum):
    GREEN = "Green"
    YELLOW = "Yellow"
    RED = "Red"

    @property
    def rank(self) -> int:
        return {"Green": 0, "Yellow": 1, "Red": 2}[self.value]


class AlertState(str, Enum):
    OPEN = "Open"
    ACKNOWLEDGED = "Acknowledged"
    RESOLVED = "Resolved"


class NotifyTarget(str, Enum):
    PATIENT = "Patient"
    HEALTHCARE_INFRASTRUCTURE = "HealthcareInfrastructure"


@dataclass(frozen=True)
class ThresholdConfig:
    """Clinical cutoffs plus the scoring weights. All values are
    configuration, not code constants; the JSON schema mirrors the fields."""

    spo2_low: float = 92.0
    hr_high: float = 100.0
    hr_low: float = 50.0
    sdnn_low: float = 20.0
    weight_gain_kg: float = 2.0
    weight_window_h: float = 72.0
    sbp_high: float = 140.0
    sbp_low: float = 90.0
    dbp_high: float = 90.0
    dbp_low: float = 60.0
    rr_high: float = 20.0
    temp_high: float = 37.5
    temp_low: float = 36.0
    hrv_persistence_count: int = 3
    af_rr_cv_threshold: float = 0.15
    # Environmental cutoffs (artifact defaults; no published numbers exist).
    pm25_high: float = 25.0
    pm25_sustain_h: float = 1.0
    co2_high: float = 1500.0
    air_temp_low: float = 16.0
    air_temp_high: float = 32.0
    noise_high_db: float = 70.0
    noise_sustain_h: float = 1.0
    # Score weights: plain additive scheme so the score stays auditable.
    default_weight: float = 1.0
    critical_weight: float = 3.0
    red_cutoff: float = 3.0
    flag_weights: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.hr_low < self.hr_high:
            raise ValueError("hr_low must be below hr_high")
        if not self.sbp_low < self.sbp_high:
            raise ValueError("sbp_low must be below sbp_high")
        if not self.dbp_low < self.dbp_high:
            raise ValueError("dbp_low must be below dbp_high")
        if not self.temp_low < self.temp_high:
            raise ValueError("temp_low must be below temp_high")
        positives = (
            self.spo2_low, self.sdnn_low, self.weight_gain_kg, self.weight_window_h,
            self.rr_high, self.hrv_persistence_count, self.af_rr_cv_threshold,
            self.default_weight, self.critical_weight, self.red_cutoff,
        )
        if any(v <= 0 for v in positives):
            raise ValueError("threshold values must be positive")

    @property
    def weight_window(self) -> timedelta:
        return timedelta(hours=self.weight_window_h)

    def weight_for(self, kind: FlagKind) -> float:
        if kind.value in self.flag_weights:
            return float(self.flag_weights[kind.value])
        if kind in CRITICAL_FLAGS:
            return self.critical_weight
        return self.default_weight

    def to_json(self) -> dict[str, Any]:
        data = {
            name: getattr(self, name)
            for name in self.__dataclass_fields__
            if name != "flag_weights"
        }
        data["flag_weights"] = dict(self.flag_weights)
        return data

    @staticmethod
    def from_json(data: Mapping[str, Any]) -> "ThresholdConfig":
        known = set(ThresholdConfig.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown threshold config keys: {sorted(unknown)}")
        return ThresholdConfig(**data)

    @staticmethod
    def load(path: Union[str, Path]) -> "ThresholdConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return ThresholdConfig.from_json(json.load(fh))

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


Evidence = tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class RiskFlag:
    kind: FlagKind
    fired_at: datetime
    evidence: Evidence

    def __post_init__(self) -> None:
        if not self.evidence:
            raise ValueError("a flag must carry its triggering values")

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "fired_at": format_rfc3339(self.fired_at),
            "evidence": {name: value for name, value in self.evidence},
        }


def _ev(*pairs: tuple[str, float]) -> Evidence:
    return tuple((name, float(value)) for name, value in pairs)


@dataclass(frozen=True)
class MultimarkerScore:
    patient_id: str
    at: datetime
    active_flags: frozenset[FlagKind]
    score: float
    severity: Severity
    location_mode_used: LocationMode

    def to_json(self) -> dict[str, Any]:
        return {
            "patient_id": self.patient_id,
            "at": format_rfc3339(self.at),
            "active_flags": sorted(k.value for k in self.active_flags),
            "score": self.score,
            "severity": self.severity.value,
            "location_mode_used": self.location_mode_used.value,
        }


# --------------------------------------------------------------------------
# Evaluators
# --------------------------------------------------------------------------

Snapshot = Mapping[VitalMetric, float]


def eval_point_thresholds(
    snapshot: Snapshot, cfg: ThresholdConfig, at: datetime
) -> set[RiskFlag]:
    """Evaluate the instantaneous scalar thresholds against the latest
    reading of each metric. A missing metric simply cannot fire its flag."""
    flags: set[RiskFlag] = set()

    def fire(kind: FlagKind, metric: VitalMetric, value: float, bound: float) -> None:
        flags.add(RiskFlag(kind, at, _ev((metric.value, value), ("threshold", bound))))

    spo2 = snapshot.get(VitalMetric.SPO2)
    if spo2 is not None and spo2 < cfg.spo2_low:
        fire(FlagKind.LOW_SPO2, VitalMetric.SPO2, spo2, cfg.spo2_low)
    hr = snapshot.get(VitalMetric.HEART_RATE)
    if hr is not None:
        if hr > cfg.hr_high:
            fire(FlagKind.TACHYCARDIA, VitalMetric.HEART_RATE, hr, cfg.hr_high)
        elif hr < cfg.hr_low:
            fire(FlagKind.BRADYCARDIA, VitalMetric.HEART_RATE, hr, cfg.hr_low)
    sbp = snapshot.get(VitalMetric.SYSTOLIC_BP)
    if sbp is not None:
        if sbp > cfg.sbp_high:
            fire(FlagKind.HIGH_SBP, VitalMetric.SYSTOLIC_BP, sbp, cfg.sbp_high)
        elif sbp < cfg.sbp_low:
            fire(FlagKind.LOW_SBP, VitalMetric.SYSTOLIC_BP, sbp, cfg.sbp_low)
    dbp = snapshot.get(VitalMetric.DIASTOLIC_BP)
    if dbp is not None:
        if dbp > cfg.dbp_high:
            fire(FlagKind.HIGH_DBP, VitalMetric.DIASTOLIC_BP, dbp, cfg.dbp_high)
        elif dbp < cfg.dbp_low:
            fire(FlagKind.LOW_DBP, VitalMetric.DIASTOLIC_BP, dbp, cfg.dbp_low)
    rr = snapshot.get(VitalMetric.RESP_RATE)
    if rr is not None and rr > cfg.rr_high:
        fire(FlagKind.HIGH_RESP_RATE, VitalMetric.RESP_RATE, rr, cfg.rr_high)
    temp = snapshot.get(VitalMetric.BODY_TEMP)
    if temp is not None:
        if temp > cfg.temp_high:
            fire(FlagKind.FEVER, VitalMetric.BODY_TEMP, temp, cfg.temp_high)
        elif temp < cfg.temp_low:
            fire(FlagKind.HYPOTHERMIA, VitalMetric.BODY_TEMP, temp, cfg.temp_low)
    return flags


def eval_weight_trend(
    segment: SeriesSegment, cfg: ThresholdConfig
) -> Optional[RiskFlag]:
    """Fluid-overload screen: weight gain strictly above the configured
    bound within the trailing window, measured from the window minimum."""
    if len(segment.points) < 2:
        return None
    last = segment.points[-1]
    window_start = last.timestamp - cfg.weight_window
    values = [float(p.value) for p in segment.points if p.timestamp >= window_start]
    if len(values) < 2:
        return None
    gain = values[-1] - min(values)
    if gain > cfg.weight_gain_kg:
        return RiskFlag(
            FlagKind.WEIGHT_GAIN,
            last.timestamp,
            _ev(
                ("Weight", values[-1]),
                ("window_min", min(values)),
                ("gain_kg", gain),
                ("threshold", cfg.weight_gain_kg),
            ),
        )
    return None


def eval_hrv_persistence(
    segment: SeriesSegment, cfg: ThresholdConfig
) -> Optional[RiskFlag]:
    """Persistently low HRV: the last N consecutive SDNN readings all below
    the cutoff (N = hrv_persistence_count)."""
    count = cfg.hrv_persistence_count
    if len(segment.points) < count:
        return None
    tail = segment.points[-count:]
    values = [float(p.value) for p in tail]
    if all(v < cfg.sdnn_low for v in values):
        evidence = [(f"SDNN[{i}]", v) for i, v in enumerate(values)]
        evidence.append(("threshold", cfg.sdnn_low))
        return RiskFlag(FlagKind.LOW_HRV_PERSISTENT, tail[-1].timestamp, _ev(*evidence))
    return None


def rr_interval_cv(intervals: Sequence[float]) -> float:
    """Coefficient of variation (population std / mean) of RR intervals."""
    n = len(intervals)
    mean = sum(intervals) / n
    if mean <= 0:
        raise ValueError("RR intervals must have a positive mean")
    var = sum((x - mean) ** 2 for x in intervals) / n
    return math.sqrt(var) / mean


def detect_af(
    rr_intervals: Optional[Sequence[float]],
    device_af_flag: Optional[bool],
    cfg: ThresholdConfig,
    at: datetime,
) -> Optional[RiskFlag]:
    """Atrial fibrillation: trust the device's own validated detection when
    present, otherwise flag RR irregularity above the CV cutoff. P-wave
    morphology is device-reported only; raw ECG analysis is out of scope.
    """
    if device_af_flag:
        return RiskFlag(
            FlagKind.ATRIAL_FIBRILLATION, at, _ev(("AFDeviceFlag", 1.0))
        )
    if rr_intervals is None or len(rr_intervals) == 0:
        if device_af_flag is None:
            raise InsufficientData("no device flag and no RR intervals")
        return None
    if len(rr_intervals) < 10:
        if device_af_flag is None:
            raise InsufficientData(
                f"need >= 10 RR intervals, got {len(rr_intervals)}"
            )
        return None
    cv = rr_interval_cv(rr_intervals)
    if cv > cfg.af_rr_cv_threshold:
        return RiskFlag(
            FlagKind.ATRIAL_FIBRILLATION,
            at,
            _ev(
                ("rr_cv", cv),
                ("threshold", cfg.af_rr_cv_threshold),
                ("intervals", float(len(rr_intervals))),
            ),
        )
    return None


def eval_env_rules(
    latest: Mapping[str, float],
    pm25_window: SeriesSegment,
    noise_window: SeriesSegment,
    cfg: ThresholdConfig,
    at: datetime,
) -> set[RiskFlag]:
    """Environmental context flags. PM2.5 and noise must hold above their
    cutoffs for the whole sustain window (at least two readings); CO2 and
    air temperature are instantaneous."""
    flags: set[RiskFlag] = set()
    if len(pm25_window.points) >= 2:
        values = pm25_window.values()
        if min(values) > cfg.pm25_high:
            flags.add(
                RiskFlag(
                    FlagKind.ENV_POOR_AIR_QUALITY,
                    at,
                    _ev(("PM2_5_min", min(values)), ("threshold", cfg.pm25_high)),
                )
            )
    co2 = latest.get("CO2")
    temp = latest.get("AirTemp")
    if co2 is not None and co2 > cfg.co2_high:
        flags.add(
            RiskFlag(
                FlagKind.ENV_POOR_AIR_QUALITY,
                at,
                _ev(("CO2", co2), ("threshold", cfg.co2_high)),
            )
        )
    if temp is not None and not cfg.air_temp_low <= temp <= cfg.air_temp_high:
        flags.add(
            RiskFlag(
                FlagKind.ENV_THERMAL_STRESS,
                at,
                _ev(("AirTemp", temp), ("low", cfg.air_temp_low), ("high", cfg.air_temp_high)),
            )
        )
    if len(noise_window.points) >= 2:
        values = noise_window.values()
        if min(values) > cfg.noise_high_db:
            flags.add(
                RiskFlag(
                    FlagKind.ENV_HIGH_NOISE,
                    at,
                    _ev(("Noise_min", min(values)), ("threshold", cfg.noise_high_db)),
                )
            )
    return flags


# --------------------------------------------------------------------------
# Multimarker score
# --------------------------------------------------------------------------


def multimarker_score(
    flags: Iterable[Union[RiskFlag, FlagKind]],
    location_mode: LocationMode,
    cfg: ThresholdConfig,
    patient_id: str,
    at: datetime,
) -> MultimarkerScore:
    """Aggregate active flags into the additive score and a traffic-light
    severity. Away from home, environmental flags do not contribute: only
    the medical devices travel with the patient."""
    kinds = {f.kind if isinstance(f, RiskFlag) else f for f in flags}
    if location_mode is LocationMode.AWAY:
        kinds -= ENV_FLAGS
    score = sum(cfg.weight_for(kind) for kind in kinds)
    if kinds & CRITICAL_FLAGS or score >= cfg.red_cutoff:
        severity = Severity.RED
    elif score > 0:
        severity = Severity.YELLOW
    else:
        severity = Severity.GREEN
    return MultimarkerScore(
        patient_id=patient_id,
        at=at,
        active_flags=frozenset(kinds),
        score=float(score),
        severity=severity,
        location_mode_used=location_mode,
    )


# --------------------------------------------------------------------------
# Alerts
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AlertEvent:
    alert_id: str
    patient_id: str
    score: MultimarkerScore
    created_at: datetime
    state: AlertState = AlertState.OPEN
    acked_by: Optional[str] = None
    notified: frozenset[NotifyTarget] = frozenset(
        {NotifyTarget.PATIENT, NotifyTarget.HEALTHCARE_INFRASTRUCTURE}
    )

    def to_json(self) -> dict[str, Any]:
        return {
            "alert_id": self.alert_id,
            "patient_id": self.patient_id,
            "score": self.score.to_json(),
            "created_at": format_rfc3339(self.created_at),
            "state": self.state.value,
            "acked_by": self.acked_by,
            "notified": sorted(t.value for t in self.notified),
        }


AlertListener = Callable[[AlertEvent], None]


class AlertStore:
    """Alert lifecycle (Open -> Acknowledged -> Resolved) with durable
    notification outbox records.

    Deduplication: a new alert is suppressed while an unresolved alert for
    the same patient carries the same flag set, so acknowledging an alert
    mutes re-notification until the flags change or the alert is resolved.
    """

    def __init__(self, outbox_path: Optional[Union[str, Path]] = None):
        self._alerts: dict[str, AlertEvent] = {}
        self._order: list[str] = []
        self._counter = 0
        self._lock = threading.Lock()
        self._listeners: list[AlertListener] = []
        self._outbox_path = Path(outbox_path) if outbox_path else None

    def add_listener(self, listener: AlertListener) -> None:
        self._listeners.append(listener)

    def _emit(self, alert: AlertEvent) -> None:
        for listener in list(self._listeners):
            listener(alert)

    def _write_outbox(self, alert: AlertEvent) -> None:
        if self._outbox_path is None:
            return
        self._outbox_path.parent.mkdir(parents=True, exist_ok=True)
        with self._outbox_path.open("a", encoding="utf-8") as fh:
            for target in sorted(t.value for t in alert.notified):
                record = {
                    "target": target,
                    "alert_id": alert.alert_id,
                    "patient_id": alert.patient_id,
                    "severity": alert.score.severity.value,
                    "active_flags": sorted(k.value for k in alert.score.active_flags),
                    "created_at": format_rfc3339(alert.created_at),
                }
                fh.write(json.dumps(record, separators=(",", ":")) + "\n")
            fh.flush()

    def raise_alert(self, score: MultimarkerScore) -> Optional[AlertEvent]:
        """Create an Open alert for a Yellow/Red score unless an unresolved
        alert with the identical flag set already covers it. Both the
        patient and the healthcare infrastructure get an outbox record."""
        if score.severity is Severity.GREEN:
            return None
        with self._lock:
            for alert_id in self._order:
                alert = self._alerts[alert_id]
                if (
                    alert.patient_id == score.patient_id
                    and alert.state is not AlertState.RESOLVED
                    and alert.score.active_flags == score.active_flags
                ):
                    return None
            self._counter += 1
            alert = AlertEvent(
                alert_id=f"A-{self._counter:06d}",
                patient_id=score.patient_id,
                score=score,
                created_at=score.at,
            )
            self._alerts[alert.alert_id] = alert
            self._order.append(alert.alert_id)
        self._write_outbox(alert)
        self._emit(alert)
        return alert

    def ack_alert(self, alert_id: str, clinician_id: str) -> AlertEvent:
        with self._lock:
            alert = self._alerts.get(alert_id)
            if alert is None:
                raise AlertNotFound(f"no such alert: {alert_id}")
            if alert.state is not AlertState.OPEN:
                raise BadAlertState(
                    f"alert {alert_id} is {alert.state.value}, not Open"
                )
            alert = replace(alert, state=AlertState.ACKNOWLEDGED, acked_by=clinician_id)
            self._alerts[alert_id] = alert
        self._emit(alert)
        return alert

    def resolve_alert(self, alert_id: str) -> AlertEvent:
        with self._lock:
            alert = self._alerts.get(alert_id)
            if alert is None:
                raise AlertNotFound(f"no such alert: {alert_id}")
            if alert.state is not AlertState.ACKNOWLEDGED:
                raise BadAlertState(
                    f"alert {alert_id} is {alert.state.value}, not Acknowledged"
                )
            alert = replace(alert, state=AlertState.RESOLVED)
            self._alerts[alert_id] = alert
        self._emit(alert)
        return alert

    def get(self, alert_id: str) -> AlertEvent:
        with self._lock:
            alert = self._alerts.get(alert_id)
        if alert is None:
            raise AlertNotFound(f"no such alert: {alert_id}")
        return alert

    def list_alerts(self, state: Optional[AlertState] = None) -> list[AlertEvent]:
        with self._lock:
            alerts = [self._alerts[a] for a in self._order]
        if state is not None:
            alerts = [a for a in alerts if a.state is state]
        return alerts
