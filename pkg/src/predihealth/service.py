"""The assembled platform: patient directory, device registry, series
store, rule evaluation on every accepted sample, alerting, stratification
queue, and FHIR export, behind one object the API server and CLI share.
"""

from __future__ import annotations

import json
import threading
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Optional, Sequence, Union

from .fhir import export_bundle
from .gateway import DeviceRegistry, IngestGateway
from .model import (
    Enrollment,
    EnvMetric,
    EnvSample,
    LocationMode,
    PatientRecord,
    VitalMetric,
    VitalSample,
    patient_from_json,
    patient_to_json,
    transition_enrollment,
)
from .rules import (
    AlertStore,
    MultimarkerScore,
    RiskFlag,
    ThresholdConfig,
    detect_af,
    eval_env_rules,
    eval_hrv_persistence,
    eval_point_thresholds,
    eval_weight_trend,
    multimarker_score,
)
from .store import SeriesKey, SeriesStore
from .stratify import StackedModel, load_artifact, stratify_cohort

Sample = Union[VitalSample, EnvSample]

_SNAPSHOT_METRICS = (
    VitalMetric.SPO2,
    VitalMetric.HEART_RATE,
    VitalMetric.SYSTOLIC_BP,
    VitalMetric.DIASTOLIC_BP,
    VitalMetric.RESP_RATE,
    VitalMetric.BODY_TEMP,
)


class UnknownPatientError(Exception):
    code = "unknown_patient"


class PatientDirectory:
    """Patient records with durable enrollment state (data_dir/patients.json)."""

    def __init__(self, path: Optional[Path] = None):
        self._path = path
        self._patients: dict[str, PatientRecord] = {}
        self._lock = threading.Lock()
        if path is not None and path.exists():
            for entry in json.loads(path.read_text(encoding="utf-8")):
                record = patient_from_json(entry)
                self._patients[record.patient_id] = record

    def _save(self) -> None:
        # caller holds the lock
        if self._path is None:
            return
        self._path.parent.mkdir(parents=True, exist_ok=True)
        records = sorted(self._patients.values(), key=lambda p: p.patient_id)
        rendered = json.dumps(
            [patient_to_json(p) for p in records], indent=2, sort_keys=True
        )
        self._path.write_text(rendered + "\n", encoding="utf-8")

    def upsert(self, record: PatientRecord) -> None:
        with self._lock:
            self._patients[record.patient_id] = record
            self._save()

    def add_all(self, records: Sequence[PatientRecord]) -> None:
        with self._lock:
            for record in records:
                self._patients[record.patient_id] = record
            self._save()

    def seed(self, records: Sequence[PatientRecord]) -> int:
        """Insert records whose ids are new; existing patients keep their
        enrollment state (restart must not clobber clinician actions)."""
        added = 0
        with self._lock:
            for record in records:
                if record.patient_id not in self._patients:
                    self._patients[record.patient_id] = record
                    added += 1
            if added:
                self._save()
        return added

    def get(self, patient_id: str) -> Optional[PatientRecord]:
        with self._lock:
            return self._patients.get(patient_id)

    def require(self, patient_id: str) -> PatientRecord:
        record = self.get(patient_id)
        if record is None:
            raise UnknownPatientError(f"unknown patient {patient_id}")
        return record

    def list(self) -> list[PatientRecord]:
        with self._lock:
            return sorted(self._patients.values(), key=lambda p: p.patient_id)

    def transition(self, patient_id: str, target: Enrollment) -> PatientRecord:
        with self._lock:
            record = self._patients.get(patient_id)
            if record is None:
                raise UnknownPatientError(f"unknown patient {patient_id}")
            updated = transition_enrollment(record, target)
            self._patients[patient_id] = updated
            self._save()
            return updated

    def set_location_mode(self, patient_id: str, mode: LocationMode) -> PatientRecord:
        with self._lock:
            record = self._patients.get(patient_id)
            if record is None:
                raise UnknownPatientError(f"unknown patient {patient_id}")
            from dataclasses import replace

            updated = replace(record, location_mode=mode)
            self._patients[patient_id] = updated
            self._save()
            return updated


class MonitoringService:
    """Wires gateway -> store -> rules -> alerts. Evaluation runs once per
    accepted sample, serialized per patient, at the sample's own timestamp
    (so replays are deterministic)."""

    def __init__(
        self,
        data_dir: Union[str, Path],
        cfg: Optional[ThresholdConfig] = None,
        model_path: Optional[Union[str, Path]] = None,
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg or ThresholdConfig()
        self.patients = PatientDirectory(self.data_dir / "patients.json")
        self.store = SeriesStore(self.data_dir / "series")
        self.alerts = AlertStore(outbox_path=self.data_dir / "outbox.jsonl")
        self.registry = DeviceRegistry(self.patients.get)
        self.gateway = IngestGateway(
            self.registry, self.store, self.patients.get, on_sample=self.evaluate_sample
        )
        self.model: Optional[StackedModel] = None
        if model_path is not None and Path(model_path).exists():
            self.model = load_artifact(model_path)
        self._last_score: dict[str, MultimarkerScore] = {}
        self._patient_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def close(self) -> None:
        self.store.close()

    def __enter__(self) -> "MonitoringService":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    # -- evaluation --------------------------------------------------------

    def _patient_lock(self, patient_id: str) -> threading.Lock:
        with self._locks_guard:
            lock = self._patient_locks.get(patient_id)
            if lock is None:
                lock = threading.Lock()
                self._patient_locks[patient_id] = lock
            return lock

    def evaluate_sample(self, sample: Sample) -> None:
        """Rule pass for one accepted sample; at most one evaluation in
        flight per patient."""
        with self._patient_lock(sample.patient_id):
            score = self.evaluate_patient(sample.patient_id, at=sample.timestamp)
            self.alerts.raise_alert(score)

    def evaluate_patient(self, patient_id: str, at: datetime) -> MultimarkerScore:
        """Point-in-time rule pass. All reads are as-of ``at``: during a
        fast replay other streams may already hold later samples, and those
        must stay invisible to this evaluation."""
        flags: set[RiskFlag] = set()
        flags |= eval_point_thresholds(self._vital_snapshot(patient_id, at), self.cfg, at)

        weight_key = SeriesKey.of(patient_id, VitalMetric.WEIGHT)
        weight_last = self.store.latest(weight_key, as_of=at)
        if weight_last is not None:
            window = self.store.query_window(
                weight_key,
                weight_last.timestamp - self.cfg.weight_window,
                weight_last.timestamp,
            )
            weight_flag = eval_weight_trend(window, self.cfg)
            if weight_flag is not None:
                flags.add(weight_flag)

        sdnn_tail = self.store.tail(
            SeriesKey.of(patient_id, VitalMetric.SDNN),
            self.cfg.hrv_persistence_count,
            as_of=at,
        )
        hrv_flag = eval_hrv_persistence(sdnn_tail, self.cfg)
        if hrv_flag is not None:
            flags.add(hrv_flag)

        af_flag = self._eval_af(patient_id, at)
        if af_flag is not None:
            flags.add(af_flag)

        flags |= self._eval_env(patient_id, at)

        patient = self.patients.get(patient_id)
        mode = patient.location_mode if patient is not None else LocationMode.HOME
        score = multimarker_score(flags, mode, self.cfg, patient_id, at)
        self._last_score[patient_id] = score
        return score

    def _vital_snapshot(self, patient_id: str, at: datetime) -> dict[VitalMetric, float]:
        snapshot: dict[VitalMetric, float] = {}
        for metric in _SNAPSHOT_METRICS:
            point = self.store.latest(SeriesKey.of(patient_id, metric), as_of=at)
            if point is not None and isinstance(point.value, (int, float)):
                snapshot[metric] = float(point.value)
        sdnn = self.store.latest(SeriesKey.of(patient_id, VitalMetric.SDNN), as_of=at)
        if sdnn is not None:
            snapshot[VitalMetric.SDNN] = float(sdnn.value)
        return snapshot

    def _eval_af(self, patient_id: str, at: datetime) -> Optional[RiskFlag]:
        device_point = self.store.latest(
            SeriesKey.of(patient_id, VitalMetric.AF_DEVICE_FLAG), as_of=at
        )
        rr_point = self.store.latest(
            SeriesKey.of(patient_id, VitalMetric.RR_INTERVALS), as_of=at
        )
        device_flag = bool(device_point.value) if device_point is not None else None
        intervals = tuple(rr_point.value) if rr_point is not None else None
        if device_flag is None and (intervals is None or len(intervals) < 10):
            return None  # nothing to evaluate yet
        return detect_af(intervals, device_flag, self.cfg, at)

    def _eval_env(self, patient_id: str, at: datetime) -> set[RiskFlag]:
        latest: dict[str, float] = {}
        for metric in (EnvMetric.CO2, EnvMetric.AIR_TEMP):
            point = self.store.latest(SeriesKey.of(patient_id, metric), as_of=at)
            if point is not None:
                latest[metric.value] = float(point.value)
        pm_window = self.store.query_window(
            SeriesKey.of(patient_id, EnvMetric.PM2_5),
            at - timedelta(hours=self.cfg.pm25_sustain_h),
            at,
        )
        noise_window = self.store.query_window(
            SeriesKey.of(patient_id, EnvMetric.NOISE),
            at - timedelta(hours=self.cfg.noise_sustain_h),
            at,
        )
        return eval_env_rules(latest, pm_window, noise_window, self.cfg, at)

    # -- queries -----------------------------------------------------------

    def latest_score(self, patient_id: str) -> MultimarkerScore:
        self.patients.require(patient_id)
        score = self._last_score.get(patient_id)
        if score is None:
            score = self.evaluate_patient(patient_id, at=datetime.now(timezone.utc))
        return score

    def stratify_queue(self) -> list[dict[str, Any]]:
        """Ranked enrollment queue: every patient scored by the loaded model,
        highest probability first."""
        if self.model is None:
            return []
        patients = self.patients.list()
        ranked = stratify_cohort(self.model, patients)
        by_id = {p.patient_id: p for p in patients}
        queue = []
        for rank, (patient_id, probability) in enumerate(ranked, start=1):
            record = by_id[patient_id]
            queue.append(
                {
                    "patient_id": patient_id,
                    "probability": probability,
                    "rank": rank,
                    "enrollment": record.enrollment.value,
                    "highlights": {
                        "age": record.age,
                        "ef_percent": record.clinical.ef_percent,
                        "nyha": record.clinical.nyha.value if record.clinical.nyha else None,
                        "nt_probnp_pg_ml": record.echo.nt_probnp_pg_ml,
                    },
                }
            )
        return queue

    def export_patient_bundle(
        self, patient_id: str, t0: datetime, t1: datetime
    ) -> dict[str, Any]:
        return export_bundle(self.store, patient_id, t0, t1)

    # -- clinician actions ---------------------------------------------------

    def enroll(self, patient_id: str) -> PatientRecord:
        return self.patients.transition(patient_id, Enrollment.ENROLLED)

    def decline(self, patient_id: str) -> PatientRecord:
        return self.patients.transition(patient_id, Enrollment.DECLINED)

    def register_device(
        self, kind: str, patient_id: str, replace: bool = False
    ) -> tuple[str, str]:
        return self.registry.register_device(kind, patient_id, replace=replace)
