"""Network entry point: parses device messages, authenticates devices,
validates samples, and fans accepted samples out to the series store and
the rule evaluator.

One parser serves both transports (HTTP line protocol and the pub/sub
channel). Accepted messages have exactly one visible effect: the
idempotency key (device_id, metric, ts) maps retries onto the original
seq, because wearables re-send on flaky links.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import secrets
import threading
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Callable, Optional, Union

from .model import (
    Enrollment,
    EnvSample,
    ModelError,
    PatientRecord,
    SampleValue,
    VitalMetric,
    VitalSample,
    metric_from_key,
    parse_rfc3339,
    validate_env,
    validate_vital,
)
from .store import SeriesKey, SeriesStore, StoreError


class GatewayError(Exception):
    code = "gateway_error"


class MalformedJson(GatewayError):
    code = "malformed_json"


class MissingField(GatewayError):
    code = "missing_field"

    def __init__(self, name: str):
        super().__init__(f"missing field: {name}")
        self.name = name


class BadTimestamp(GatewayError):
    code = "bad_timestamp"


class AuthFailed(GatewayError):
    code = "auth_failed"


class PatientNotEnrolled(GatewayError):
    code = "patient_not_enrolled"


class DuplicateBinding(GatewayError):
    code = "duplicate_binding"


class ValidationFailed(GatewayError):
    code = "validation_failed"

    def __init__(self, cause: str):
        super().__init__(cause)
        self.cause = cause


@dataclass(frozen=True)
class DeviceMessage:
    device_id: str
    patient_id: str
    metric: str
    value: SampleValue
    unit: str
    ts: datetime
    token: str

    def to_json(self) -> dict[str, Any]:
        from .model import format_rfc3339, _value_to_json

        return {
            "device_id": self.device_id,
            "patient_id": self.patient_id,
            "metric": self.metric,
            "value": _value_to_json(self.value),
            "unit": self.unit,
            "ts": format_rfc3339(self.ts),
            "token": self.token,
        }


_REQUIRED_FIELDS = ("device_id", "patient_id", "metric", "value", "unit", "ts", "token")


def parse_message(raw: Union[bytes, str, dict]) -> DeviceMessage:
    """Total parser: any malformed input maps to a typed rejection, never an
    unhandled exception."""
    if isinstance(raw, dict):
        data = raw
    else:
        try:
            data = json.loads(raw)
        except (ValueError, TypeError, UnicodeDecodeError) as exc:
            raise MalformedJson(f"unparseable message: {exc}") from None
    if not isinstance(data, dict):
        raise MalformedJson(f"message must be a JSON object, got {type(data).__name__}")
    for name in _REQUIRED_FIELDS:
        if name not in data or data[name] is None:
            raise MissingField(name)
    try:
        ts = parse_rfc3339(data["ts"])
    except ValueError as exc:
        raise BadTimestamp(str(exc)) from None
    value = data["value"]
    if isinstance(value, list):
        try:
            value = tuple(float(v) for v in value)
        except (TypeError, ValueError):
            raise MalformedJson(f"value list must be numeric: {value!r}") from None
    elif not isinstance(value, (bool, int, float)):
        raise MalformedJson(f"value must be a number, boolean or list: {value!r}")
    elif not isinstance(value, bool):
        value = float(value)
    for name in ("device_id", "patient_id", "metric", "unit", "token"):
        if not isinstance(data[name], str):
            raise MalformedJson(f"field {name} must be a string")
    return DeviceMessage(
        device_id=data["device_id"],
        patient_id=data["patient_id"],
        metric=data["metric"],
        value=value,
        unit=data["unit"],
        ts=ts,
        token=data["token"],
    )


# --------------------------------------------------------------------------
# Device registry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DeviceRecord:
    device_id: str
    patient_id: str
    kind: str
    credential_sha256: str
    active: bool = True


PatientLookup = Callable[[str], Optional[PatientRecord]]


def _hash_credential(token: str) -> str:
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


class DeviceRegistry:
    """Device identities and bearer credentials. Credentials are stored
    hashed and compared in constant time; the clear token is returned
    exactly once, at registration."""

    def __init__(self, patient_lookup: PatientLookup):
        self._patient_lookup = patient_lookup
        self._devices: dict[str, DeviceRecord] = {}
        self._lock = threading.Lock()
        self._counter = 0

    def register_device(
        self, kind: str, patient_id: str, replace: bool = False
    ) -> tuple[str, str]:
        """Bind a new device of ``kind`` to an enrolled patient. At most one
        active binding per (patient, kind); ``replace`` deactivates an
        existing binding first (device swap), otherwise it is an error."""
        patient = self._patient_lookup(patient_id)
        if patient is None or patient.enrollment is not Enrollment.ENROLLED:
            raise PatientNotEnrolled(
                f"patient {patient_id} is not enrolled; cannot bind a device"
            )
        with self._lock:
            for record in list(self._devices.values()):
                if record.active and record.patient_id == patient_id and record.kind == kind:
                    if not replace:
                        raise DuplicateBinding(
                            f"{kind} already active for patient {patient_id} "
                            f"({record.device_id})"
                        )
                    self._devices[record.device_id] = DeviceRecord(
                        record.device_id, record.patient_id, record.kind,
                        record.credential_sha256, active=False,
                    )
            self._counter += 1
            device_id = f"D-{self._counter:06d}"
            token = secrets.token_hex(16)
            self._devices[device_id] = DeviceRecord(
                device_id=device_id,
                patient_id=patient_id,
                kind=kind,
                credential_sha256=_hash_credential(token),
            )
        return device_id, token

    def deactivate_device(self, device_id: str) -> None:
        with self._lock:
            record = self._devices.get(device_id)
            if record is None:
                raise AuthFailed(f"unknown device {device_id}")
            self._devices[device_id] = DeviceRecord(
                record.device_id, record.patient_id, record.kind,
                record.credential_sha256, active=False,
            )

    def authenticate(self, device_id: str, token: str) -> DeviceRecord:
        with self._lock:
            record = self._devices.get(device_id)
        if record is None or not record.active:
            raise AuthFailed(f"device {device_id} unknown or inactive")
        if not hmac.compare_digest(record.credential_sha256, _hash_credential(token)):
            raise AuthFailed(f"bad credential for device {device_id}")
        return record

    def get(self, device_id: str) -> Optional[DeviceRecord]:
        with self._lock:
            return self._devices.get(device_id)


# --------------------------------------------------------------------------
# Ingest
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Ack:
    seq: int
    duplicate: bool = False


Sample = Union[VitalSample, EnvSample]
SampleCallback = Callable[[Sample], None]


class IngestGateway:
    """Validated, ordered, exactly-once-visible ingestion.

    Processing is serialized per (patient_id, metric) stream and runs
    unordered across streams. Acks return only after the sample is durable
    and the rule evaluator has seen it, so a slow store delays acks instead
    of dropping messages.
    """

    def __init__(
        self,
        registry: DeviceRegistry,
        store: SeriesStore,
        patient_lookup: PatientLookup,
        on_sample: Optional[SampleCallback] = None,
    ):
        self.registry = registry
        self.store = store
        self._patient_lookup = patient_lookup
        self._on_sample = on_sample
        self._stream_locks: dict[SeriesKey, threading.Lock] = {}
        self._stream_locks_guard = threading.Lock()
        self._seen: dict[tuple[str, str, datetime], int] = {}

    def _stream_lock(self, key: SeriesKey) -> threading.Lock:
        with self._stream_locks_guard:
            lock = self._stream_locks.get(key)
            if lock is None:
                lock = threading.Lock()
                self._stream_locks[key] = lock
            return lock

    def ingest_raw(self, raw: Union[bytes, str, dict]) -> Ack:
        return self.ingest(parse_message(raw))

    def ingest(self, msg: DeviceMessage) -> Ack:
        device = self.registry.authenticate(msg.device_id, msg.token)
        if device.patient_id != msg.patient_id:
            raise AuthFailed(
                f"device {msg.device_id} is not bound to patient {msg.patient_id}"
            )
        patient = self._patient_lookup(msg.patient_id)
        if patient is None or patient.enrollment is not Enrollment.ENROLLED:
            raise PatientNotEnrolled(f"patient {msg.patient_id} is not enrolled")

        try:
            metric = metric_from_key(msg.metric)
        except ModelError as exc:
            raise ValidationFailed(str(exc)) from None
        if msg.unit != metric.unit:
            raise ValidationFailed(
                f"unit {msg.unit!r} does not match canonical {metric.unit!r} "
                f"for {metric.value}"
            )

        sample: Sample
        if isinstance(metric, VitalMetric):
            sample = VitalSample(msg.patient_id, msg.device_id, metric, msg.value, msg.ts)
        else:
            sample = EnvSample(msg.patient_id, msg.device_id, metric, msg.value, msg.ts)

        key = SeriesKey.of(msg.patient_id, metric)
        idem_key = (msg.device_id, msg.metric, msg.ts)
        with self._stream_lock(key):
            prior = self._seen.get(idem_key)
            if prior is not None:
                return Ack(seq=prior, duplicate=True)
            try:
                if isinstance(sample, VitalSample):
                    validate_vital(sample)
                else:
                    validate_env(sample)
                seq = self.store.append(key, sample)
            except (ModelError, StoreError) as exc:
                raise ValidationFailed(f"{exc.code}: {exc}") from None
            self._seen[idem_key] = seq
            if self._on_sample is not None:
                self._on_sample(
                    VitalSample(
                        sample.patient_id, msg.device_id, sample.metric,
                        sample.value, sample.timestamp, seq,
                    )
                    if isinstance(sample, VitalSample)
                    else EnvSample(
                        sample.patient_id, msg.device_id, sample.metric,
                        sample.value, sample.timestamp, seq,
                    )
                )
        return Ack(seq=seq)
