"""Deterministic cohort and telemetry simulator.

Cohorts are drawn from documented distributions with a planted linear risk
signal whose ground-truth coefficients are emitted alongside, so model
training can be checked against a known answer. Traces are mean-reverting
walks clamped inside a no-flag envelope (baseline crosses no clinical
threshold by construction); injected episodes perturb exactly their own
metrics hard enough to cross the configured cutoffs. A fixed seed yields a
byte-identical stream.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from .gateway import GatewayError, IngestGateway
from .model import (
    ClinicalFeatures,
    EchoFeatures,
    EnvMetric,
    NyhaClass,
    PatientRecord,
    Sex,
    VitalMetric,
    format_rfc3339,
    parse_rfc3339,
)
from .pubsub import PubSubChannel, topic_for
from .rules import ThresholdConfig


class SimError(Exception):
    code = "sim_error"


class InvalidSpec(SimError):
    code = "invalid_spec"


class GatewayUnavailable(SimError):
    code = "gateway_unavailable"


# --------------------------------------------------------------------------
# Cohort generation
# --------------------------------------------------------------------------

DIAGNOSIS_CODES = ("ICM", "NICM", "DCM", "HCM", "VHD")

# Planted log-odds coefficients over standardized features. Split across the
# clinical and echocardiographic blocks so each specialist sees real signal;
# strong enough that a well-fit model reaches a high-sensitivity operating
# point with usable precision on held-out data.
RISK_COEFFICIENTS: dict[str, float] = {
    "ef_percent": -4.16,
    "nyha_ordinal": 2.86,
    "age": 1.43,
    "bmi": 1.04,
    "diabetes": 1.17,
    "copd": 0.78,
    "log_nt_probnp": 3.9,
    "tapse_mm": -2.6,
    "lved_diam_mm": 1.82,
    "creatinine_mg_dl": 1.43,
    "afib": 1.3,
    "hb_g_dl": -1.04,
}


@dataclass(frozen=True)
class GroundTruth:
    """The planted signal: coefficients over standardized features plus the
    intercept that calibrates the positive rate."""

    coefficients: Mapping[str, float]
    intercept: float
    prevalence_target: float
    positive_rate: float

    def to_json(self) -> dict[str, Any]:
        return {
            "coefficients": dict(sorted(self.coefficients.items())),
            "intercept": self.intercept,
            "prevalence_target": self.prevalence_target,
            "positive_rate": self.positive_rate,
        }


def _standardize(values: np.ndarray) -> np.ndarray:
    std = values.std()
    return (values - values.mean()) / (std if std > 0 else 1.0)


def gen_cohort(
    n: int, prevalence: float, seed: int
) -> tuple[list[PatientRecord], list[bool], GroundTruth]:
    """Generate ``n`` patients with labels at roughly the requested
    prevalence. Deterministic in the seed."""
    if n < 1:
        raise InvalidSpec("cohort size must be >= 1")
    if not 0.0 < prevalence < 1.0:
        raise InvalidSpec("prevalence must lie in (0, 1)")
    rng = np.random.default_rng(seed)

    age = np.clip(rng.normal(72, 9, n), 40, 95)
    sex = rng.uniform(size=n) < 0.6  # True = male
    bmi = np.clip(rng.normal(27.5, 4.5, n), 16, 45)
    diagnosis = rng.choice(DIAGNOSIS_CODES, size=n, p=(0.35, 0.25, 0.2, 0.1, 0.1))
    has_secondary = rng.uniform(size=n) < 0.25
    secondary = rng.choice(DIAGNOSIS_CODES, size=n)
    hfpef = rng.uniform(size=n) < 0.3
    ef = np.clip(rng.normal(40, 12, n), 10, 70)
    nyha_idx = rng.choice(4, size=n, p=(0.15, 0.4, 0.3, 0.15))
    hypertension = rng.uniform(size=n) < 0.6
    dyslipidemia = rng.uniform(size=n) < 0.45
    diabetes = rng.uniform(size=n) < 0.3
    copd = rng.uniform(size=n) < 0.2
    beta_blocker = rng.uniform(size=n) < 0.7
    ace_sartan = rng.uniform(size=n) < 0.6
    anti_aldosterone = rng.uniform(size=n) < 0.35

    posterior_wall = np.clip(rng.normal(10.5, 1.5, n), 6, 16)
    septum = np.clip(rng.normal(11, 1.8, n), 6, 18)
    lves = np.clip(rng.normal(38, 8, n), 20, 60)
    lved = np.clip(rng.normal(54, 7, n), 35, 75)
    rv = np.clip(rng.normal(30, 5, n), 18, 45)
    lvmi = np.clip(rng.normal(115, 25, n), 60, 200)
    left_atrium = np.clip(rng.normal(40, 7, n), 25, 65)
    tapse = np.clip(rng.normal(19, 4, n), 8, 30)
    radial_strain = np.clip(rng.normal(25, 8, n), 5, 45)
    lbbb = rng.uniform(size=n) < 0.2
    rbbb = rng.uniform(size=n) < 0.1
    afib = rng.uniform(size=n) < 0.25
    flutter = rng.uniform(size=n) < 0.05
    pacemaker = rng.uniform(size=n) < 0.1
    nt_probnp = np.clip(rng.lognormal(7.0, 0.8, n), 50, 15000)
    creatinine = np.clip(rng.normal(1.1, 0.35, n), 0.4, 3.5)
    glucose = np.clip(rng.normal(110, 28, n), 60, 300)
    hb = np.clip(rng.normal(13, 1.6, n), 8, 18)

    signal_features = {
        "ef_percent": _standardize(ef),
        "nyha_ordinal": _standardize(nyha_idx.astype(float)),
        "age": _standardize(age),
        "bmi": _standardize(bmi),
        "diabetes": _standardize(diabetes.astype(float)),
        "copd": _standardize(copd.astype(float)),
        "log_nt_probnp": _standardize(np.log(nt_probnp)),
        "tapse_mm": _standardize(tapse),
        "lved_diam_mm": _standardize(lved),
        "creatinine_mg_dl": _standardize(creatinine),
        "afib": _standardize(afib.astype(float)),
        "hb_g_dl": _standardize(hb),
    }
    logits = np.zeros(n)
    for name, coefficient in RISK_COEFFICIENTS.items():
        logits += coefficient * signal_features[name]

    intercept = _calibrate_intercept(logits, prevalence)
    probabilities = 1.0 / (1.0 + np.exp(-(logits + intercept)))
    labels = rng.uniform(size=n) < probabilities

    patients: list[PatientRecord] = []
    for i in range(n):
        record = PatientRecord(
            patient_id=f"P{i + 1:04d}",
            age=round(float(age[i]), 1),
            sex=Sex.M if sex[i] else Sex.F,
            bmi=round(float(bmi[i]), 1),
            clinical=ClinicalFeatures(
                diagnosis_primary=str(diagnosis[i]),
                diagnosis_secondary=str(secondary[i]) if has_secondary[i] else None,
                hfpef=bool(hfpef[i]),
                ef_percent=round(float(ef[i]), 1),
                nyha=list(NyhaClass)[int(nyha_idx[i])],
                hypertension=bool(hypertension[i]),
                dyslipidemia=bool(dyslipidemia[i]),
                diabetes=bool(diabetes[i]),
                copd=bool(copd[i]),
                beta_blocker=bool(beta_blocker[i]),
                ace_sartan=bool(ace_sartan[i]),
                anti_aldosterone=bool(anti_aldosterone[i]),
            ),
            echo=EchoFeatures(
                posterior_wall_mm=round(float(posterior_wall[i]), 1),
                septum_mm=round(float(septum[i]), 1),
                lves_diam_mm=round(float(lves[i]), 1),
                lved_diam_mm=round(float(lved[i]), 1),
                rv_diam_mm=round(float(rv[i]), 1),
                lvmi_g_m2=round(float(lvmi[i]), 1),
                left_atrium=round(float(left_atrium[i]), 1),
                tapse_mm=round(float(tapse[i]), 1),
                radial_strain=round(float(radial_strain[i]), 1),
                lbbb=bool(lbbb[i]),
                rbbb=bool(rbbb[i]),
                afib=bool(afib[i]),
                flutter=bool(flutter[i]),
                pacemaker=bool(pacemaker[i]),
                nt_probnp_pg_ml=round(float(nt_probnp[i]), 1),
                creatinine_mg_dl=round(float(creatinine[i]), 2),
                glucose_mg_dl=round(float(glucose[i]), 1),
                hb_g_dl=round(float(hb[i]), 1),
                ef_percent=round(float(ef[i]), 1),
            ),
        )
        patients.append(record)

    truth = GroundTruth(
        coefficients=dict(RISK_COEFFICIENTS),
        intercept=float(intercept),
        prevalence_target=prevalence,
        positive_rate=float(labels.mean()),
    )
    return patients, [bool(v) for v in labels], truth


def _calibrate_intercept(logits: np.ndarray, prevalence: float) -> float:
    lo, hi = -20.0, 20.0
    for _ in range(80):
        mid = (lo + hi) / 2.0
        rate = float(np.mean(1.0 / (1.0 + np.exp(-(logits + mid)))))
        if rate < prevalence:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


# --------------------------------------------------------------------------
# Trace generation
# --------------------------------------------------------------------------


class EpisodeKind(str, Enum):
    FLUID_OVERLOAD = "FluidOverload"
    AF_BURST = "AFBurst"
    HYPERTENSIVE_SURGE = "HypertensiveSurge"
    INFECTION = "Infection"


@dataclass(frozen=True)
class EpisodeSpec:
    kind: EpisodeKind
    onset: datetime
    duration: timedelta
    magnitude: float

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "onset": format_rfc3339(self.onset),
            "duration_h": self.duration.total_seconds() / 3600.0,
            "magnitude": self.magnitude,
        }

    @staticmethod
    def from_json(data: Mapping[str, Any]) -> "EpisodeSpec":
        return EpisodeSpec(
            kind=EpisodeKind(data["kind"]),
            onset=parse_rfc3339(data["onset"]),
            duration=timedelta(hours=float(data["duration_h"])),
            magnitude=float(data["magnitude"]),
        )


DEFAULT_START = datetime(2025, 6, 1, 0, 0, 0, tzinfo=timezone.utc)

# minutes between samples, per metric
DEFAULT_CADENCE_MIN: dict[str, float] = {
    "HeartRate": 5.0,
    "SpO2": 5.0,
    "SDNN": 5.0,
    "Weight": 1440.0,
    "SystolicBP": 720.0,
    "DiastolicBP": 720.0,
    "RespRate": 30.0,
    "BodyTemp": 30.0,
    "RRIntervals": 30.0,
    "AFDeviceFlag": 30.0,
    "PM2_5": 10.0,
    "CO2": 10.0,
    "AirTemp": 10.0,
    "Humidity": 10.0,
    "Noise": 10.0,
}

# metric -> device kind the message claims to come from
DEVICE_KIND: dict[str, str] = {
    "HeartRate": "scanwatch",
    "SpO2": "scanwatch",
    "SDNN": "scanwatch",
    "BodyTemp": "scanwatch",
    "RRIntervals": "scanwatch",
    "AFDeviceFlag": "scanwatch",
    "Weight": "scale",
    "SystolicBP": "bp-monitor",
    "DiastolicBP": "bp-monitor",
    "RespRate": "resp-sensor",
    "PM2_5": "env-station",
    "CO2": "env-station",
    "AirTemp": "env-station",
    "Humidity": "env-station",
    "Noise": "env-station",
}


@dataclass(frozen=True)
class Envelope:
    mean: float
    low: float
    high: float
    sigma: float
    reversion: float = 0.2
    decimals: int = 2


# Baseline envelopes sit strictly inside the default no-flag zone.
BASELINE: dict[str, Envelope] = {
    "HeartRate": Envelope(75.0, 60.0, 92.0, 2.5),
    "SpO2": Envelope(96.5, 94.0, 99.0, 0.4),
    "SDNN": Envelope(42.0, 24.0, 70.0, 4.0),
    "Weight": Envelope(0.0, -0.4, 0.4, 0.1),  # offset around the patient's base weight
    "SystolicBP": Envelope(120.0, 100.0, 134.0, 3.0),
    "DiastolicBP": Envelope(75.0, 64.0, 86.0, 2.0),
    "RespRate": Envelope(14.0, 10.0, 18.0, 0.8),
    "BodyTemp": Envelope(36.7, 36.15, 37.35, 0.08),
    "PM2_5": Envelope(10.0, 1.0, 22.0, 2.0),
    "CO2": Envelope(700.0, 420.0, 1300.0, 60.0, decimals=0),
    "AirTemp": Envelope(22.5, 17.5, 30.5, 0.8),
    "Humidity": Envelope(48.0, 32.0, 68.0, 3.0),
    "Noise": Envelope(48.0, 36.0, 64.0, 4.0),
}

# final safety clamp: values must stay ingestible
HARD_BOUNDS: dict[str, tuple[float, float]] = {
    "HeartRate": (20.0, 250.0),
    "SpO2": (50.0, 100.0),
    "Weight": (20.0, 300.0),
    "SystolicBP": (50.0, 260.0),
    "DiastolicBP": (30.0, 160.0),
    "RespRate": (4.0, 60.0),
    "BodyTemp": (30.0, 43.0),
    "SDNN": (0.0, 300.0),
    "PM2_5": (0.0, 1000.0),
    "CO2": (0.0, 40000.0),
    "AirTemp": (-40.0, 125.0),
    "Humidity": (0.0, 100.0),
    "Noise": (0.0, 130.0),
}


@dataclass(frozen=True)
class TraceSpec:
    patient_id: str
    days: float
    seed: int
    start: datetime = DEFAULT_START
    base_weight_kg: float = 75.0
    cadence_min: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_CADENCE_MIN))
    episodes: tuple[EpisodeSpec, ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {
            "patient_id": self.patient_id,
            "days": self.days,
            "seed": self.seed,
            "start": format_rfc3339(self.start),
            "base_weight_kg": self.base_weight_kg,
            "cadence_min": dict(sorted(self.cadence_min.items())),
            "episodes": [e.to_json() for e in self.episodes],
        }

    @staticmethod
    def from_json(data: Mapping[str, Any]) -> "TraceSpec":
        return TraceSpec(
            patient_id=data["patient_id"],
            days=float(data["days"]),
            seed=int(data["seed"]),
            start=parse_rfc3339(data["start"]) if "start" in data else DEFAULT_START,
            base_weight_kg=float(data.get("base_weight_kg", 75.0)),
            cadence_min=dict(data.get("cadence_min", DEFAULT_CADENCE_MIN)),
            episodes=tuple(EpisodeSpec.from_json(e) for e in data.get("episodes", ())),
        )


def _validate_spec(spec: TraceSpec, cfg: ThresholdConfig) -> None:
    if spec.days <= 0:
        raise InvalidSpec("trace span must be positive")
    if any(c <= 0 for c in spec.cadence_min.values()):
        raise InvalidSpec("cadences must be positive")
    end = spec.start + timedelta(days=spec.days)
    for episode in spec.episodes:
        if not spec.start <= episode.onset < end:
            raise InvalidSpec(f"episode onset {episode.onset} outside trace span")
        if episode.duration <= timedelta(0):
            raise InvalidSpec("episode duration must be positive")
        required = _minimum_magnitude(episode.kind, cfg)
        if episode.magnitude <= required:
            raise InvalidSpec(
                f"{episode.kind.value} magnitude {episode.magnitude} cannot cross "
                f"its threshold (needs > {required:.3g})"
            )


def _minimum_magnitude(kind: EpisodeKind, cfg: ThresholdConfig) -> float:
    if kind is EpisodeKind.FLUID_OVERLOAD:
        return cfg.weight_gain_kg
    if kind is EpisodeKind.AF_BURST:
        return cfg.af_rr_cv_threshold
    if kind is EpisodeKind.HYPERTENSIVE_SURGE:
        return cfg.sbp_high - BASELINE["SystolicBP"].high
    return cfg.temp_high - BASELINE["BodyTemp"].high  # Infection


def _ramp(progress: float) -> float:
    """0 -> 1 over the first 40% of the episode, then hold."""
    return min(1.0, max(0.0, progress / 0.4))


def _episode_offset(metric: str, ts: datetime, episode: EpisodeSpec) -> float:
    if ts < episode.onset:
        return 0.0
    progress = (ts - episode.onset) / episode.duration
    kind, magnitude = episode.kind, episode.magnitude
    if kind is EpisodeKind.FLUID_OVERLOAD:
        if metric == "Weight":
            return magnitude * min(1.0, max(0.0, progress))  # gain persists
        if metric == "SpO2" and progress <= 1.0:
            return -6.5 * _ramp(progress)
    if progress > 1.0:
        return 0.0
    if kind is EpisodeKind.HYPERTENSIVE_SURGE:
        if metric == "SystolicBP":
            return magnitude * _ramp(progress)
        if metric == "DiastolicBP":
            return 0.5 * magnitude * _ramp(progress)
    if kind is EpisodeKind.INFECTION:
        if metric == "BodyTemp":
            return magnitude * _ramp(progress)
        if metric == "RespRate":
            return 8.0 * _ramp(progress)
    return 0.0


def _in_episode(ts: datetime, episode: EpisodeSpec) -> bool:
    return episode.onset <= ts <= episode.onset + episode.duration


def gen_trace(spec: TraceSpec, cfg: Optional[ThresholdConfig] = None) -> list[dict[str, Any]]:
    """Produce the message stream for one patient: a list of JSON-ready
    dicts ({patient_id, metric, value, unit, ts, device_kind}) sorted by
    timestamp then metric. Same spec and seed, same bytes."""
    cfg = cfg or ThresholdConfig()
    _validate_spec(spec, cfg)
    end = spec.start + timedelta(days=spec.days)
    messages: list[dict[str, Any]] = []

    af_episodes = [e for e in spec.episodes if e.kind is EpisodeKind.AF_BURST]

    for metric_index, metric in enumerate(sorted(spec.cadence_min)):
        cadence = timedelta(minutes=spec.cadence_min[metric])
        rng = np.random.default_rng([spec.seed, metric_index])
        if metric in ("RRIntervals", "AFDeviceFlag"):
            messages.extend(
                _gen_rhythm_series(spec, metric, cadence, end, rng, af_episodes)
            )
            continue
        envelope = BASELINE[metric]
        base = spec.base_weight_kg if metric == "Weight" else 0.0
        state = envelope.mean
        ts = spec.start
        while ts < end:
            state += envelope.reversion * (envelope.mean - state)
            state += float(rng.normal(0.0, envelope.sigma))
            state = min(envelope.high, max(envelope.low, state))
            value = base + state
            for episode in spec.episodes:
                value += _episode_offset(metric, ts, episode)
            lo, hi = HARD_BOUNDS[metric]
            value = min(hi, max(lo, value))
            messages.append(_message(spec.patient_id, metric, round(value, envelope.decimals), ts))
            ts += cadence

    messages.sort(key=lambda m: (m["ts"], m["metric"]))
    return messages


def _gen_rhythm_series(
    spec: TraceSpec,
    metric: str,
    cadence: timedelta,
    end: datetime,
    rng: np.random.Generator,
    af_episodes: Sequence[EpisodeSpec],
) -> list[dict[str, Any]]:
    messages = []
    ts = spec.start
    while ts < end:
        in_af = any(_in_episode(ts, e) for e in af_episodes)
        if metric == "AFDeviceFlag":
            messages.append(_message(spec.patient_id, metric, bool(in_af), ts))
        else:
            mean_rr = 60000.0 / 75.0
            if in_af:
                magnitude = max(e.magnitude for e in af_episodes if _in_episode(ts, e))
                # alternate +/- magnitude around the mean: CV == magnitude
                deltas = np.where(np.arange(30) % 2 == 0, magnitude, -magnitude)
                intervals = mean_rr * (1.0 + deltas)
            else:
                intervals = mean_rr * (1.0 + rng.normal(0.0, 0.03, size=30))
            intervals = np.clip(intervals, 250.0, 2500.0)
            messages.append(
                _message(
                    spec.patient_id, metric,
                    [round(float(v), 1) for v in intervals], ts,
                )
            )
        ts += cadence
    return messages


def _message(patient_id: str, metric: str, value: Any, ts: datetime) -> dict[str, Any]:
    unit = None
    try:
        unit = VitalMetric(metric).unit
    except ValueError:
        unit = EnvMetric(metric).unit
    return {
        "patient_id": patient_id,
        "metric": metric,
        "value": value,
        "unit": unit,
        "ts": format_rfc3339(ts),
        "device_kind": DEVICE_KIND[metric],
    }


def trace_bytes(messages: Sequence[Mapping[str, Any]]) -> bytes:
    """Canonical serialization of a stream, for determinism checks and
    offline files."""
    lines = [json.dumps(m, sort_keys=True, separators=(",", ":")) for m in messages]
    return ("\n".join(lines) + "\n").encode("utf-8")


# --------------------------------------------------------------------------
# Replay
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplayReport:
    sent: int
    acked: int
    rejected: tuple[tuple[int, str], ...]  # (message index, error code)
    wall_clock_s: float
    throughput_per_s: float

    def to_json(self) -> dict[str, Any]:
        return {
            "sent": self.sent,
            "acked": self.acked,
            "rejected": [{"index": i, "error": code} for i, code in self.rejected],
            "wall_clock_s": self.wall_clock_s,
            "throughput_per_s": self.throughput_per_s,
        }


Credentials = Mapping[tuple[str, str], tuple[str, str]]  # (patient, kind) -> (device_id, token)


def register_trace_devices(
    registry_register, stream: Sequence[Mapping[str, Any]]
) -> dict[tuple[str, str], tuple[str, str]]:
    """Register one device per (patient, kind) present in the stream.
    ``registry_register`` is any callable (kind, patient_id) -> (id, token).
    """
    credentials: dict[tuple[str, str], tuple[str, str]] = {}
    for message in stream:
        key = (message["patient_id"], message["device_kind"])
        if key not in credentials:
            credentials[key] = registry_register(message["device_kind"], message["patient_id"])
    return credentials


def replay(
    stream: Sequence[Mapping[str, Any]],
    gateway: IngestGateway,
    credentials: Credentials,
    speed: Optional[float] = None,
    partitions: int = 1,
) -> ReplayReport:
    """Deliver a stream through the pub/sub channel. ``speed`` is a
    real-time multiplier; None replays at maximum speed.

    The default single partition preserves global timestamp order, the way
    live devices deliver; rule evaluations then see a consistent cross-
    stream prefix. More partitions trade that alignment for throughput
    (per-stream order is kept either way).
    """
    if speed is not None and speed <= 0:
        raise InvalidSpec("speed multiplier must be positive")
    started = time.monotonic()
    futures = []
    previous_ts: Optional[datetime] = None
    with PubSubChannel(gateway, partitions=partitions) as channel:
        for message in stream:
            ts = parse_rfc3339(message["ts"])
            if speed is not None and previous_ts is not None and ts > previous_ts:
                time.sleep((ts - previous_ts).total_seconds() / speed)
            previous_ts = ts
            key = (message["patient_id"], message["device_kind"])
            device_id, token = credentials[key]
            payload = dict(message)
            payload.pop("device_kind")
            payload["device_id"] = device_id
            payload["token"] = token
            futures.append(
                channel.publish(
                    topic_for(message["patient_id"], message["metric"]),
                    json.dumps(payload),
                )
            )
        rejected: list[tuple[int, str]] = []
        acked = 0
        for index, future in enumerate(futures):
            try:
                future.result()
                acked += 1
            except GatewayError as exc:
                rejected.append((index, exc.code))
            except Exception as exc:  # unexpected: still itemized, not dropped
                rejected.append((index, f"internal: {exc}"))
    elapsed = max(time.monotonic() - started, 1e-9)
    return ReplayReport(
        sent=len(stream),
        acked=acked,
        rejected=tuple(rejected),
        wall_clock_s=elapsed,
        throughput_per_s=len(stream) / elapsed,
    )


# --------------------------------------------------------------------------
# Spec/cohort files
# --------------------------------------------------------------------------


def write_cohort(
    path: Union[str, Path],
    patients: Sequence[PatientRecord],
    labels: Sequence[bool],
    truth: GroundTruth,
    seed: int,
    prevalence: float,
) -> None:
    from .model import patient_to_json

    document = {
        "seed": seed,
        "prevalence": prevalence,
        "ground_truth": truth.to_json(),
        "patients": [
            {**patient_to_json(p), "label": bool(label)}
            for p, label in zip(patients, labels)
        ],
    }
    Path(path).write_text(
        json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_cohort(path: Union[str, Path]) -> tuple[list[PatientRecord], list[bool], dict]:
    from .model import patient_from_json

    document = json.loads(Path(path).read_text(encoding="utf-8"))
    patients = []
    labels = []
    for entry in document["patients"]:
        label = entry.pop("label", None)
        patients.append(patient_from_json(entry))
        labels.append(bool(label))
    return patients, labels, document.get("ground_truth", {})
