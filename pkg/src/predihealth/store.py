"""Append-only per-(patient, metric) time series with window queries and
trend deltas.

On-disk layout is one JSON-lines file per series, ``<root>/<patient_id>/
<metric>.jsonl``, with one canonical-JSON sample per line. An in-memory
index mirrors each file, so reads never touch disk after open. Volumes are
desk-scale; there is no compaction or downsampling.
"""

from __future__ import annotations

import bisect
import json
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import IO, Optional, Union

from .model import (
    EnvMetric,
    EnvSample,
    SampleValue,
    VitalMetric,
    VitalSample,
    check_identifier,
    env_to_json,
    format_rfc3339,
    metric_from_key,
    parse_rfc3339,
    vital_to_json,
    _value_from_json,
)


class StoreError(Exception):
    code = "store_error"


class TimestampRegression(StoreError):
    code = "timestamp_regression"


class StorageFailure(StoreError):
    code = "storage_failure"


@dataclass(frozen=True)
class SeriesKey:
    patient_id: str
    metric: str

    def __post_init__(self) -> None:
        check_identifier(self.patient_id, "patient_id")
        metric_from_key(self.metric)  # raises UnknownMetric

    @staticmethod
    def of(patient_id: str, metric: Union[VitalMetric, EnvMetric, str]) -> "SeriesKey":
        key = metric.value if isinstance(metric, (VitalMetric, EnvMetric)) else metric
        return SeriesKey(patient_id, key)


@dataclass(frozen=True)
class SeriesPoint:
    timestamp: datetime
    value: SampleValue
    seq: int


@dataclass(frozen=True)
class SeriesSegment:
    key: SeriesKey
    points: tuple[SeriesPoint, ...]

    @property
    def min_timestamp(self) -> Optional[datetime]:
        return self.points[0].timestamp if self.points else None

    @property
    def max_timestamp(self) -> Optional[datetime]:
        return self.points[-1].timestamp if self.points else None

    def values(self) -> list[float]:
        return [float(p.value) for p in self.points]  # type: ignore[arg-type]


class _Series:
    __slots__ = ("points", "stamps", "lock", "handle")

    def __init__(self) -> None:
        self.points: list[SeriesPoint] = []
        self.stamps: list[datetime] = []  # parallel array for bisect
        self.lock = threading.Lock()
        self.handle: Optional[IO[str]] = None


class SeriesStore:
    """One writer per series at a time (the gateway serializes per stream);
    readers take a consistent snapshot under the series lock."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._series: dict[SeriesKey, _Series] = {}
        self._registry_lock = threading.Lock()
        self._load_existing()

    # -- lifecycle ---------------------------------------------------------

    def _load_existing(self) -> None:
        for patient_dir in sorted(self.root.iterdir()):
            if not patient_dir.is_dir():
                continue
            for path in sorted(patient_dir.glob("*.jsonl")):
                key = SeriesKey(patient_dir.name, path.stem)
                series = self._get_series(key)
                with path.open("r", encoding="utf-8") as fh:
                    for line in fh:
                        line = line.strip()
                        if not line:
                            continue
                        row = json.loads(line)
                        point = SeriesPoint(
                            timestamp=parse_rfc3339(row["timestamp"]),
                            value=_value_from_json(row["value"]),
                            seq=int(row["seq"]),
                        )
                        series.points.append(point)
                        series.stamps.append(point.timestamp)

    def close(self) -> None:
        with self._registry_lock:
            for series in self._series.values():
                with series.lock:
                    if series.handle is not None:
                        series.handle.close()
                        series.handle = None

    def __enter__(self) -> "SeriesStore":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def _get_series(self, key: SeriesKey) -> _Series:
        with self._registry_lock:
            series = self._series.get(key)
            if series is None:
                series = _Series()
                self._series[key] = series
            return series

    def _path(self, key: SeriesKey) -> Path:
        return self.root / key.patient_id / f"{key.metric}.jsonl"

    # -- operations --------------------------------------------------------

    def append(self, key: SeriesKey, sample: Union[VitalSample, EnvSample]) -> int:
        """Append a validated sample; returns the assigned seq.

        Timestamps must be non-decreasing per series (equal timestamps are
        allowed and kept in arrival order). The line is flushed before the
        seq is returned.
        """
        series = self._get_series(key)
        with series.lock:
            if series.points and sample.timestamp < series.points[-1].timestamp:
                raise TimestampRegression(
                    f"{key.patient_id}/{key.metric}: "
                    f"{format_rfc3339(sample.timestamp)} precedes stored "
                    f"{format_rfc3339(series.points[-1].timestamp)}"
                )
            seq = series.points[-1].seq + 1 if series.points else 1
            if isinstance(sample, VitalSample):
                row = vital_to_json(sample)
            else:
                row = env_to_json(sample)
            row["seq"] = seq
            try:
                if series.handle is None:
                    path = self._path(key)
                    path.parent.mkdir(parents=True, exist_ok=True)
                    series.handle = path.open("a", encoding="utf-8")
                series.handle.write(json.dumps(row, separators=(",", ":")) + "\n")
                series.handle.flush()
            except OSError as exc:
                raise StorageFailure(f"append failed for {key}: {exc}") from exc
            series.points.append(SeriesPoint(sample.timestamp, sample.value, seq))
            series.stamps.append(sample.timestamp)
            return seq

    def query_window(self, key: SeriesKey, t0: datetime, t1: datetime) -> SeriesSegment:
        """Samples with ``t0 <= timestamp <= t1`` (inclusive both ends), in seq order."""
        if t0 > t1:
            raise ValueError("window start must not exceed window end")
        series = self._series.get(key)
        if series is None:
            return SeriesSegment(key, ())
        with series.lock:
            lo = bisect.bisect_left(series.stamps, t0)
            hi = bisect.bisect_right(series.stamps, t1)
            snapshot = tuple(series.points[lo:hi])
        return SeriesSegment(key, snapshot)

    def tail(self, key: SeriesKey, count: int, as_of: Optional[datetime] = None) -> SeriesSegment:
        """The last ``count`` samples by seq order, optionally only those
        with timestamp <= as_of."""
        series = self._series.get(key)
        if series is None:
            return SeriesSegment(key, ())
        with series.lock:
            hi = len(series.points)
            if as_of is not None:
                hi = bisect.bisect_right(series.stamps, as_of)
            lo = max(0, hi - count) if count > 0 else hi
            snapshot = tuple(series.points[lo:hi])
        return SeriesSegment(key, snapshot)

    def latest(self, key: SeriesKey, as_of: Optional[datetime] = None) -> Optional[SeriesPoint]:
        """Maximum-seq sample, or with ``as_of`` the last sample at or before
        that instant (evaluation must never look into another stream's
        future during fast replay)."""
        series = self._series.get(key)
        if series is None:
            return None
        with series.lock:
            if not series.points:
                return None
            if as_of is None:
                return series.points[-1]
            hi = bisect.bisect_right(series.stamps, as_of)
            return series.points[hi - 1] if hi > 0 else None

    def delta_over(self, key: SeriesKey, duration: timedelta) -> Optional[float]:
        """Latest value minus the minimum observed in the trailing window.

        The delta anchors on the window minimum rather than the oldest
        sample, so a ramp that starts mid-window is still caught. Returns
        None with fewer than two samples in the window; never negative.
        """
        if duration <= timedelta(0):
            raise ValueError("duration must be positive")
        last = self.latest(key)
        if last is None:
            return None
        window = self.query_window(key, last.timestamp - duration, last.timestamp)
        if len(window.points) < 2:
            return None
        values = window.values()
        return float(values[-1]) - min(values)

    def keys(self) -> list[SeriesKey]:
        with self._registry_lock:
            return sorted(self._series, key=lambda k: (k.patient_id, k.metric))

    def patient_keys(self, patient_id: str) -> list[SeriesKey]:
        return [k for k in self.keys() if k.patient_id == patient_id]

    def has_patient(self, patient_id: str) -> bool:
        return any(k.patient_id == patient_id for k in self.keys())
