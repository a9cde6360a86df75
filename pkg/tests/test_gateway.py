from __future__ import annotations

import json
import threading
import time
from datetime import datetime, timedelta, timezone

import pytest

from predihealth.gateway import (
    Ack,
    AuthFailed,
    BadTimestamp,
    DeviceRegistry,
    DuplicateBinding,
    IngestGateway,
    MalformedJson,
    MissingField,
    PatientNotEnrolled,
    ValidationFailed,
    parse_message,
)
from predihealth.model import (
    Enrollment,
    PatientRecord,
    Sex,
    VitalMetric,
)
from predihealth.pubsub import BadTopic, PubSubChannel, parse_topic, topic_for
from predihealth.store import SeriesKey, SeriesStore

T0 = datetime(2025, 3, 1, 10, 0, 0, tzinfo=timezone.utc)


def make_patient(pid: str, enrollment=Enrollment.ENROLLED) -> PatientRecord:
    return PatientRecord(patient_id=pid, age=70.0, sex=Sex.M, bmi=26.0, enrollment=enrollment)


@pytest.fixture()
def world(tmp_path):
    patients = {
        "P1": make_patient("P1"),
        "P2": make_patient("P2", Enrollment.CANDIDATE),
    }
    registry = DeviceRegistry(patients.get)
    store = SeriesStore(tmp_path)
    delivered = []
    gateway = IngestGateway(registry, store, patients.get, on_sample=delivered.append)
    device_id, token = registry.register_device("scanwatch", "P1")
    yield dict(
        patients=patients, registry=registry, store=store, gateway=gateway,
        device_id=device_id, token=token, delivered=delivered,
    )
    store.close()


def message(world, metric="SpO2", value=96.0, unit="%", ts=T0, **overrides):
    data = {
        "device_id": world["device_id"],
        "patient_id": "P1",
        "metric": metric,
        "value": value,
        "unit": unit,
        "ts": ts if isinstance(ts, str) else ts.strftime("%Y-%m-%dT%H:%M:%SZ"),
        "token": world["token"],
    }
    data.update(overrides)
    return data


class TestRegistry:
    def test_register_for_enrolled_patient(self, world):
        device_id, token = world["registry"].register_device("scale", "P1")
        assert device_id.startswith("D-") and len(token) == 32
        record = world["registry"].authenticate(device_id, token)
        assert record.patient_id == "P1" and record.active

    def test_candidate_patient_rejected(self, world):
        with pytest.raises(PatientNotEnrolled):
            world["registry"].register_device("scale", "P2")

    def test_duplicate_binding_rejected(self, world):
        with pytest.raises(DuplicateBinding):
            world["registry"].register_device("scanwatch", "P1")

    def test_rebinding_after_deactivation(self, world):
        world["registry"].deactivate_device(world["device_id"])
        device_id, _ = world["registry"].register_device("scanwatch", "P1")
        assert device_id != world["device_id"]

    def test_replace_swaps_the_binding(self, world):
        new_id, new_token = world["registry"].register_device(
            "scanwatch", "P1", replace=True
        )
        assert new_id != world["device_id"]
        # old credential is dead, new one works
        with pytest.raises(AuthFailed):
            world["registry"].authenticate(world["device_id"], world["token"])
        assert world["registry"].authenticate(new_id, new_token).active

    def test_bad_token_rejected(self, world):
        with pytest.raises(AuthFailed):
            world["registry"].authenticate(world["device_id"], "f" * 32)

    def test_inactive_device_rejected(self, world):
        world["registry"].deactivate_device(world["device_id"])
        with pytest.raises(AuthFailed):
            world["registry"].authenticate(world["device_id"], world["token"])


class TestParseMessage:
    def test_valid_line(self, world):
        msg = parse_message(json.dumps(message(world)).encode())
        assert msg.metric == "SpO2" and msg.value == 96.0 and msg.ts == T0

    def test_missing_ts(self, world):
        data = message(world)
        del data["ts"]
        with pytest.raises(MissingField) as err:
            parse_message(json.dumps(data))
        assert err.value.name == "ts"

    def test_truncated_bytes(self):
        with pytest.raises(MalformedJson):
            parse_message(b'{"device_id": "D-0')

    def test_bad_timestamp(self, world):
        with pytest.raises(BadTimestamp):
            parse_message(json.dumps(message(world, ts="not-a-time")))

    def test_non_object(self):
        with pytest.raises(MalformedJson):
            parse_message(b"[1, 2, 3]")

    def test_value_shapes(self, world):
        listed = parse_message(json.dumps(message(world, metric="RRIntervals",
                                                  value=[800, 805], unit="ms")))
        assert listed.value == (800.0, 805.0)
        flagged = parse_message(json.dumps(message(world, metric="AFDeviceFlag",
                                                   value=True, unit="boolean")))
        assert flagged.value is True
        with pytest.raises(MalformedJson):
            parse_message(json.dumps(message(world, value="high")))


class TestIngest:
    def test_accepted_sample_is_stored_and_delivered(self, world):
        ack = world["gateway"].ingest_raw(json.dumps(message(world, value=89.0)))
        assert ack == Ack(seq=1)
        key = SeriesKey.of("P1", VitalMetric.SPO2)
        assert world["store"].latest(key).value == 89.0
        assert len(world["delivered"]) == 1
        assert world["delivered"][0].seq == 1

    def test_stale_credential(self, world):
        with pytest.raises(AuthFailed):
            world["gateway"].ingest_raw(json.dumps(message(world, token="0" * 32)))

    def test_out_of_range_value(self, world):
        with pytest.raises(ValidationFailed) as err:
            world["gateway"].ingest_raw(json.dumps(message(world, metric="HeartRate",
                                                           value=999.0, unit="bpm")))
        assert "out_of_range" in str(err.value)

    def test_unknown_metric(self, world):
        with pytest.raises(ValidationFailed):
            world["gateway"].ingest_raw(json.dumps(message(world, metric="BloodType",
                                                           unit="x")))

    def test_unit_mismatch(self, world):
        with pytest.raises(ValidationFailed) as err:
            world["gateway"].ingest_raw(json.dumps(message(world, unit="kg")))
        assert "canonical" in str(err.value)

    def test_device_bound_to_other_patient(self, world):
        with pytest.raises(AuthFailed):
            world["gateway"].ingest_raw(json.dumps(message(world, patient_id="P2")))

    def test_duplicate_returns_same_seq_without_reappend(self, world):
        raw = json.dumps(message(world))
        first = world["gateway"].ingest_raw(raw)
        second = world["gateway"].ingest_raw(raw)
        assert first.seq == second.seq == 1
        assert second.duplicate
        key = SeriesKey.of("P1", VitalMetric.SPO2)
        assert len(world["store"].query_window(
            key, T0 - timedelta(days=1), T0 + timedelta(days=1)).points) == 1
        assert len(world["delivered"]) == 1  # rule delivery exactly once

    def test_order_per_stream_equals_arrival_order(self, world):
        values = [95.0, 94.0, 96.0, 93.0]
        for i, v in enumerate(values):
            world["gateway"].ingest_raw(
                json.dumps(message(world, value=v, ts=T0 + timedelta(minutes=i)))
            )
        key = SeriesKey.of("P1", VitalMetric.SPO2)
        seg = world["store"].query_window(key, T0, T0 + timedelta(hours=1))
        assert [p.value for p in seg.points] == values
        assert [p.seq for p in seg.points] == [1, 2, 3, 4]

    def test_timestamp_regression_rejected(self, world):
        world["gateway"].ingest_raw(json.dumps(message(world)))
        with pytest.raises(ValidationFailed) as err:
            world["gateway"].ingest_raw(
                json.dumps(message(world, ts=T0 - timedelta(minutes=5)))
            )
        assert "timestamp_regression" in str(err.value)


class TestPubSub:
    def test_topic_round_trip(self):
        topic = topic_for("P1", "SpO2")
        assert topic == "predihealth/P1/SpO2"
        assert parse_topic(topic) == ("P1", "SpO2")
        with pytest.raises(BadTopic):
            parse_topic("other/P1/SpO2")
        with pytest.raises(BadTopic):
            parse_topic("predihealth/P1")

    def test_publish_resolves_to_ack(self, world):
        with PubSubChannel(world["gateway"]) as channel:
            future = channel.publish(
                topic_for("P1", "SpO2"), json.dumps(message(world)).encode()
            )
            assert future.result(timeout=5) == Ack(seq=1)

    def test_topic_payload_mismatch_rejected(self, world):
        with PubSubChannel(world["gateway"]) as channel:
            future = channel.publish(
                topic_for("P1", "HeartRate"), json.dumps(message(world)).encode()
            )
            with pytest.raises(ValidationFailed):
                future.result(timeout=5)

    def test_per_stream_order_preserved(self, world):
        with PubSubChannel(world["gateway"], partitions=4) as channel:
            futures = [
                channel.publish(
                    topic_for("P1", "SpO2"),
                    json.dumps(message(world, value=80.0 + i,
                                       ts=T0 + timedelta(seconds=i))).encode(),
                )
                for i in range(20)
            ]
            seqs = [f.result(timeout=5).seq for f in futures]
        assert seqs == list(range(1, 21))
        key = SeriesKey.of("P1", VitalMetric.SPO2)
        seg = world["store"].query_window(key, T0, T0 + timedelta(hours=1))
        assert [p.value for p in seg.points] == [80.0 + i for i in range(20)]

    def test_backpressure_no_loss_with_tiny_queue(self, world):
        slow_until = time.monotonic() + 0.15

        def slow_sample(sample):
            while time.monotonic() < slow_until:
                time.sleep(0.005)
            world["delivered"].append(sample)

        world["gateway"]._on_sample = slow_sample
        with PubSubChannel(world["gateway"], partitions=1, queue_size=2) as channel:
            futures = []

            def producer():
                for i in range(12):
                    futures.append(
                        channel.publish(
                            topic_for("P1", "SpO2"),
                            json.dumps(message(world, value=95.0,
                                               ts=T0 + timedelta(seconds=i))).encode(),
                        )
                    )

            thread = threading.Thread(target=producer)
            thread.start()
            thread.join(timeout=30)
            assert not thread.is_alive()
            seqs = sorted(f.result(timeout=30).seq for f in futures)
        assert seqs == list(range(1, 13))  # delayed, never dropped
        assert len(world["delivered"]) == 12
