from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone

import pytest

from predihealth.fhir import (
    CODE_MAP,
    UnknownPatient,
    UnmappedMetric,
    export_bundle,
    to_observation,
    validate_bundle,
    validate_resource,
)
from predihealth.model import (
    EnvMetric,
    EnvSample,
    VITAL_BOUNDS,
    VitalMetric,
    VitalSample,
    validate_env,
    validate_vital,
)
from predihealth.store import SeriesKey, SeriesStore

T0 = datetime(2025, 3, 1, 9, 0, 0, tzinfo=timezone.utc)


class TestToObservation:
    def test_heart_rate_maps_to_loinc_8867_4(self):
        obs = to_observation(VitalSample("P1", "D1", VitalMetric.HEART_RATE, 72.0, T0, 1))
        coding = obs["code"]["coding"][0]
        assert coding["system"] == "http://loinc.org"
        assert coding["code"] == "8867-4"
        assert obs["valueQuantity"]["value"] == 72.0
        assert obs["valueQuantity"]["unit"] == "beats/min"
        assert obs["effectiveDateTime"] == "2025-03-01T09:00:00Z"
        assert obs["subject"]["reference"] == "Patient/P1"

    def test_spo2_maps_to_loinc_59408_5(self):
        obs = to_observation(VitalSample("P1", "D1", VitalMetric.SPO2, 97.0, T0, 1))
        assert obs["code"]["coding"][0]["code"] == "59408-5"
        assert obs["valueQuantity"]["unit"] == "%"

    def test_motion_is_unmapped(self):
        with pytest.raises(UnmappedMetric):
            to_observation(EnvSample("P1", "S1", EnvMetric.MOTION, True, T0, 1))

    def test_rr_interval_list_is_unmapped(self):
        with pytest.raises(UnmappedMetric):
            to_observation(
                VitalSample("P1", "D1", VitalMetric.RR_INTERVALS, (800.0, 805.0), T0, 1)
            )

    def test_env_metric_uses_project_system(self):
        obs = to_observation(EnvSample("P1", "S1", EnvMetric.PM2_5, 14.5, T0, 1))
        assert obs["code"]["coding"][0]["system"] == "urn:predihealth:metric"
        assert obs["valueQuantity"]["value"] == 14.5

    def test_output_is_self_valid(self):
        obs = to_observation(VitalSample("P1", "D1", VitalMetric.WEIGHT, 71.2, T0, 1))
        assert validate_resource(obs) == []

    def test_round_trip_field_exact(self):
        obs = to_observation(VitalSample("P1", "D1", VitalMetric.BODY_TEMP, 36.85, T0, 1))
        assert json.loads(json.dumps(obs)) == obs


class TestValidateResource:
    def base(self) -> dict:
        return to_observation(VitalSample("P1", "D1", VitalMetric.HEART_RATE, 70.0, T0, 1))

    def test_missing_subject(self):
        obs = self.base()
        del obs["subject"]
        assert any("subject" in e for e in validate_resource(obs))

    def test_unit_mismatch_detected(self):
        obs = self.base()
        obs["valueQuantity"]["unit"] = "kg"
        assert any("does not match canonical" in e for e in validate_resource(obs))

    def test_bad_timestamp(self):
        obs = self.base()
        obs["effectiveDateTime"] = "last tuesday"
        assert any("RFC 3339" in e for e in validate_resource(obs))

    def test_bad_code_system(self):
        obs = self.base()
        obs["code"]["coding"][0]["system"] = "loinc"
        assert any("URI" in e for e in validate_resource(obs))

    def test_boolean_value_rejected(self):
        obs = self.base()
        obs["valueQuantity"]["value"] = True
        assert any("numeric" in e for e in validate_resource(obs))

    def test_total_on_garbage(self):
        assert validate_resource({}) != []
        assert validate_resource({"resourceType": "Bundle"}) != []


class TestExportBundle:
    @pytest.fixture()
    def store(self, tmp_path):
        with SeriesStore(tmp_path) as s:
            key = SeriesKey.of("P1", VitalMetric.HEART_RATE)
            for i in range(3):
                s.append(
                    key,
                    VitalSample("P1", "D1", VitalMetric.HEART_RATE, 70.0 + i,
                                T0 + timedelta(minutes=5 * i)),
                )
            yield s

    def test_three_samples_three_entries(self, store):
        bundle = export_bundle(store, "P1", T0, T0 + timedelta(hours=1))
        assert bundle["resourceType"] == "Bundle"
        assert bundle["type"] == "collection"
        assert len(bundle["entry"]) == 3
        assert validate_bundle(bundle) == []

    def test_empty_window(self, store):
        bundle = export_bundle(store, "P1", T0 - timedelta(days=2), T0 - timedelta(days=1))
        assert bundle["entry"] == [] and bundle["total"] == 0

    def test_unmappable_samples_excluded(self, store):
        store.append(
            SeriesKey.of("P1", VitalMetric.AF_DEVICE_FLAG),
            VitalSample("P1", "D1", VitalMetric.AF_DEVICE_FLAG, False, T0),
        )
        bundle = export_bundle(store, "P1", T0, T0 + timedelta(hours=1))
        assert len(bundle["entry"]) == 3  # AF flag not exported

    def test_unknown_patient(self, store):
        with pytest.raises(UnknownPatient):
            export_bundle(store, "P9", T0, T0 + timedelta(hours=1))

    def test_entries_ordered_by_timestamp(self, store):
        store.append(
            SeriesKey.of("P1", VitalMetric.WEIGHT),
            VitalSample("P1", "D2", VitalMetric.WEIGHT, 70.0, T0 + timedelta(minutes=2)),
        )
        bundle = export_bundle(store, "P1", T0, T0 + timedelta(hours=1))
        stamps = [e["resource"]["effectiveDateTime"] for e in bundle["entry"]]
        assert stamps == sorted(stamps)


def test_closed_loop_over_randomized_samples(tmp_path):
    """Every exported Observation passes validation for random in-range data."""
    import random

    rng = random.Random(42)
    scalar_vitals = [m for m in VitalMetric if m in CODE_MAP]
    with SeriesStore(tmp_path) as store:
        for i in range(200):
            metric = rng.choice(scalar_vitals)
            lo, hi = VITAL_BOUNDS[metric]
            sample = VitalSample(
                "P1", "D1", metric, round(rng.uniform(lo, hi), 2),
                T0 + timedelta(seconds=30 * i),
            )
            validate_vital(sample)
            store.append(SeriesKey.of("P1", metric), sample)
        env_metrics = [m for m in EnvMetric if m in CODE_MAP]
        for i in range(100):
            metric = rng.choice(env_metrics)
            sample = EnvSample(
                "P1", "S1", metric, round(rng.uniform(0, 90), 2),
                T0 + timedelta(seconds=60 * i),
            )
            validate_env(sample)
            store.append(SeriesKey.of("P1", metric), sample)
        bundle = export_bundle(store, "P1", T0 - timedelta(days=1), T0 + timedelta(days=1))
        assert len(bundle["entry"]) == 300
        assert validate_bundle(bundle) == []
        for entry in bundle["entry"]:
            assert validate_resource(entry["resource"]) == []
            # serialize/parse round-trip is field-exact
            resource = entry["resource"]
            assert json.loads(json.dumps(resource)) == resource
