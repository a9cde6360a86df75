from __future__ import annotations

import itertools
import math
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given
from hypothesis import strategies as st

from predihealth.model import LocationMode, VitalMetric
from predihealth.rules import (
    AlertState,
    AlertStore,
    BadAlertState,
    AlertNotFound,
    ENV_FLAGS,
    FlagKind,
    InsufficientData,
    MultimarkerScore,
    NotifyTarget,
    RiskFlag,
    Severity,
    ThresholdConfig,
    detect_af,
    eval_hrv_persistence,
    eval_point_thresholds,
    eval_weight_trend,
    multimarker_score,
    rr_interval_cv,
)
from predihealth.store import SeriesKey, SeriesPoint, SeriesSegment

CFG = ThresholdConfig()
T0 = datetime(2025, 3, 1, 8, 0, 0, tzinfo=timezone.utc)


def segment(metric: VitalMetric, pairs) -> SeriesSegment:
    points = tuple(
        SeriesPoint(T0 + offset, value, seq + 1)
        for seq, (offset, value) in enumerate(pairs)
    )
    return SeriesSegment(SeriesKey.of("P1", metric), points)


def kinds(flags) -> set[FlagKind]:
    return {f.kind for f in flags}


class TestPointThresholds:
    def test_low_spo2(self):
        flags = eval_point_thresholds({VitalMetric.SPO2: 89.0}, CFG, T0)
        assert kinds(flags) == {FlagKind.LOW_SPO2}

    def test_spo2_boundary_is_strict(self):
        assert eval_point_thresholds({VitalMetric.SPO2: 92.0}, CFG, T0) == set()

    def test_tachycardia_and_high_sbp_together(self):
        flags = eval_point_thresholds(
            {VitalMetric.HEART_RATE: 105.0, VitalMetric.SYSTOLIC_BP: 150.0}, CFG, T0
        )
        assert kinds(flags) == {FlagKind.TACHYCARDIA, FlagKind.HIGH_SBP}

    def test_missing_metrics_cannot_fire(self):
        assert eval_point_thresholds({}, CFG, T0) == set()

    def test_evidence_carries_triggering_value(self):
        (flag,) = eval_point_thresholds({VitalMetric.SPO2: 88.0}, CFG, T0)
        assert ("SpO2", 88.0) in flag.evidence


# value -> expected flag, on the strict side of each scalar threshold
BOUNDARY_CASES = [
    (VitalMetric.SPO2, CFG.spo2_low, "below", FlagKind.LOW_SPO2),
    (VitalMetric.HEART_RATE, CFG.hr_high, "above", FlagKind.TACHYCARDIA),
    (VitalMetric.HEART_RATE, CFG.hr_low, "below", FlagKind.BRADYCARDIA),
    (VitalMetric.SYSTOLIC_BP, CFG.sbp_high, "above", FlagKind.HIGH_SBP),
    (VitalMetric.SYSTOLIC_BP, CFG.sbp_low, "below", FlagKind.LOW_SBP),
    (VitalMetric.DIASTOLIC_BP, CFG.dbp_high, "above", FlagKind.HIGH_DBP),
    (VitalMetric.DIASTOLIC_BP, CFG.dbp_low, "below", FlagKind.LOW_DBP),
    (VitalMetric.RESP_RATE, CFG.rr_high, "above", FlagKind.HIGH_RESP_RATE),
    (VitalMetric.BODY_TEMP, CFG.temp_high, "above", FlagKind.FEVER),
    (VitalMetric.BODY_TEMP, CFG.temp_low, "below", FlagKind.HYPOTHERMIA),
]


@pytest.mark.parametrize("metric,threshold,side,flag", BOUNDARY_CASES)
def test_point_threshold_boundaries_fire_only_on_strict_side(metric, threshold, side, flag):
    eps_up = math.nextafter(threshold, math.inf)
    eps_down = math.nextafter(threshold, -math.inf)
    at_threshold = eval_point_thresholds({metric: threshold}, CFG, T0)
    assert flag not in kinds(at_threshold)
    fired = eval_point_thresholds(
        {metric: eps_up if side == "above" else eps_down}, CFG, T0
    )
    assert flag in kinds(fired)
    quiet = eval_point_thresholds(
        {metric: eps_down if side == "above" else eps_up}, CFG, T0
    )
    assert flag not in kinds(quiet)


class TestWeightTrend:
    def test_gain_above_2kg_fires(self):
        seg = segment(
            VitalMetric.WEIGHT,
            [(timedelta(0), 70.0), (timedelta(days=2), 71.0), (timedelta(days=3), 72.5)],
        )
        flag = eval_weight_trend(seg, CFG)
        assert flag is not None and flag.kind is FlagKind.WEIGHT_GAIN
        assert ("gain_kg", 2.5) in flag.evidence

    def test_exactly_2kg_does_not_fire(self):
        seg = segment(
            VitalMetric.WEIGHT, [(timedelta(0), 70.0), (timedelta(days=3), 72.0)]
        )
        assert eval_weight_trend(seg, CFG) is None

    def test_single_sample_no_flag(self):
        seg = segment(VitalMetric.WEIGHT, [(timedelta(0), 70.0)])
        assert eval_weight_trend(seg, CFG) is None

    def test_window_min_anchoring_catches_mid_window_ramp(self):
        seg = segment(
            VitalMetric.WEIGHT,
            [(timedelta(0), 73.0), (timedelta(days=1), 70.5), (timedelta(days=3), 73.0)],
        )
        flag = eval_weight_trend(seg, CFG)
        assert flag is not None  # 73.0 - 70.5 > 2 even though net change is 0


class TestHrvPersistence:
    def test_three_consecutive_low_fires(self):
        seg = segment(
            VitalMetric.SDNN,
            [(timedelta(minutes=5 * i), v) for i, v in enumerate([18.0, 17.0, 19.0])],
        )
        flag = eval_hrv_persistence(seg, CFG)
        assert flag is not None and flag.kind is FlagKind.LOW_HRV_PERSISTENT

    def test_broken_run_does_not_fire(self):
        seg = segment(
            VitalMetric.SDNN,
            [(timedelta(minutes=5 * i), v) for i, v in enumerate([18.0, 25.0, 19.0])],
        )
        assert eval_hrv_persistence(seg, CFG) is None

    def test_short_run_does_not_fire(self):
        seg = segment(
            VitalMetric.SDNN,
            [(timedelta(minutes=5 * i), v) for i, v in enumerate([19.0, 19.0])],
        )
        assert eval_hrv_persistence(seg, CFG) is None

    def test_boundary_is_strict(self):
        exactly = segment(
            VitalMetric.SDNN,
            [(timedelta(minutes=5 * i), CFG.sdnn_low) for i in range(3)],
        )
        assert eval_hrv_persistence(exactly, CFG) is None
        just_below = math.nextafter(CFG.sdnn_low, -math.inf)
        below = segment(
            VitalMetric.SDNN,
            [(timedelta(minutes=5 * i), just_below) for i in range(3)],
        )
        assert eval_hrv_persistence(below, CFG) is not None


class TestAfDetection:
    def test_device_flag_wins(self):
        flag = detect_af(None, True, CFG, T0)
        assert flag is not None and flag.kind is FlagKind.ATRIAL_FIBRILLATION

    def test_regular_rr_no_flag(self):
        assert detect_af([800.0] * 20, False, CFG, T0) is None

    def test_alternating_rr_fires(self):
        # mean 850 ms, population sigma 250 ms, CV = 250/850 ~ 0.294
        intervals = [600.0, 1100.0] * 10
        assert rr_interval_cv(intervals) == pytest.approx(250.0 / 850.0)
        flag = detect_af(intervals, False, CFG, T0)
        assert flag is not None and flag.kind is FlagKind.ATRIAL_FIBRILLATION

    def test_insufficient_data(self):
        with pytest.raises(InsufficientData):
            detect_af([800.0] * 9, None, CFG, T0)
        with pytest.raises(InsufficientData):
            detect_af(None, None, CFG, T0)
        # a definite device "no" needs no intervals
        assert detect_af([800.0] * 3, False, CFG, T0) is None


def make_score(flag_kinds, mode=LocationMode.HOME, cfg=CFG) -> MultimarkerScore:
    flags = [
        RiskFlag(kind, T0, (("value", 1.0),)) for kind in flag_kinds
    ]
    return multimarker_score(flags, mode, cfg, "P1", T0)


class TestMultimarkerScore:
    def test_empty_is_green_zero(self):
        score = make_score([])
        assert score.score == 0.0 and score.severity is Severity.GREEN

    def test_single_noncritical_is_yellow_one(self):
        score = make_score([FlagKind.TACHYCARDIA])
        assert score.score == 1.0 and score.severity is Severity.YELLOW

    def test_critical_flag_forces_red_and_away_drops_env(self):
        score = make_score(
            [FlagKind.LOW_SPO2, FlagKind.ENV_POOR_AIR_QUALITY], LocationMode.AWAY
        )
        assert score.severity is Severity.RED
        assert FlagKind.ENV_POOR_AIR_QUALITY not in score.active_flags
        assert score.score == CFG.critical_weight

    def test_red_via_accumulation(self):
        score = make_score(
            [FlagKind.TACHYCARDIA, FlagKind.HIGH_SBP, FlagKind.HIGH_DBP]
        )
        assert score.score == 3.0 and score.severity is Severity.RED

    @given(
        st.sets(st.sampled_from(list(FlagKind))),
    )
    def test_away_equals_home_without_env_flags(self, flag_kinds):
        away = make_score(flag_kinds, LocationMode.AWAY)
        home = make_score(flag_kinds - ENV_FLAGS, LocationMode.HOME)
        assert away.score == home.score
        assert away.severity == home.severity
        assert away.active_flags == home.active_flags

    @given(
        st.sets(st.sampled_from(list(FlagKind))),
        st.sampled_from(list(FlagKind)),
        st.sampled_from(list(LocationMode)),
    )
    def test_adding_a_flag_never_decreases_score_or_severity(self, base, extra, mode):
        before = make_score(base, mode)
        after = make_score(base | {extra}, mode)
        assert after.score >= before.score
        assert after.severity.rank >= before.severity.rank

    def test_severity_monotone_in_score(self):
        ordered = [
            make_score([]),
            make_score([FlagKind.TACHYCARDIA]),
            make_score([FlagKind.TACHYCARDIA, FlagKind.HIGH_SBP, FlagKind.FEVER]),
        ]
        ranks = [s.severity.rank for s in ordered]
        assert ranks == sorted(ranks)

    def test_flag_weight_override(self):
        cfg = ThresholdConfig(flag_weights={"Tachycardia": 2.5})
        score = make_score([FlagKind.TACHYCARDIA], cfg=cfg)
        assert score.score == 2.5


class TestAlerts:
    def test_red_score_raises_and_notifies_both(self):
        store = AlertStore()
        alert = store.raise_alert(make_score([FlagKind.LOW_SPO2]))
        assert alert is not None and alert.state is AlertState.OPEN
        assert alert.notified == frozenset(
            {NotifyTarget.PATIENT, NotifyTarget.HEALTHCARE_INFRASTRUCTURE}
        )

    def test_green_score_raises_nothing(self):
        store = AlertStore()
        assert store.raise_alert(make_score([])) is None

    def test_same_flag_set_deduplicated_while_unresolved(self):
        store = AlertStore()
        first = store.raise_alert(make_score([FlagKind.TACHYCARDIA]))
        assert first is not None
        assert store.raise_alert(make_score([FlagKind.TACHYCARDIA])) is None
        store.ack_alert(first.alert_id, "dr-jones")
        # acknowledgment mutes: identical flags still suppressed
        assert store.raise_alert(make_score([FlagKind.TACHYCARDIA])) is None
        store.resolve_alert(first.alert_id)
        again = store.raise_alert(make_score([FlagKind.TACHYCARDIA]))
        assert again is not None and again.alert_id != first.alert_id

    def test_different_flag_set_is_a_new_alert(self):
        store = AlertStore()
        store.raise_alert(make_score([FlagKind.TACHYCARDIA]))
        second = store.raise_alert(
            make_score([FlagKind.TACHYCARDIA, FlagKind.HIGH_SBP])
        )
        assert second is not None

    def test_ack_lifecycle(self):
        store = AlertStore()
        alert = store.raise_alert(make_score([FlagKind.LOW_SPO2]))
        acked = store.ack_alert(alert.alert_id, "dr-jones")
        assert acked.state is AlertState.ACKNOWLEDGED and acked.acked_by == "dr-jones"
        with pytest.raises(BadAlertState):
            store.ack_alert(alert.alert_id, "dr-smith")
        with pytest.raises(AlertNotFound):
            store.ack_alert("A-999999", "dr-jones")

    def test_state_machine_never_skips_or_reverses(self):
        # exhaustive walk over all (state, action) pairs
        transitions = {
            (AlertState.OPEN, "ack"): AlertState.ACKNOWLEDGED,
            (AlertState.ACKNOWLEDGED, "resolve"): AlertState.RESOLVED,
        }
        for start, action in itertools.product(AlertState, ["ack", "resolve"]):
            store = AlertStore()
            alert = store.raise_alert(make_score([FlagKind.LOW_SPO2]))
            if start is AlertState.ACKNOWLEDGED:
                store.ack_alert(alert.alert_id, "c")
            elif start is AlertState.RESOLVED:
                store.ack_alert(alert.alert_id, "c")
                store.resolve_alert(alert.alert_id)
            expected = transitions.get((start, action))
            if expected is None:
                with pytest.raises(BadAlertState):
                    if action == "ack":
                        store.ack_alert(alert.alert_id, "c")
                    else:
                        store.resolve_alert(alert.alert_id)
            else:
                if action == "ack":
                    assert store.ack_alert(alert.alert_id, "c").state is expected
                else:
                    assert store.resolve_alert(alert.alert_id).state is expected

    def test_alert_ids_deterministic(self):
        ids = []
        for _ in range(2):
            store = AlertStore()
            a = store.raise_alert(make_score([FlagKind.LOW_SPO2]))
            b = store.raise_alert(make_score([FlagKind.TACHYCARDIA]))
            ids.append((a.alert_id, b.alert_id))
        assert ids[0] == ids[1]

    def test_outbox_records_written(self, tmp_path):
        outbox = tmp_path / "outbox.jsonl"
        store = AlertStore(outbox_path=outbox)
        store.raise_alert(make_score([FlagKind.LOW_SPO2]))
        lines = outbox.read_text().strip().splitlines()
        assert len(lines) == 2  # one per notification target


class TestThresholdConfig:
    def test_round_trip(self, tmp_path):
        cfg = ThresholdConfig(spo2_low=90.0, flag_weights={"Fever": 2.0})
        path = tmp_path / "cfg.json"
        cfg.save(path)
        assert ThresholdConfig.load(path) == cfg

    def test_invariants(self):
        with pytest.raises(ValueError):
            ThresholdConfig(hr_low=120.0)
        with pytest.raises(ValueError):
            ThresholdConfig(temp_low=38.0)
        with pytest.raises(ValueError):
            ThresholdConfig(weight_gain_kg=-1.0)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError):
            ThresholdConfig.from_json({"spo2_lo": 92})
