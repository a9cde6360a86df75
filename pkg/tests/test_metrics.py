from __future__ import annotations

import math
import random

import pytest

from predihealth.stratify import ConfusionCounts, evaluate, metrics_from_counts


def oracle_metrics(predictions, truth):
    """Independent tally: count the four cells by direct comparison, then
    apply the definitions with explicit undefined handling."""
    tp = sum(1 for p, t in zip(predictions, truth) if p == 1 and t == 1)
    tn = sum(1 for p, t in zip(predictions, truth) if p == 0 and t == 0)
    fp = sum(1 for p, t in zip(predictions, truth) if p == 1 and t == 0)
    fn = sum(1 for p, t in zip(predictions, truth) if p == 0 and t == 1)
    total = tp + tn + fp + fn
    accuracy = (tp + tn) / total
    precision = tp / (tp + fp) if (tp + fp) else None
    sensitivity = tp / (tp + fn) if (tp + fn) else None
    if precision is None or sensitivity is None or precision + sensitivity == 0:
        f1 = None
    else:
        f1 = 2 * precision * sensitivity / (precision + sensitivity)
    if fp * fn > 0:
        dor = (tp * tn) / (fp * fn)
    elif tp * tn > 0:
        dor = math.inf
    else:
        dor = None
    return (tp, tn, fp, fn), accuracy, precision, sensitivity, f1, dor


def test_worked_fixture():
    # tp=9 tn=7 fp=3 fn=1
    counts = ConfusionCounts(tp=9, tn=7, fp=3, fn=1)
    m = metrics_from_counts(counts)
    assert m.accuracy == pytest.approx(0.80)
    assert m.precision == pytest.approx(0.75)
    assert m.sensitivity == pytest.approx(0.90)
    assert m.f1 == pytest.approx(0.8182, abs=1e-4)
    assert m.dor == 21


def test_reference_operating_point_shape():
    # the published headline numbers are consistent with the formulas:
    # e.g. tp=29, fn=3 gives sensitivity ~0.906; this asserts only that our
    # formulas rate such a matrix near those headline values
    counts = ConfusionCounts(tp=29, tn=27, fp=13, fn=3)
    m = metrics_from_counts(counts)
    assert m.sensitivity == pytest.approx(0.91, abs=0.01)
    assert m.precision == pytest.approx(0.70, abs=0.01)
    assert m.accuracy == pytest.approx(0.78, abs=0.01)
    assert m.f1 == pytest.approx(0.79, abs=0.01)
    assert m.dor == pytest.approx(20, abs=0.1)


def test_matches_oracle_on_random_vectors():
    rng = random.Random(1234)
    for _ in range(300):
        n = rng.randint(1, 200)
        pred = [rng.randint(0, 1) for _ in range(n)]
        truth = [rng.randint(0, 1) for _ in range(n)]
        metrics, counts = evaluate(pred, truth)
        (tp, tn, fp, fn), acc, prec, sens, f1, dor = oracle_metrics(pred, truth)
        assert (counts.tp, counts.tn, counts.fp, counts.fn) == (tp, tn, fp, fn)
        assert metrics.accuracy == acc
        assert metrics.precision == prec
        assert metrics.sensitivity == sens
        assert metrics.f1 == f1
        assert metrics.dor == dor


def test_undefined_cases_reported_not_zeroed():
    # all-negative predictions on all-negative truth: no positives anywhere
    metrics, _ = evaluate([0, 0, 0], [0, 0, 0])
    assert metrics.precision is None
    assert metrics.sensitivity is None
    assert metrics.f1 is None
    assert metrics.dor is None
    assert metrics.accuracy == 1.0

    # perfect classifier: fp*fn = 0 with positive numerator -> +inf
    metrics, _ = evaluate([1, 0, 1], [1, 0, 1])
    assert metrics.dor == math.inf
    assert metrics.f1 == 1.0


def test_dor_identity_with_likelihood_ratios():
    # DOR == (sens/(1-sens)) / ((1-spec)/spec) whenever all four counts > 0
    rng = random.Random(99)
    checked = 0
    while checked < 200:
        n = rng.randint(8, 120)
        pred = [rng.randint(0, 1) for _ in range(n)]
        truth = [rng.randint(0, 1) for _ in range(n)]
        metrics, c = evaluate(pred, truth)
        if min(c.tp, c.tn, c.fp, c.fn) == 0:
            continue
        sens = metrics.sensitivity
        spec = c.tn / (c.tn + c.fp)
        identity = (sens / (1 - sens)) * (spec / (1 - spec))
        assert metrics.dor == pytest.approx(identity)
        checked += 1


def test_f1_is_harmonic_mean():
    rng = random.Random(7)
    for _ in range(200):
        n = rng.randint(2, 100)
        pred = [rng.randint(0, 1) for _ in range(n)]
        truth = [rng.randint(0, 1) for _ in range(n)]
        metrics, _ = evaluate(pred, truth)
        if metrics.precision and metrics.sensitivity:
            harmonic = 2 * metrics.precision * metrics.sensitivity / (
                metrics.precision + metrics.sensitivity
            )
            assert metrics.f1 == pytest.approx(harmonic)


def test_input_validation():
    with pytest.raises(ValueError):
        evaluate([], [])
    with pytest.raises(ValueError):
        evaluate([1, 0], [1])
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1, tn=0, fp=0, fn=0)
