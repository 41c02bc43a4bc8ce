import json
import math

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ofx.metrics import (METRIC_NAMES, REPORT_SCHEMA, ConfusionCounts, aggregate, binarize, confusion, evaluate,
                         metrics)


def test_binarize_is_strict():
    np.testing.assert_array_equal(binarize(np.array([0.54, 0.55, 0.56]), 0.55), [0, 0, 1])
    np.testing.assert_array_equal(binarize(np.array([0.4, 0.41]), 0.4), [0, 1])


@pytest.mark.parametrize("t", [0.0, 1.0, -0.1, 1.5])
def test_binarize_threshold_range(t):
    with pytest.raises(ValueError):
        binarize(np.zeros(3), t)


def test_confusion_hand_count():
    pred = np.array([[1, 1, 0], [0, 0, 1]])
    truth = np.array([[1, 0, 0], [1, 0, 1]])
    assert confusion(pred, truth) == ConfusionCounts(tp=2, fp=1, tn=2, fn=1)
    # swapping roles swaps fp and fn
    assert confusion(truth, pred) == ConfusionCounts(tp=2, fp=1, tn=2, fn=1)
    assert confusion(pred, 1 - truth) == ConfusionCounts(tp=1, fp=2, tn=1, fn=2)


def test_confusion_shape_mismatch():
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2)), np.zeros((2, 3)))


def test_uniform_half_probabilities_are_all_background():
    truth = np.zeros((4, 4), np.uint8)
    truth[:2] = 1
    m = metrics(confusion(binarize(np.full((4, 4), 0.5), 0.4), truth))
    assert m["sensitivity"] == 1 and m["specificity"] == 0
    m = metrics(confusion(binarize(np.full((4, 4), 0.5), 0.55), truth))
    assert m["sensitivity"] == 0 and m["specificity"] == 1 and m["accuracy"] == 0.5
    assert m["precision"] is None and m["f1"] is None


def test_perfect_prediction():
    truth = (np.random.default_rng(0).random((8, 8)) > 0.5).astype(np.uint8)
    m = metrics(confusion(truth, truth))
    assert all(m[k] == 1 for k in METRIC_NAMES)


def test_all_negative_case():
    m = metrics(confusion(np.zeros((3, 3)), np.zeros((3, 3))))
    assert m["sensitivity"] is None and m["precision"] is None and m["f1"] is None
    assert m["accuracy"] == m["specificity"] == m["npv"] == 1


def test_f1_undefined_when_no_true_positives():
    m = metrics(ConfusionCounts(tp=0, fp=3, tn=5, fn=2))
    assert m["sensitivity"] == 0 and m["precision"] == 0 and m["f1"] is None


def test_aggregate_mean_and_population_std():
    rep = aggregate([{**{k: 0.9 for k in METRIC_NAMES}}, {**{k: 1.0 for k in METRIC_NAMES}}])
    assert rep.mu["accuracy"] == pytest.approx(0.95)
    assert rep.sigma["accuracy"] == pytest.approx(0.05)


def test_aggregate_excludes_and_counts_undefined():
    base = {k: 0.5 for k in METRIC_NAMES}
    rep = aggregate([dict(base, f1=None), dict(base, f1=0.7), dict(base, f1=None)])
    assert rep.mu["f1"] == pytest.approx(0.7) and rep.sigma["f1"] == 0
    assert rep.undefined_count["f1"] == 2 and rep.undefined_count["accuracy"] == 0
    rep = aggregate([dict(base, npv=None)])
    assert rep.mu["npv"] is None and rep.undefined_count["npv"] == 1


def test_aggregate_needs_images():
    with pytest.raises(ValueError):
        aggregate([])


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31), p=st.floats(0, 1), q=st.floats(0, 1))
def test_metrics_match_pixel_oracle_and_identities(seed, p, q):
    rng = np.random.default_rng(seed)
    pred = (rng.random((6, 7)) < p).astype(np.uint8)
    truth = (rng.random((6, 7)) < q).astype(np.uint8)
    c = confusion(pred, truth)
    assert (c.tp, c.fp, c.tn, c.fn) == oracles.confusion(pred, truth)
    m = metrics(c)
    ref = oracles.rates(c.tp, c.fp, c.tn, c.fn)
    for k in METRIC_NAMES:
        assert (m[k] is None) == (ref[k] is None)
        if m[k] is not None:
            assert abs(m[k] - ref[k]) <= 1e-12
            assert 0 <= m[k] <= 1
    pos, neg = c.tp + c.fn, c.tn + c.fp
    if pos and neg:
        assert m["accuracy"] == pytest.approx((pos * m["sensitivity"] + neg * m["specificity"]) / (pos + neg))
    if m["f1"] is not None:
        assert m["f1"] == pytest.approx(2 * c.tp / (2 * c.tp + c.fp + c.fn))


def test_report_validates_against_schema():
    rng = np.random.default_rng(1)
    probs = rng.random((5, 10, 10))
    truths = (rng.random((5, 10, 10)) > 0.5).astype(np.uint8)
    rep = evaluate(probs, truths, 0.55)
    doc = json.loads(rep.to_json(mode="nir", threshold=0.55))
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert doc["n_images"] == 5
    assert set(doc["metrics"]) == set(METRIC_NAMES)
    assert all(not math.isnan(v["mu"]) for v in doc["metrics"].values() if v["mu"] is not None)


def test_schema_rejects_bad_report():
    bad = {"n_images": 1, "metrics": {k: {"mu": 1.5, "sigma": 0, "undefined_count": 0} for k in METRIC_NAMES}}
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(bad, REPORT_SCHEMA)
