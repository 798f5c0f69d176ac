from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairglmm.data_model import ModelParams, build_dataset
from fairglmm.metrics import (
    MetricError,
    accuracy,
    classify,
    confusion,
    disparate_impact,
    evaluate,
    predict_dataset,
    predict_prob,
    stratum_index,
)


def test_classify_boundary_inclusive():
    assert classify(0.5) == 1
    assert classify(np.nextafter(0.5, 0.0)) == 0
    assert classify(np.array([0.2, 0.5, 0.9])).tolist() == [0, 1, 1]


def test_confusion_counts():
    c = confusion([1, 1, 0, 0], [1, 0, 0, 1])
    assert (c.tp, c.fp, c.tn, c.fn) == (1, 1, 1, 1)
    assert accuracy(c) == 0.5


@pytest.mark.parametrize(
    "pred, s, expected",
    [([1, 0, 1, 0], [1, 1, 0, 0], 1.0), ([0, 0, 0, 0], [1, 1, 0, 0], 1.0), ([1, 1, 0, 0], [1, 1, 0, 0], 0.0),
     ([1, 1, 1, 0], [1, 1, 0, 0], 0.5)],
)
def test_disparate_impact_cases(pred, s, expected):
    assert disparate_impact(pred, s) == expected


def test_disparate_impact_needs_both_groups():
    with pytest.raises(MetricError):
        disparate_impact([1, 0], [1, 1])


def test_exhaustive_four_point_properties():
    for bits in itertools.product([0, 1], repeat=8):
        pred, s = np.array(bits[:4]), np.array(bits[4:])
        y = np.array([1, 0, 1, 0])
        assert accuracy(confusion(pred, y)) == accuracy(confusion(1 - pred, 1 - y))
        if 0 < s.sum() < 4:
            di = disparate_impact(pred, s)
            assert 0.0 <= di <= 1.0
            assert di == disparate_impact(pred, 1 - s)


@given(st.floats(-10, 10), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_predict_prob_unknown_stratum_uses_zero_effect(beta0, beta):
    params = ModelParams(beta0, np.array(beta), np.array([5.0]))
    row = np.array([0.3, -0.2])
    assert predict_prob(params, row, None) == predict_prob(params, row, -1)


def test_stratum_index_maps_unseen_to_minus_one():
    assert stratum_index(np.array([2, 5, 9]), np.array([5, 3, 9, 10])).tolist() == [1, -1, 2, -1]


def test_predict_dataset_applies_training_effects_by_label():
    test = build_dataset([[0.0], [0.0]], [0, 1], [7, 8], [0, 1])
    params = ModelParams(0.0, np.zeros(1), np.array([-3.0, 3.0]))
    assert predict_dataset(params, test, np.array([7, 8])).tolist() == [0, 1]
    # label 7 unseen (b = 0, p = 0.5), label 8 now the first training stratum
    assert predict_dataset(params, test, np.array([8, 9])).tolist() == [1, 0]


def test_zero_parameters_predict_positive_everywhere():
    ds = build_dataset(np.zeros((4, 1)), [0, 1, 0, 1], [1, 1, 2, 2], [0, 1, 0, 1])
    pair = evaluate(ModelParams.zeros(1, 2), ds, ds.stratum_ids)
    assert pair.accuracy == 0.5 and pair.disparate_impact == 1.0
