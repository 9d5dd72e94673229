import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vscomplete.errors import DegenerateLabels, EmptyInput
from vscomplete.metrics import auroc, average_precision, macro_aggregate, pair_precision, value_set_prf

from oracles import ap_oracle, auroc_oracle


def test_auroc_examples():
    assert auroc([0.9, 0.8, 0.1], [1, 0, 1]) == pytest.approx(0.5)
    assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auroc([0.3] * 5, [1, 0, 1, 0, 0]) == 0.5


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.1], [1, 0, 1]) == pytest.approx(5 / 6)
    assert average_precision([0.9, 0.8, 0.1, 0.0], [1, 1, 0, 0]) == 1.0
    assert average_precision([0.9, 0.8, 0.7, 0.1], [0, 0, 0, 1]) == pytest.approx(0.25)


def test_degenerate_labels():
    with pytest.raises(DegenerateLabels):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(DegenerateLabels):
        average_precision([0.1, 0.2], [0, 0])


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=60))
def test_random_instances_match_oracles(pairs):
    scores = [s / 6 for s, _ in pairs]
    labels = [int(y) for _, y in pairs]
    if 0 < sum(labels) < len(labels):
        assert abs(auroc(scores, labels) - auroc_oracle(scores, labels)) <= 1e-12
    if sum(labels) > 0:
        assert abs(average_precision(scores, labels) - ap_oracle(scores, labels)) <= 1e-12


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=30), st.data())
def test_auroc_invariant_under_monotone_transform(scores, data):
    labels = data.draw(st.lists(st.booleans(), min_size=len(scores), max_size=len(scores)))
    if not 0 < sum(labels) < len(labels):
        return
    transformed = [math.atan(3 * s) + 7 for s in scores]
    # atan can merge distinct inputs only below float resolution, where both orderings tie
    if len(set(transformed)) == len(set(scores)):
        assert auroc(scores, labels) == pytest.approx(auroc(transformed, labels), abs=1e-12)


def test_value_set_prf_examples():
    t = [("a", "S"), ("b", "S"), ("c", "S"), ("d", "S")]
    assert value_set_prf(t, t) == (1.0, 1.0, 1.0)
    assert value_set_prf([], t) == (0.0, 0.0, 0.0)
    p, r, f = value_set_prf([("a", "S"), ("b", "S"), ("x", "S")], t)
    assert (p, r) == (pytest.approx(2 / 3), 0.5) and f == pytest.approx(4 / 7)
    with pytest.raises(EmptyInput):
        value_set_prf([("a", "S")], [])


def test_exact_pair_matching_respects_system():
    assert value_set_prf([("a", "LOINC")], [("a", "SNOMED-CT")]) == (0.0, 0.0, 0.0)


def test_macro_aggregate():
    single = macro_aggregate([(0.5, 0.5, 0.5)])
    assert single["se_f1"] == 0.0 and single["n"] == 1 and single["se_defined"] is False
    two = macro_aggregate([(1, 1, 1), (0, 0, 0)])
    assert two["f1"] == 0.5 and two["se_f1"] == pytest.approx(0.5)
    with pytest.raises(EmptyInput):
        macro_aggregate([])


@given(st.lists(st.tuples(*[st.floats(0, 1)] * 3), min_size=2, max_size=40))
def test_macro_se_matches_definition(rows):
    f1 = [r[2] for r in rows]
    n = len(f1)
    mean = sum(f1) / n
    sd = math.sqrt(sum((x - mean) ** 2 for x in f1) / (n - 1))
    assert macro_aggregate(rows)["se_f1"] == pytest.approx(sd / math.sqrt(n), abs=1e-12)


def test_pair_precision():
    assert pair_precision([1, 1, 0, 1], [1, 0, 1, 0]) == pytest.approx(1 / 3)
    assert pair_precision([0, 0], [1, 0]) == 0.0
