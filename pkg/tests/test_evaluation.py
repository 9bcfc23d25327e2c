import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlmguard.errors import InvalidInput
from vlmguard.harness.evaluation import (
    EvalRecord, LabeledMetrics, average_precision, calibrate, evaluate, f1_from_counts, records_from_metrics, roc_auc,
)
from vlmguard.sentinel import DetectionMetrics, GateThresholds, VerdictClass

from oracles import auc_all_pairs

C, G, L = VerdictClass.CLEAN, VerdictClass.GLOBAL, VerdictClass.LOCAL


def _records(pairs, scores=None):
    scores = scores or [float(i) for i in range(len(pairs))]
    return [EvalRecord(f"s{i:03d}", t, p, s) for i, ((t, p), s) in enumerate(zip(pairs, scores))]


def test_counts_example():
    pairs = [(G, G)] * 7 + [(C, G)] * 3 + [(L, C)] + [(C, C)] * 9
    rep = evaluate(_records(pairs))
    assert rep.counts == {"tp": 7, "fp": 3, "fn": 1, "tn": 9}
    assert rep.f1_binary == pytest.approx(7 / 9, abs=1e-6)
    assert rep.d_acc == pytest.approx(0.8, abs=1e-6)


def test_perfect_separation():
    pairs = [(C, C)] * 5 + [(G, G)] * 5
    rep = evaluate(_records(pairs, [0.1] * 5 + [0.9] * 5))
    assert rep.auc == 1.0 and rep.ap == 1.0 and rep.f1_binary == 1.0 and rep.three_way_accuracy == 1.0


def test_single_class_ranking_undefined():
    rep = evaluate(_records([(G, G), (L, L)]))
    assert not rep.ranking_defined and math.isnan(rep.auc) and math.isnan(rep.ap)
    assert "auc,undefined" in rep.summary_lines()


def test_confusion_layout():
    rep = evaluate(_records([(C, G), (G, L), (L, L)]))
    assert rep.confusion.tolist() == [[0, 1, 0], [0, 0, 1], [0, 0, 1]]
    assert rep.three_way_accuracy == pytest.approx(1 / 3)


def test_f1_degenerate():
    assert f1_from_counts(0, 0, 0) == 0.0


def test_empty_records():
    with pytest.raises(InvalidInput):
        evaluate([])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6).map(float), st.booleans()), min_size=2, max_size=40))
def test_auc_matches_all_pairs(data):
    scores, labels = zip(*data)
    if len(set(labels)) < 2:
        assert math.isnan(roc_auc(scores, labels))
        return
    assert roc_auc(scores, labels) == pytest.approx(auc_all_pairs(scores, labels), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=30), st.randoms())
def test_metrics_permutation_invariant(data, rnd):
    scores, labels = zip(*data)
    perm = list(range(len(data)))
    rnd.shuffle(perm)
    s2 = [scores[i] for i in perm]
    l2 = [labels[i] for i in perm]
    a, b = roc_auc(scores, labels), roc_auc(s2, l2)
    assert (math.isnan(a) and math.isnan(b)) or a == pytest.approx(b, abs=1e-12)
    a, b = average_precision(scores, labels), average_precision(s2, l2)
    assert (math.isnan(a) and math.isnan(b)) or a == pytest.approx(b, abs=1e-12)


def test_average_precision_example():
    # ranks: pos, neg, pos -> precision 1 at recall .5, 2/3 at recall 1
    assert average_precision([0.9, 0.8, 0.7], [True, False, True]) == pytest.approx(0.5 + 0.5 * 2 / 3)


# -- calibration -------------------------------------------------------------

def _lm(i, truth, m, c):
    return LabeledMetrics(f"x{i:03d}", truth, DetectionMetrics(m, 0.0, 0.0, c, c, ()))


def _separable():
    out = []
    for i in range(10):
        out.append(_lm(i, C, 0.01 + 0.001 * i, 0.01))
        out.append(_lm(100 + i, G, 1.0 + 0.01 * i, 0.05))
        out.append(_lm(200 + i, L, 1.0 + 0.01 * i, 0.6 + 0.01 * i))
    return out


def test_calibrate_separable():
    samples = _separable()
    th = calibrate(samples)
    rep = evaluate(records_from_metrics(samples, th))
    assert rep.f1_binary == 1.0 and rep.three_way_accuracy == 1.0
    assert th.t_cc2 <= th.t_cc1


def test_calibrate_single_point_grid():
    th = calibrate(_separable(), {"t_s": [0.5], "t_cc1": [0.7], "t_cc2": [0.3]}, GateThresholds(alpha=0.9, beta=0.5))
    assert (th.t_s, th.t_cc1, th.t_cc2, th.alpha, th.beta) == (0.5, 0.7, 0.3, 0.9, 0.5)


def test_calibrate_order_independent():
    samples = _separable()
    rev = list(reversed(samples))
    assert calibrate(samples) == calibrate(rev)


def test_calibrate_errors():
    with pytest.raises(InvalidInput):
        calibrate(_separable(), {"t_s": [], "t_cc1": [0.5], "t_cc2": [0.1]})
    with pytest.raises(InvalidInput):
        calibrate([s for s in _separable() if s.truth is not L])
    with pytest.raises(InvalidInput):
        calibrate(_separable(), {"t_s": [0.5], "t_cc1": [0.1], "t_cc2": [0.5]})
