import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aeguard.errors import DataError, DomainError
from aeguard.metrics import Counts, confusion, evaluate_scores, roc_auc, write_report
from aeguard.tensor import Rng
from oracles import auc_pairs, confusion_loop


def test_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [False, False, True, True])[0] == 1.0
    assert roc_auc([0.5] * 6, [True, False] * 3)[0] == 0.5
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [False, False, True, True])[0] == 0.0


def test_auc_against_pairwise_oracle():
    for seed in range(40):
        r = Rng(seed)
        n = int(r.integers(4, 60))
        labels = r.uniform(n) < 0.4
        labels[0], labels[1] = True, False
        scores = np.round(r.normal(n), 1)  # rounding forces ties
        assert abs(roc_auc(scores, labels)[0] - auc_pairs(scores.tolist(), labels.tolist())) <= 1e-12


scores_labels = st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-1e3, 1e3), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n).filter(lambda l: 0 < sum(l) < len(l)),
))


@settings(max_examples=100)
@given(scores_labels)
def test_auc_invariant_under_monotone_transform(sl):
    # integer scores keep the cubic exact, so order and ties are preserved
    s, l = np.round(np.array(sl[0]) / 20), sl[1]
    a = roc_auc(s, l)[0]
    assert roc_auc(s ** 3 + s + 7, l)[0] == a
    assert roc_auc(np.exp(s / 10), l)[0] == a


@settings(max_examples=100)
@given(scores_labels)
def test_auc_complement_and_roc_shape(sl):
    s, l = np.array(sl[0]), sl[1]
    auc, pts = roc_auc(s, l)
    if len(set(s.tolist())) == len(s):
        assert auc + roc_auc(-s, l)[0] == pytest.approx(1.0, abs=1e-12)
    assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
    fx, fy = zip(*pts)
    assert all(np.diff(fx) >= 0) and all(np.diff(fy) >= 0)
    # trapezoid area under the polyline equals the Mann-Whitney statistic
    assert np.trapezoid(fy, fx) == pytest.approx(auc, abs=1e-12)


def test_infinite_scores_rank_highest():
    auc, pts = roc_auc([math.inf, math.inf, 1.0, 2.0], [True, True, False, False])
    assert auc == 1.0 and pts[1] == (0.0, 1.0)
    assert roc_auc([math.inf, math.inf, 1.0], [True, False, False])[0] == 0.75


def test_auc_errors():
    with pytest.raises(DomainError):
        roc_auc([1.0, 2.0], [True, True])
    with pytest.raises(DomainError):
        roc_auc([1.0, 2.0], [False, False])
    with pytest.raises(DomainError):
        roc_auc([np.nan, 1.0], [True, False])
    with pytest.raises(DomainError):
        roc_auc([-np.inf, 1.0], [True, False])
    with pytest.raises(DataError):
        roc_auc([1.0], [True, False])


def test_confusion_examples():
    c = confusion([True, True, False, False], [True, False, False, True])
    assert (c.tp, c.fp, c.tn, c.fn) == (1, 1, 1, 1)
    assert c.tpr == 0.5 and c.fpr == 0.5
    c = confusion([True, False], [True, False])
    assert c.tpr == 1.0 and c.fpr == 0.0
    assert math.isnan(Counts(tn=3).tpr)
    with pytest.raises(DataError):
        confusion([True], [True, False])
    with pytest.raises(DataError):
        confusion([], [])


def test_confusion_against_loop():
    r = Rng(9)
    f, l = r.uniform(1000) < 0.3, r.uniform(1000) < 0.5
    c = confusion(f, l)
    assert (c.tp, c.fp, c.tn, c.fn) == confusion_loop(f.tolist(), l.tolist())
    assert c.tp + c.fp + c.tn + c.fn == 1000


@settings(max_examples=50)
@given(scores_labels, st.floats(-1e3, 1e3))
def test_deployed_point_lies_on_roc(sl, delta):
    s, l = np.array(sl[0]), np.array(sl[1])
    rep = evaluate_scores(s > delta, s, l, delta)
    assert (rep.fpr, rep.tpr) in rep.roc_points


def test_report_files(tmp_path):
    s = np.array([0.1, 0.4, 3.5, 0.8, 5.0, 9.0])
    l = np.array([False, False, True, False, True, True])
    rep = evaluate_scores(s > 3.0, s, l, 3.0)
    assert rep.auc == 1.0 and rep.tpr == 1.0 and rep.fpr == 0.0
    write_report(rep, tmp_path / "r.json", tmp_path / "roc.csv")
    back = json.loads((tmp_path / "r.json").read_text())
    assert back["auc"] == 1.0 and back["counts"] == {"tp": 3, "fp": 0, "tn": 3, "fn": 0}
    rows = list(csv.reader(open(tmp_path / "roc.csv")))
    assert rows[0] == ["fpr", "tpr"]
    assert [(float(a), float(b)) for a, b in rows[1:]] == rep.roc_points
    nosweep = evaluate_scores(s > 3.0, s, l, 3.0, sweep=False)
    assert math.isnan(nosweep.auc) and nosweep.roc_points == []
