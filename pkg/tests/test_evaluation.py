import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsaw.errors import DomainError
from hsaw.evaluation import (
    auc_concordance,
    false_positives,
    metrics_dict,
    metrics_json,
    roc,
    roc_csv,
    roc_svg,
)
from hsaw.rng import SplitMix64


def random_instance(seed, n):
    r = SplitMix64(seed)
    labels = r.uniform(n) < 0.4
    labels[0], labels[1] = True, False
    scores = np.round(r.uniform(n), 2)  # rounding forces ties
    return scores, labels


def test_perfect_separation():
    c = roc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert c.auc == 1.0 and c.eer == 0.0
    assert 0.2 <= c.eer_threshold < 0.8


def test_uninformative_scores():
    assert roc([0.5, 0.5], [0, 1]).auc == 0.5


def test_inverted_scores():
    c = roc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1])
    assert c.auc == 0.0 and c.eer == 1.0


def test_curve_shape_invariants():
    s, y = random_instance(1, 150)
    c = roc(s, y)
    assert c.thresholds[0] == math.inf and c.thresholds[-1] == -math.inf
    assert np.all(np.diff(c.thresholds) < 0)
    assert c.fpr[0] == 0 and c.tpr[0] == 0 and c.fpr[-1] == 1 and c.tpr[-1] == 1
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert 0 <= c.auc <= 1 and 0 <= c.eer <= 1
    # at the reported operating threshold the two error rates are within one ROC step
    pred = s > c.eer_threshold
    fpr = (pred & ~y).sum() / (~y).sum()
    fnr = (~pred & y).sum() / y.sum()
    step = max(1 / y.sum(), 1 / (~y).sum())
    assert abs(fpr - fnr) <= 2 * step + 1e-12


@pytest.mark.parametrize("seed", range(25))
def test_auc_matches_concordance(seed):
    n = 5 + (seed * 37) % 196
    s, y = random_instance(seed, n)
    assert abs(roc(s, y).auc - auc_concordance(s, y)) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=2, max_size=60))
def test_auc_concordance_property(pairs):
    s = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs])
    if y.all() or not y.any():
        with pytest.raises(DomainError):
            roc(s, y)
        return
    assert abs(roc(s, y).auc - auc_concordance(s, y)) < 1e-9


def test_monotone_transform_invariance():
    s, y = random_instance(7, 120)
    a = roc(s, y)
    b = roc(np.exp(3 * s) + 2, y)
    assert np.array_equal(a.fpr, b.fpr) and np.array_equal(a.tpr, b.tpr)
    assert a.auc == b.auc and a.eer == b.eer


def test_label_flip_duality():
    s, y = random_instance(8, 90)
    assert abs(roc(s, y).auc - roc(-s, ~y).auc) < 1e-12


def test_eer_interpolates():
    # FPR jumps 1/3 -> 2/3 while the miss rate stays 1/2: the crossing lies halfway
    c = roc([0.9, 0.8, 0.7, 0.6, 0.1], [1, 0, 0, 1, 0])
    assert c.eer == pytest.approx(0.5)
    assert not np.any(np.isclose(c.fpr, 0.5))


def test_errors():
    with pytest.raises(DomainError):
        roc([0.1, 0.2], [1, 1])
    with pytest.raises(DomainError):
        roc([0.1, 0.2, 0.3], [0, 1])


def test_false_positives_mask():
    s = np.array([0.9, 0.8, 0.1, 0.95])
    y = np.array([0, 0, 0, 1], bool)
    assert false_positives(s, y, 0.5) == 2
    assert false_positives(s, y, 0.5, mask=[True, False, True, True]) == 1


def test_outputs():
    c = roc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    lines = roc_csv(c).splitlines()
    assert lines[0] == "threshold,fpr,tpr"
    assert lines[1].startswith("inf,") and lines[-1].startswith("-inf,")
    assert len(lines) == len(c.thresholds) + 1
    m = json.loads(metrics_json(metrics_dict(c)))
    assert set(m) == {"auc", "eer", "eer_threshold"}
    svg = roc_svg({"a": c, "b": roc([0.5, 0.5], [0, 1])})
    assert svg.startswith("<svg") and svg.count("<polyline") == 2
    assert "False positive rate" in svg and "True positive rate" in svg
    assert 'stroke-dasharray' in svg  # chance diagonal
