"""Rank AUC and thresholded confusion metrics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glycopipe.metrics import metrics_from_scores, rank_auc


def test_hand_worked_confusion_and_auc():
    scores = [0.9, 0.4, 0.6, 0.2]
    labels = [1, 1, 0, 0]
    m = metrics_from_scores(scores, labels)
    assert m.tp == 1 and m.fn == 1 and m.tn == 1 and m.fp == 1
    assert m.sensitivity == 0.5
    assert m.specificity == 0.5
    assert m.accuracy == 0.5
    assert m.auc == 0.75


def test_constant_scores_give_half_auc():
    assert rank_auc([0.7, 0.7, 0.7, 0.7], [1, 0, 1, 0]) == 0.5


def test_perfect_separation_gives_one():
    assert rank_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert rank_auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0


def test_ties_count_half():
    # one clean win, one tie: (1 + 0.5) / 2
    assert rank_auc([0.5, 0.9, 0.5], [1, 1, 0]) == 0.75


def test_single_class_rejected():
    with pytest.raises(ValueError):
        rank_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        rank_auc([0.1, 0.2], [0, 0])


def test_threshold_is_inclusive():
    m = metrics_from_scores([0.5, 0.4], [1, 0], threshold=0.5)
    assert m.tp == 1 and m.fn == 0 and m.tn == 1


def test_as_dict_shape():
    d = metrics_from_scores([0.9, 0.1], [1, 0]).as_dict()
    assert set(d) == {"accuracy", "sensitivity", "specificity", "auc", "confusion"}
    assert set(d["confusion"]) == {"tp", "fp", "tn", "fn"}


@given(
    st.lists(
        st.tuples(st.floats(0, 1, allow_nan=False), st.integers(0, 1)),
        min_size=2,
        max_size=60,
    )
)
@settings(max_examples=60, deadline=None)
def test_auc_matches_pairwise_definition(pairs):
    scores = np.array([s for s, _ in pairs])
    labels = np.array([l for _, l in pairs])
    n_pos, n_neg = int((labels == 1).sum()), int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return
    got = rank_auc(scores, labels)
    ps, ns = scores[labels == 1], scores[labels == 0]
    wins = (ps[:, None] > ns[None, :]).sum() + 0.5 * (ps[:, None] == ns[None, :]).sum()
    assert got == pytest.approx(wins / (n_pos * n_neg), abs=1e-12)
