import numpy as np
import pytest
from hypothesis import given, strategies as st

from nestfdr.core import (
    ConfusionCounts,
    InputError,
    RejectionOutcome,
    as_labels,
    as_zmatrix,
    confusion_counts,
    fdp,
    fnp,
)


def test_zmatrix_validation():
    assert as_zmatrix([1.0, 2.0]).shape == (2, 1)
    with pytest.raises(InputError):
        as_zmatrix([[np.nan, 1.0]])
    with pytest.raises(InputError):
        as_zmatrix(np.empty((0, 2)))
    with pytest.raises(InputError):
        as_zmatrix(np.zeros((2, 2, 2)))


def test_labels_validation():
    assert as_labels([0, 1, 1]).tolist() == [False, True, True]
    with pytest.raises(InputError):
        as_labels([0, 2])
    with pytest.raises(InputError):
        as_labels([0, 1], n=3)


def test_outcome_is_read_only():
    out = RejectionOutcome(np.array([True, False]), "x")
    assert out.n == 2 and out.n_rejected == 1
    with pytest.raises(ValueError):
        out.rejected[0] = False
    with pytest.raises(InputError):
        RejectionOutcome(np.array([True]), "x", estimated_fdr_trace=((0, -0.1),))


def test_confusion_examples():
    c = confusion_counts([0, 0, 0, 0], np.ones(4, dtype=bool))
    assert (c.U, c.V, c.T, c.S) == (0, 4, 0, 0)
    c = confusion_counts([0, 0, 0, 1, 1], np.zeros(5, dtype=bool))
    assert (c.U, c.V, c.T, c.S) == (3, 0, 2, 0)
    c = confusion_counts([0, 1, 0, 1], np.array([True, True, False, False]))
    assert (c.U, c.V, c.T, c.S) == (1, 1, 1, 1)


def test_confusion_length_mismatch():
    with pytest.raises(InputError):
        confusion_counts([0, 1], np.array([True]))


def test_rates_examples():
    assert fdp(ConfusionCounts(5, 0, 5, 0)) == 0.0
    assert fdp(ConfusionCounts(0, 1, 0, 9)) == pytest.approx(0.1)
    assert fdp(ConfusionCounts(0, 4, 0, 0)) == 1.0
    assert fnp(ConfusionCounts(5, 0, 0, 5)) == 0.0
    # T=2, n=10, R=5
    assert fnp(ConfusionCounts(3, 2, 2, 3), 10) == pytest.approx(0.4)
    assert fnp(ConfusionCounts(0, 3, 0, 7)) == 0.0


def test_negative_counts_rejected():
    with pytest.raises(InputError):
        ConfusionCounts(-1, 0, 0, 0)


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=200))
def test_counts_reconcile(pairs):
    labels = np.array([a for a, _ in pairs], dtype=int)
    rej = np.array([b for _, b in pairs])
    c = confusion_counts(labels, rej)
    assert c.U + c.V + c.T + c.S == len(pairs)
    assert c.U + c.V == (labels == 0).sum()
    assert c.T + c.S == labels.sum()
    assert 0.0 <= fdp(c) <= 1.0
    assert 0.0 <= fnp(c) <= 1.0
