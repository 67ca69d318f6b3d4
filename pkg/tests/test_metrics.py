import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nail.metrics import average_precision, hamming_score, ranking_ap


def plain_ap(truth_in_order):
    hits, total = 0, 0.0
    for r, t in enumerate(truth_in_order, 1):
        if t:
            hits += 1
            total += hits / r
    return total / hits


def brute_ap(scores, truth):
    """Mean AP over every ordering that sorts ``scores`` in descending order."""
    vals = []
    for perm in itertools.permutations(range(len(scores))):
        s = scores[list(perm)]
        if np.all(s[:-1] >= s[1:]):
            vals.append(plain_ap(truth[list(perm)]))
    return float(np.mean(vals))


def brute_average_precision(scores, truth, mask):
    aps = [brute_ap(scores[mask[:, j], j], truth[mask[:, j], j])
           for j in range(truth.shape[1]) if np.any(truth[mask[:, j], j] == 1)]
    return float(np.mean(aps))


def test_hamming_examples():
    truth = np.array([[1, 0], [0, 1]])
    mask = np.ones((2, 2), bool)
    assert hamming_score(truth, truth, mask) == 1.0
    assert hamming_score(1 - truth, truth, mask) == 0.0
    assert hamming_score(np.array([[1, 0], [0, 0]]), truth, mask) == 0.75
    assert hamming_score(np.array([[1, 1], [1, 1]]), truth, np.array([[1, 0], [0, 1]], bool)) == 1.0


def test_hamming_errors():
    with pytest.raises(ValueError):
        hamming_score(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), bool))
    with pytest.raises(ValueError):
        hamming_score(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 3), bool))


def test_ap_examples():
    truth = np.array([[1, 0], [0, 1], [0, 0]])
    mask = np.ones((3, 2), bool)
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.1, 0.3]])
    assert average_precision(scores, truth, mask) == 1.0
    assert ranking_ap(np.array([0.5, 0.9, 0.1]), np.array([1, 0, 0])) == 0.5


def test_ap_ties_average_over_orders():
    # two tied entries, one positive: AP is (1 + 1/2) / 2
    assert ranking_ap(np.array([0.3, 0.3]), np.array([1, 0])) == pytest.approx(0.75, abs=1e-15)


def test_ap_errors():
    with pytest.raises(ValueError):
        average_precision(np.ones((2, 1)), np.zeros((2, 1)), np.ones((2, 1), bool))
    with pytest.raises(ValueError):
        ranking_ap(np.ones(2), np.zeros(2))


def test_ap_matches_brute_force():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 100:
        n, l = rng.integers(2, 8), rng.integers(1, 4)
        truth = (rng.random((n, l)) < 0.4).astype(int)
        scores = rng.integers(0, 4, (n, l)) / 4.0  # coarse grid forces ties
        mask = rng.random((n, l)) < 0.8
        if mask.sum(axis=0).max() > 6 or not np.any(truth[mask] == 1):
            continue
        if not any(np.any(truth[mask[:, j], j] == 1) for j in range(l)):
            continue
        assert average_precision(scores, truth, mask) == pytest.approx(
            brute_average_precision(scores, truth, mask), abs=1e-12)
        checked += 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_metrics_invariant_to_row_permutation(seed):
    rng = np.random.default_rng(seed)
    truth = (rng.random((8, 3)) < 0.5).astype(int)
    truth[0] = 1
    scores, mask = rng.random((8, 3)), rng.random((8, 3)) < 0.7
    mask[0] = True
    perm = rng.permutation(8)
    pred = (scores > 0.5).astype(int)
    assert average_precision(scores[perm], truth[perm], mask[perm]) == pytest.approx(
        average_precision(scores, truth, mask), abs=1e-14)
    assert hamming_score(pred[perm], truth[perm], mask[perm]) == hamming_score(pred, truth, mask)
    assert hamming_score(pred, truth, mask) + hamming_score(1 - pred, truth, mask) == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_ap_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    truth = (rng.random((7, 2)) < 0.5).astype(int)
    truth[0] = 1
    scores = rng.random((7, 2))
    mask = np.ones((7, 2), bool)
    assert average_precision(np.exp(3 * scores) - 2, truth, mask) == pytest.approx(
        average_precision(scores, truth, mask), abs=1e-14)
