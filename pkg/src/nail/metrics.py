"""Hamming Score and Average Precision over held-out label entries."""

from __future__ import annotations

import numpy as np


def _mask(mask, shape):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ValueError(f"mask shape {mask.shape} does not match {shape}")
    return mask


def hamming_score(pred, truth, mask) -> float:
    """Fraction of masked entries where ``pred`` equals ``truth``."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    mask = _mask(mask, truth.shape)
    if not mask.any():
        raise ValueError("evaluation mask selects no entries")
    return float(np.mean(pred[mask] == truth[mask]))


def ranking_ap(scores, truth) -> float:
    """Average precision of one ranked list, averaged over all tie-breaking orders.

    Within a tie block of size g holding p positives, preceded by N entries of
    which P are positive, a positive in block position r (prob p/g) sees on
    average (r-1)(p-1)/(g-1) positives ahead of it inside the block, so the
    block contributes sum_r (p/g) (P + 1 + (r-1)(p-1)/(g-1)) / (N + r).
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth) == 1
    n_pos = int(truth.sum())
    if n_pos == 0:
        raise ValueError("no positives to rank")
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], truth[order]
    total, seen, seen_pos, i = 0.0, 0, 0, 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            j += 1
        g = j - i
        p = int(t[i:j].sum())
        if p:
            r = np.arange(1, g + 1)
            ahead = (r - 1) * (p - 1) / (g - 1) if g > 1 else np.zeros(1)
            total += float(np.sum((p / g) * (seen_pos + 1 + ahead) / (seen + r)))
        seen += g
        seen_pos += p
        i = j
    return total / n_pos


def average_precision(scores, truth, mask) -> float:
    """Macro average over labels of the held-out ranking AP.

    Only columns with at least one held-out positive count.
    """
    scores, truth = np.asarray(scores, dtype=float), np.asarray(truth)
    mask = _mask(mask, truth.shape)
    aps = []
    for j in range(truth.shape[1]):
        sel = mask[:, j]
        if np.any(truth[sel, j] == 1):
            aps.append(ranking_ap(scores[sel, j], truth[sel, j]))
    if not aps:
        raise ValueError("no label column has a held-out positive")
    return float(np.mean(aps))
