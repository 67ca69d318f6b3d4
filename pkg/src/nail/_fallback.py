"""Numpy versions of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np
from scipy.special import expit


def l21_rows(R, O, eps):
    """Return (masked row norms, smoothed row norms, smoothed gradient wrt R)."""
    RO = np.where(O, R, 0.0)
    sq = np.einsum("ij,ij->i", RO, RO)
    den = np.sqrt(sq + eps * eps)
    G = np.divide(RO, den[:, None], out=np.zeros_like(RO), where=den[:, None] > 0)
    return np.sqrt(sq), den, G


def focal_terms(Z, Y, O, gamma, a, eps_p):
    """Return (per-row masked focal loss, gradient wrt the logits Z)."""
    p = np.clip(expit(Z), eps_p, 1.0 - eps_p)
    pos = Y == 1.0
    q = np.where(pos, p, 1.0 - p)
    w = np.where(pos, a, 1.0 - a)
    om = 1.0 - q
    lq = np.log(q)
    omg = om ** gamma
    loss = np.where(O, -w * omg * lq, 0.0)
    g = w * (gamma * omg * q * lq - omg * om)
    dZ = np.where(O, np.where(pos, g, -g), 0.0)
    return loss.sum(axis=1), dZ


def nnqp_batch(G, h, nonneg):
    """Minimise ``0.5 x'Gx - h'x`` per batch entry, over ``x >= 0`` when ``nonneg``.

    Lawson-Hanson active set on the normal equations; ``G`` must be SPD.
    """
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    if not nonneg:
        return np.linalg.solve(G, h[..., None])[..., 0]
    B, k = h.shape
    X = np.zeros((B, k))
    max_it = 3 * k + 10
    for b in range(B):
        Gb, hb = G[b], h[b]
        x = np.zeros(k)
        passive = np.zeros(k, bool)
        tol = 1e-13 * (np.abs(hb).max() + 1e-300)
        last = -1
        for _ in range(max_it):
            w = hb - Gb @ x
            cand = np.where(passive, -np.inf, w)
            if last >= 0:
                cand[last] = -np.inf
            best = int(np.argmax(cand))
            if not cand[best] > tol:
                break
            passive[best] = True
            last = -1
            for _ in range(max_it):
                idx = np.flatnonzero(passive)
                if idx.size == 0:
                    break
                try:
                    c = np.linalg.cholesky(Gb[np.ix_(idx, idx)])
                except np.linalg.LinAlgError:
                    passive[best] = False
                    last = best
                    break
                s = np.linalg.solve(c.T, np.linalg.solve(c, hb[idx]))
                neg = s <= 0.0
                if not neg.any():
                    x[:] = 0.0
                    x[idx] = s
                    break
                ratios = np.where(neg, x[idx] / np.where(neg, x[idx] - s, 1.0), np.inf)
                j = int(np.argmin(ratios))
                x[idx] += ratios[j] * (s - x[idx])
                x[idx[j]] = 0.0
                drop = passive & (x <= 0.0)
                if drop[best]:
                    last = best
                x[drop] = 0.0
                passive &= ~drop
        X[b] = x
    return X
