"""Objective terms: masked L2,1 reconstruction, focal label loss, weighted HSIC.

Each term comes with analytic gradients. The L2,1 gradient is exact for the
smoothed surrogate sum_i sqrt(||r_i||^2 + eps^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import _backend
from .kernels import hsic


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    a: float = 0.5
    s: float = 0.5
    eps_21: float = 1e-8
    eps_p: float = 1e-12

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if not 0.0 <= self.a <= 1.0:
            raise ValueError("a must lie in [0, 1]")
        if not 0.0 < self.s < 1.0:
            raise ValueError("s must lie in (0, 1)")
        if self.eps_21 <= 0 or self.eps_p <= 0:
            raise ValueError("smoothing constants must be positive")


@dataclass(frozen=True)
class ObjectiveBreakdown:
    reconstruction: float
    label: float
    hsic: float

    @property
    def total(self) -> float:
        return self.reconstruction + self.label + self.hsic


def _check(R, O):
    R = np.asarray(R, dtype=float)
    O = np.asarray(O, dtype=bool)
    if R.shape != O.shape:
        raise ValueError(f"shape mismatch: {R.shape} vs mask {O.shape}")
    return R, O


# ---------------------------------------------------------------- features


def masked_l21(R, O) -> float:
    """Sum of Euclidean norms of the rows of ``O * R``."""
    return float(_backend.l21_rows(*_check(R, O), 0.0)[0].sum())


def smoothed_l21(R, O, eps: float) -> float:
    return float(_backend.l21_rows(*_check(R, O), eps)[1].sum())


def l21_grad(R, O, eps: float = 1e-8) -> np.ndarray:
    """Gradient of the smoothed L2,1 surrogate with respect to ``R``; zero on masked entries."""
    return _backend.l21_rows(*_check(R, O), eps)[2]


def masked_sq(R, O) -> float:
    R, O = _check(R, O)
    RO = np.where(O, R, 0.0)
    return float(np.sum(RO * RO))


# ------------------------------------------------------------------ labels


def focal_loss(y, p, cfg: LossConfig = LossConfig()):
    """Elementwise focal loss ``-a_ij (1-q)^gamma log q``; broadcasts over arrays."""
    y = np.asarray(y, dtype=float)
    p = np.clip(np.asarray(p, dtype=float), cfg.eps_p, 1.0 - cfg.eps_p)
    pos = y == 1.0
    q = np.where(pos, p, 1.0 - p)
    w = np.where(pos, cfg.a, 1.0 - cfg.a)
    out = -w * (1.0 - q) ** cfg.gamma * np.log(q)
    return float(out) if out.ndim == 0 else out


def _logits(F, U, Y, O):
    F = np.asarray(F, dtype=float)
    U = np.asarray(U, dtype=float)
    if F.shape[1] != U.shape[0] or np.shape(Y) != (F.shape[0], U.shape[1]) or np.shape(O) != np.shape(Y):
        raise ValueError("shape mismatch between F, U, Y and the label mask")
    return F @ U


def label_term(F, U, Y, O, cfg: LossConfig = LossConfig()) -> float:
    """Focal loss summed over the observed label entries."""
    return float(label_term_rows(F, U, Y, O, cfg).sum())


def label_term_rows(F, U, Y, O, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Per-sample contributions to :func:`label_term`."""
    Z = _logits(F, U, Y, O)
    return _backend.focal_terms(Z, Y, O, cfg.gamma, cfg.a, cfg.eps_p)[0]


def label_term_grads(F, U, Y, O, cfg: LossConfig = LossConfig()):
    """Return ``(dL/dF, dL/dU)`` for :func:`label_term`."""
    Z = _logits(F, U, Y, O)
    dZ = _backend.focal_terms(Z, Y, O, cfg.gamma, cfg.a, cfg.eps_p)[1]
    return dZ @ np.asarray(U).T, np.asarray(F).T @ dZ


def label_sq_term(F, U, Y, O) -> float:
    """Masked squared error between sigmoid(F U) and Y."""
    return float(label_sq_rows(F, U, Y, O).sum())


def label_sq_rows(F, U, Y, O) -> np.ndarray:
    Z = _logits(F, U, Y, O)
    D = np.where(O, expit(Z) - Y, 0.0)
    return np.einsum("ij,ij->i", D, D)


def label_sq_grads(F, U, Y, O):
    Z = _logits(F, U, Y, O)
    p = expit(Z)
    dZ = np.where(O, 2.0 * (p - Y) * p * (1.0 - p), 0.0)
    return dZ @ np.asarray(U).T, np.asarray(F).T @ dZ


# -------------------------------------------------------------------- hsic


def pairwise_hsic(Us, kernels) -> np.ndarray:
    """Symmetric matrix of HSIC values between all weight matrices (zero diagonal).

    Returns zeros when the latent dimension is below 2, where HSIC is undefined.
    """
    V = len(Us)
    h = np.zeros((V, V))
    if Us[0].shape[0] < 2:
        return h
    for v in range(V):
        for w in range(v + 1, V):
            h[v, w] = h[w, v] = hsic(Us[v], Us[w], kernels[v], kernels[w])
    return h


# --------------------------------------------------------------- objective


def objective(state, ds, cfg: LossConfig, lam: float, mu: float, kernels,
              smooth: bool = False, frobenius: bool = False) -> ObjectiveBreakdown:
    """Evaluate the full objective at ``state`` (F, U list, alpha, beta).

    ``smooth`` swaps L2,1 for its eps-smoothed surrogate; ``frobenius`` uses
    squared Frobenius reconstruction and squared label error instead.
    """
    m = ds.m
    alpha = np.asarray(state.alpha, dtype=float)
    beta = np.asarray(state.beta, dtype=float)
    if alpha.shape != (m,) or beta.shape != (m + 1, m + 1) or len(state.U) != m + 1:
        raise ValueError("alpha/beta/U dimensions do not match the dataset")
    F = state.F
    recon = 0.0
    for v in range(m):
        R = ds.views[v] - F @ state.U[v]
        O = ds.feature_masks[v]
        if frobenius:
            e = masked_sq(R, O)
        elif smooth:
            e = smoothed_l21(R, O, cfg.eps_21)
        else:
            e = masked_l21(R, O)
        recon += alpha[v] ** cfg.s * e
    label = 0.0
    if lam:
        Ul = state.U[m]
        if frobenius:
            label = lam * label_sq_term(F, Ul, ds.labels, ds.label_mask)
        else:
            label = lam * label_term(F, Ul, ds.labels, ds.label_mask, cfg)
    pen = 0.0
    if mu:
        pen = mu * float(np.sum(beta * pairwise_hsic(state.U, kernels)))
    return ObjectiveBreakdown(recon, label, pen)
