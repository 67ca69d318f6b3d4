"""Gram matrices over weight-matrix rows and the biased HSIC estimator.

HSIC(U, U') = (k-1)^-2 tr(K H K' H) where K, K' are k x k Grams over the
rows of U, U' and H = I - 11^T/k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"
    bandwidth: float | str = "auto"

    def __post_init__(self):
        if self.kind not in ("linear", "gaussian"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.bandwidth != "auto" and not float(self.bandwidth) > 0:
            raise ValueError("bandwidth must be positive")

    def frozen_for(self, U) -> "KernelSpec":
        """Resolve an ``auto`` bandwidth against ``U``."""
        if self.kind == "gaussian" and self.bandwidth == "auto":
            return KernelSpec("gaussian", median_bandwidth(U))
        return self


LINEAR = KernelSpec("linear")


def _check_rows(U):
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] < 2:
        raise ValueError("HSIC needs a matrix with at least 2 rows")
    return U


def median_bandwidth(U) -> float:
    """Median pairwise Euclidean distance between rows (1.0 if that is zero)."""
    d = pdist(_check_rows(U))
    med = float(np.median(d))
    return med if med > 0 else 1.0


def gram(U, spec: KernelSpec) -> np.ndarray:
    U = _check_rows(U)
    if spec.kind == "linear":
        return U @ U.T
    sigma = spec.frozen_for(U).bandwidth
    diff = U[:, None, :] - U[None, :, :]
    return np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / (2.0 * sigma ** 2))


def center(K) -> np.ndarray:
    """H K H without forming H."""
    K = K - K.mean(axis=0, keepdims=True)
    return K - K.mean(axis=1, keepdims=True)


def hsic(U, U2, spec: KernelSpec = LINEAR, spec2: KernelSpec = LINEAR) -> float:
    U, U2 = _check_rows(U), _check_rows(U2)
    if U.shape[0] != U2.shape[0]:
        raise ValueError("HSIC arguments must have the same number of rows")
    k = U.shape[0]
    val = float(np.sum(center(gram(U, spec)) * center(gram(U2, spec2)))) / (k - 1) ** 2
    return max(val, 0.0)


def hsic_gradient(U, U2, spec: KernelSpec = LINEAR, spec2: KernelSpec = LINEAR) -> np.ndarray:
    """d HSIC(U, U2) / dU with U2 and every bandwidth held fixed.

    An ``auto`` bandwidth is resolved from the current ``U`` and then treated
    as a constant, so pass explicit bandwidths when differentiating through
    several evaluations.
    """
    U, U2 = _check_rows(U), _check_rows(U2)
    if U.shape[0] != U2.shape[0]:
        raise ValueError("HSIC arguments must have the same number of rows")
    k = U.shape[0]
    c = 1.0 / (k - 1) ** 2
    M = center(gram(U2, spec2))
    if spec.kind == "linear":
        return 2.0 * c * (M @ U)
    spec = spec.frozen_for(U)
    W = M * gram(U, spec)
    lap = np.diag(W.sum(axis=1)) - W
    return -(2.0 * c / spec.bandwidth ** 2) * (lap @ U)


def weighted_hsic_sum(U, spec: KernelSpec, centered, want_grad=True):
    """Value and U-gradient of ``sum_w c_w HSIC(U, U_w)`` given ``centered = sum_w c_w H K_w H``.

    Because ``centered`` is already centered, tr(K H M H) = tr(K M).
    """
    U = _check_rows(U)
    c = 1.0 / (U.shape[0] - 1) ** 2
    K = gram(U, spec)
    val = c * float(np.sum(K * centered))
    if not want_grad:
        return val, None
    if spec.kind == "linear":
        return val, 2.0 * c * (centered @ U)
    spec = spec.frozen_for(U)
    W = centered * K
    lap = np.diag(W.sum(axis=1)) - W
    return val, -(2.0 * c / spec.bandwidth ** 2) * (lap @ U)
