"""Pick the compiled kernels when available.

Set ``NAIL_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback
if os.environ.get("NAIL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def _as_c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _as_mask(o):
    return np.ascontiguousarray(o, dtype=bool).view(np.uint8)


def l21_rows(R, O, eps):
    if _impl is _fallback:
        return _fallback.l21_rows(R, O, eps)
    return _impl.l21_rows(_as_c(R), _as_mask(O), float(eps))


def focal_terms(Z, Y, O, gamma, a, eps_p):
    if _impl is _fallback:
        return _fallback.focal_terms(Z, Y, O, gamma, a, eps_p)
    return _impl.focal_terms(_as_c(Z), _as_c(Y), _as_mask(O), float(gamma), float(a), float(eps_p))


def nnqp_batch(G, h, nonneg=True):
    if _impl is _fallback:
        return _fallback.nnqp_batch(G, h, nonneg)
    return _impl.nnqp_batch(np.ascontiguousarray(G, dtype=np.float64), _as_c(h), bool(nonneg))
