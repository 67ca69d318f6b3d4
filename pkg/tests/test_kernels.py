import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nail.kernels import (KernelSpec, LINEAR, center, gram, hsic, hsic_gradient, median_bandwidth,
                          weighted_hsic_sum)

GAUSS1 = KernelSpec("gaussian", 1.0)
SPECS = [LINEAR, KernelSpec("gaussian", 0.7), KernelSpec("gaussian", "auto")]
matrices = arrays(float, st.tuples(st.integers(2, 6), st.integers(1, 4)),
                  elements=st.floats(-3, 3, allow_nan=False))


def fd_grad(f, U, h=1e-5):
    G = np.zeros_like(U)
    for idx in np.ndindex(*U.shape):
        E = np.zeros_like(U)
        E[idx] = h
        G[idx] = (f(U + E) - f(U - E)) / (2 * h)
    return G


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def test_gram_examples():
    np.testing.assert_array_equal(gram(np.eye(2), LINEAR), np.eye(2))
    U = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_allclose(np.diag(gram(U, GAUSS1)), 1.0)
    np.testing.assert_allclose(gram(np.ones((2, 3)), GAUSS1), np.ones((2, 2)))
    np.testing.assert_allclose(gram(np.array([[0.0], [2.0]]), GAUSS1)[0, 1], np.exp(-2.0))


def test_gram_rejects_single_row():
    with pytest.raises(ValueError):
        gram(np.ones((1, 3)), LINEAR)


def test_median_bandwidth_examples():
    assert median_bandwidth(np.array([[0.0, 0.0], [3.0, 4.0]])) == 5.0
    assert median_bandwidth(np.ones((4, 2))) == 1.0
    assert median_bandwidth(np.array([[0.0], [1.0], [3.0]])) == 2.0


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("poly")
    with pytest.raises(ValueError):
        KernelSpec("gaussian", 0.0)
    assert KernelSpec("gaussian").frozen_for(np.array([[0.0], [2.0]])).bandwidth == 2.0
    assert LINEAR.frozen_for(np.eye(3)) is LINEAR


def test_hsic_identity_is_one():
    assert hsic(np.eye(2), np.eye(2)) == 1.0


def test_hsic_constant_rows_vanish():
    U = np.random.default_rng(1).normal(size=(5, 3))
    for spec in SPECS:
        assert hsic(U, np.ones((5, 2)) * 3.0, spec, spec) == pytest.approx(0.0, abs=1e-12)


def test_hsic_row_mismatch():
    with pytest.raises(ValueError):
        hsic(np.eye(3), np.eye(2))
    with pytest.raises(ValueError):
        hsic_gradient(np.eye(3), np.eye(2))


def test_center_matches_explicit_h():
    K = np.random.default_rng(2).normal(size=(4, 4))
    H = np.eye(4) - 1 / 4
    np.testing.assert_allclose(center(K), H @ K @ H, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(matrices, st.data())
def test_hsic_symmetric_and_nonnegative(U, data):
    U2 = data.draw(arrays(float, (U.shape[0], 2), elements=st.floats(-3, 3, allow_nan=False)))
    for spec in SPECS:
        a, b = hsic(U, U2, spec, spec), hsic(U2, U, spec, spec)
        assert a >= 0.0
        assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@settings(max_examples=40, deadline=None)
@given(matrices, arrays(float, 4, elements=st.floats(-5, 5)))
def test_gaussian_hsic_translation_invariant(U, shift):
    U2 = np.arange(U.shape[0] * 2, dtype=float).reshape(-1, 2) ** 0.5
    shift = shift[:U.shape[1]]
    spec = KernelSpec("gaussian", 1.3)
    assert hsic(U + shift, U2, spec, spec) == pytest.approx(hsic(U, U2, spec, spec), abs=1e-10)


def test_unclamped_linear_hsic_nonnegative():
    rng = np.random.default_rng(3)
    for _ in range(50):
        A, B = rng.normal(size=(5, 3)), rng.normal(size=(5, 4))
        raw = np.sum(center(A @ A.T) * center(B @ B.T)) / 16
        assert raw >= -1e-10


def test_gradient_zero_for_constant_partner():
    U = np.random.default_rng(4).normal(size=(4, 3))
    for spec in (LINEAR, GAUSS1):
        np.testing.assert_allclose(hsic_gradient(U, np.ones((4, 2)), spec, spec), 0.0, atol=1e-14)


@pytest.mark.parametrize("spec,tol", [(LINEAR, 1e-6), (GAUSS1, 1e-5)])
def test_gradient_matches_finite_differences(spec, tol):
    rng = np.random.default_rng(5)
    for _ in range(20):
        U, U2 = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        g = hsic_gradient(U, U2, spec, spec)
        # unclamped value so the oracle stays smooth where HSIC is near zero
        f = lambda A: np.sum(center(gram(A, spec)) * center(gram(U2, spec))) / 9
        assert rel_err(g, fd_grad(f, U)) < tol


def test_weighted_sum_matches_pairwise():
    rng = np.random.default_rng(6)
    U = rng.normal(size=(5, 3))
    others = [rng.normal(size=(5, d)) for d in (2, 4)]
    w = [0.3, 1.7]
    for spec in (LINEAR, GAUSS1):
        S = sum(c * center(gram(B, spec)) for c, B in zip(w, others))
        val, grad = weighted_hsic_sum(U, spec, S)
        assert val == pytest.approx(sum(c * hsic(U, B, spec, spec) for c, B in zip(w, others)), rel=1e-12)
        ref = sum(c * hsic_gradient(U, B, spec, spec) for c, B in zip(w, others))
        np.testing.assert_allclose(grad, ref, rtol=1e-10, atol=1e-14)
        assert weighted_hsic_sum(U, spec, S, want_grad=False)[1] is None
