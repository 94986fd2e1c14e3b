import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eigenavatar import subspace
from eigenavatar.errors import ParameterError

from oracles import brute_force_pca


@st.composite
def sample_matrices(draw):
    D = draw(st.integers(2, 30))
    F = draw(st.integers(2, 15))
    seed = draw(st.integers(0, 2 ** 31 - 1))
    return np.random.default_rng(seed).normal(size=(D, F))


def test_frozen_two_column_example():
    # columns differ by (2, 0, 0): one mode along x with scatter 2 * 1^2 = 2
    P = np.array([[0.0, 2.0], [0.0, 0.0], [1.0, 1.0]])
    sub = subspace.fit(P, 1)
    np.testing.assert_allclose(sub.mean, [1.0, 0.0, 1.0])
    np.testing.assert_allclose(sub.basis[:, 0], [1.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(sub.eigenvalues, [2.0])
    np.testing.assert_allclose(sub.embed(P), [[-1.0, 1.0]])


def test_matches_brute_force_on_a_fixed_instance():
    P = np.random.default_rng(11).normal(size=(12, 9))
    sub = subspace.fit(P, 5)
    mean, vec, lam = brute_force_pca(P, 5)
    np.testing.assert_allclose(sub.basis, vec, atol=1e-10)
    np.testing.assert_allclose(sub.eigenvalues, lam, rtol=1e-10)


@settings(max_examples=40)
@given(sample_matrices(), st.data())
def test_fit_invariants(P, data):
    L = data.draw(st.integers(1, min(P.shape)))
    sub = subspace.fit(P, L)
    E = sub.basis
    np.testing.assert_allclose(E.T @ E, np.eye(L), atol=1e-10)
    assert np.all(np.diff(sub.eigenvalues) <= 0) and np.all(sub.eigenvalues >= 0)
    # sign convention: the largest-magnitude entry of each column is positive
    assert np.all(E[np.argmax(np.abs(E), axis=0), np.arange(L)] > 0)
    # total scatter is preserved by the spectrum
    assert np.isclose(sub.spectrum.sum(), np.sum((P - P.mean(1, keepdims=True)) ** 2))


@settings(max_examples=40)
@given(sample_matrices())
def test_reconstruction_is_a_projection(P):
    L = max(1, min(P.shape) // 2)
    sub = subspace.fit(P, L)
    once = sub.reconstruct(sub.embed(P))
    twice = sub.reconstruct(sub.embed(once))
    np.testing.assert_allclose(once, twice, atol=1e-10)
    np.testing.assert_allclose(sub.embed(sub.mean), np.zeros(L), atol=1e-12)


@settings(max_examples=30)
@given(sample_matrices())
def test_error_does_not_grow_with_L(P):
    errs = []
    for L in range(1, min(P.shape) + 1):
        sub = subspace.fit(P, L)
        errs.append(np.sum((sub.reconstruct(sub.embed(P)) - P) ** 2))
    assert all(a >= b - 1e-9 for a, b in zip(errs, errs[1:]))


@given(sample_matrices())
def test_contribution_curve_is_monotone_and_reaches_one(P):
    sub = subspace.fit(P, 1)
    curve = subspace.contribution_curve(sub.spectrum)
    assert np.all(np.diff(curve) >= -1e-15)
    assert abs(curve[-1] - 1.0) < 1e-12
    assert subspace.cumulative_contribution(sub.spectrum, 1) == pytest.approx(curve[0])


def test_contribution_of_zero_spectrum_is_one():
    assert subspace.cumulative_contribution(np.zeros(3), 1) == 1.0


def test_truncation_keeps_leading_modes():
    P = np.random.default_rng(2).normal(size=(8, 7))
    full = subspace.fit(P, 6)
    short = full.truncated(3)
    np.testing.assert_array_equal(short.basis, full.basis[:, :3])
    np.testing.assert_array_equal(short.spectrum, full.spectrum)
    with pytest.raises(ParameterError):
        full.truncated(7)


def test_rank_deficient_input_has_exact_zero_tail():
    P = np.outer(np.arange(1.0, 6.0), np.arange(4.0))  # rank 1 after centring
    sub = subspace.fit(P, 3)
    assert sub.eigenvalues[0] > 0 and np.all(sub.eigenvalues[1:] == 0.0)


def test_rejects_bad_input():
    with pytest.raises(ParameterError):
        subspace.fit(np.ones((3, 2)), 3)
    with pytest.raises(ParameterError):
        subspace.fit(np.array([[1.0, np.nan]]), 1)
    sub = subspace.fit(np.random.default_rng(0).normal(size=(4, 3)), 2)
    with pytest.raises(ParameterError):
        sub.embed(np.zeros(5))
    with pytest.raises(ParameterError):
        sub.reconstruct(np.zeros(3))


@given(sample_matrices())
def test_binary_round_trip(P):
    sub = subspace.fit(P, 1)
    back, end = subspace.from_bytes(subspace.to_bytes(sub))
    assert end == len(subspace.to_bytes(sub))
    for a, b in ((sub.mean, back.mean), (sub.basis, back.basis),
                 (sub.eigenvalues, back.eigenvalues), (sub.spectrum, back.spectrum)):
        np.testing.assert_array_equal(a, b)


def test_single_precision_storage_rounds_to_float32():
    sub = subspace.fit(np.random.default_rng(4).normal(size=(6, 5)), 3)
    q = subspace.quantized(sub, 4)
    np.testing.assert_array_equal(q.basis, sub.basis.astype(np.float32).astype(float))
    assert subspace.quantized(q, 4).basis.tobytes() == q.basis.tobytes()
