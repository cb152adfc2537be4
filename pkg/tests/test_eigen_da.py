from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import match_up_to_sign
from mfkl.eigen_da import (
    distance_matrix, gram_eigvecs, kernel_da, kernel_da_samples, knn_classify,
    knn_from_distances, linear_da, principal_components, rkhs_distance, vote_across_features,
    write_da_csv,
)
from mfkl.errors import DataError, NumericalError
from mfkl.kernels import KernelSpec, kernel_values


def rotation(t):
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def test_axis_aligned_components(rng):
    X = rng.normal(size=(400, 2)) * [2.0, 1.0]
    X = X - X.mean(0)
    # Whiten the sample covariance exactly to diag(4, 1).
    L = np.linalg.cholesky(np.cov(X.T, bias=True))
    X = X @ np.linalg.inv(L).T * [2.0, 1.0]
    b = principal_components(X)
    np.testing.assert_allclose(b.values, [4.0, 1.0], atol=1e-10)
    assert match_up_to_sign(b.vectors, np.eye(2)) < 1e-10
    assert np.all(b.vectors[np.abs(b.vectors).argmax(0), [0, 1]] > 0)


def test_rotated_components(rng):
    X = rng.normal(size=(300, 2)) * [3.0, 1.0]
    R = rotation(0.7)
    b0 = principal_components(X)
    b1 = principal_components(X @ R.T)
    assert match_up_to_sign(b1.vectors, R @ b0.vectors) < 1e-8


def test_component_errors():
    with pytest.raises(DataError):
        principal_components(np.ones((5, 3)))
    with pytest.raises(DataError):
        principal_components(np.ones((1, 3)))


def test_basis_invariants(rng):
    b = principal_components(rng.normal(size=(30, 5)) @ rng.normal(size=(5, 5)))
    np.testing.assert_allclose(b.vectors.T @ b.vectors, np.eye(b.rank), atol=1e-10)
    assert np.all(np.diff(b.values) <= 0)


def test_linear_da_identity(rng):
    S = rng.normal(size=(25, 3)) * [3, 2, 1] + 1.0
    np.testing.assert_allclose(linear_da(S, S), S, atol=1e-8)


def test_linear_da_rotated_shifted(rng):
    S = rng.normal(size=(40, 2)) * [2.5, 0.7]
    S[:12] += [4.0, 0.0]  # skewed scores keep the sign choice stable
    t = np.array([5.0, -2.0])
    T = S @ rotation(0.9).T + t
    St = linear_da(S, T)
    np.testing.assert_allclose(St, T, atol=1e-8)
    np.testing.assert_allclose(np.cov(St.T, bias=True), np.cov(T.T, bias=True), atol=1e-8)


def test_component_alignment_example(rng):
    P = rng.normal(size=(50, 10)) @ rng.normal(size=(10, 10))
    Q = rng.normal(size=(40, 10)) @ rng.normal(size=(10, 10))
    UP = principal_components(P).vectors
    UQ = principal_components(Q).vectors
    assert match_up_to_sign(principal_components(Q @ UQ @ UP.T).vectors, UP) < 1e-8


def test_rank_mismatch_warns(rng):
    S = rng.normal(size=(10, 3))
    T = np.c_[rng.normal(size=(12, 2)), np.zeros(12)]
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        St = linear_da(S, T)
    assert any("rank" in str(x.message) for x in w)
    np.testing.assert_allclose(St.mean(0), T.mean(0), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_mean_shift_exact(seed):
    r = np.random.default_rng(seed)
    d = int(r.integers(1, 9))
    S = r.normal(size=(int(r.integers(2, 31)), d)) * r.uniform(0.5, 3, d) + r.normal(size=d)
    T = r.normal(size=(int(r.integers(2, 31)), d)) @ r.normal(size=(d, d)) + 3 * r.normal(size=d)
    St = linear_da(S, T)
    assert np.max(np.abs(St.mean(0) - T.mean(0))) <= 1e-12 * max(1.0, np.abs(T).max())


def test_gram_eigvecs_examples(rng):
    vals = gram_eigvecs(np.eye(4))[1]
    np.testing.assert_allclose(vals, np.ones(4))
    v = rng.normal(size=6)
    V, lam = gram_eigvecs(np.outer(v, v))
    assert V.shape[1] == 1
    assert match_up_to_sign(V, (v / np.linalg.norm(v))[:, None]) < 1e-10
    X = rng.normal(size=(15, 4)) @ rng.normal(size=(4, 4))
    X = X - X.mean(0)
    _, lam = gram_eigvecs(X @ X.T)
    np.testing.assert_allclose(lam, 15 * principal_components(X).values, rtol=1e-8)
    with pytest.raises(DataError):
        gram_eigvecs(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_kernel_da_linear_matches_explicit(seed):
    r = np.random.default_rng(seed)
    d = int(r.integers(1, 9))
    S = r.normal(size=(int(r.integers(2, 31)), d)) * r.uniform(0.5, 3, d) + r.normal(size=d)
    T = r.normal(size=(int(r.integers(2, 31)), d)) @ r.normal(size=(d, d)) + 3 * r.normal(size=d)
    Z = np.vstack([linear_da(S, T), T])
    da = kernel_da_samples(KernelSpec("Linear"), S, T)
    ref = Z @ Z.T
    assert np.abs(ref - da.composite).max() <= 1e-6 * max(1.0, np.abs(ref).max())
    np.testing.assert_allclose(da.composite, da.composite.T, atol=1e-10)


def test_kernel_da_identity_case(rng):
    X = rng.normal(size=(12, 3))
    X[:4] += 2.0
    K = kernel_values(KernelSpec("Gaussian", sigma=1.5), X, X)
    K = 0.5 * (K + K.T)
    da = kernel_da(K, K, K)
    np.testing.assert_allclose(da.k_st_adapted, K, atol=1e-8)


def test_kernel_da_single_source_point(rng):
    T = rng.normal(size=(6, 2))
    S = rng.normal(size=(1, 2))
    da = kernel_da_samples(KernelSpec("Linear"), S, T)
    assert da.rank == 0
    m = T.mean(0)
    np.testing.assert_allclose(da.k_ss_adapted, [[m @ m]], atol=1e-12)
    np.testing.assert_allclose(da.k_st_adapted, (T @ m)[None, :], atol=1e-12)


def test_kernel_da_errors(rng):
    K = np.eye(3)
    with pytest.raises(DataError):
        kernel_da(K, np.ones((2, 3)), K)
    with pytest.raises(NumericalError):
        kernel_da(np.zeros((3, 3)), None, K)
    with pytest.raises(DataError):
        kernel_da(np.array([[1.0, 0.5, 0], [0, 1, 0], [0, 0, 1]]), None, K)


def test_cross_gram_matches_explicit(rng):
    S = rng.normal(size=(9, 3))
    T = rng.normal(size=(11, 3)) @ rng.normal(size=(3, 3)) + 1.0
    P = rng.normal(size=(4, 3))
    da = kernel_da_samples(KernelSpec("Linear"), S, T)
    lin = KernelSpec("Linear")
    np.testing.assert_allclose(da.cross_gram(kernel_values(lin, T, P)), linear_da(S, T) @ P.T,
                               atol=1e-8)
    np.testing.assert_allclose(da.cross_gram(kernel_values(lin, T, T)), da.k_st_adapted, atol=1e-8)


def test_rkhs_distance_properties(rng):
    S = rng.normal(size=(7, 2))
    T = rng.normal(size=(5, 2)) + 1.0
    da = kernel_da_samples(KernelSpec("Linear"), S, T)
    Z = np.vstack([linear_da(S, T), T])
    n = Z.shape[0]
    for i in range(n):
        assert rkhs_distance(da, i, i) == pytest.approx(0.0, abs=1e-9)
        for j in range(n):
            dij = rkhs_distance(da, i, j)
            assert dij == rkhs_distance(da, j, i)
            assert dij == pytest.approx(np.sum((Z[i] - Z[j]) ** 2), abs=1e-6)
    D = distance_matrix(da)
    assert np.all(D >= 0) and np.allclose(D, D.T)
    with pytest.raises(IndexError):
        rkhs_distance(da, 0, n)


def test_knn_examples(rng):
    A = rng.normal(0.0, 0.1, size=(10, 2))
    B = rng.normal(10.0, 0.1, size=(10, 2))
    S = np.vstack([A, B])
    labels = np.array(["A"] * 10 + ["B"] * 10)
    T = rng.normal(0.0, 0.1, size=(6, 2))
    D = ((T[:, None] - S[None]) ** 2).sum(-1)
    assert (knn_from_distances(D, labels, 3) == "A").all()
    D_dup = ((S[[4]][:, None] - S[None]) ** 2).sum(-1)
    assert knn_from_distances(D_dup, labels, 1)[0] == "A"
    # k = n_S with balanced labels forces a vote tie; the closer class wins.
    tie = knn_from_distances(np.array([[1.0, 2.0, 1.5, 0.5]]), np.array([0, 0, 1, 1]), 4)
    assert tie.tolist() == [1]
    equal = knn_from_distances(np.array([[1.0, 1.0]]), np.array([1, 0]), 2)
    assert equal.tolist() == [0]
    with pytest.raises(DataError):
        knn_from_distances(D, labels, 0)
    with pytest.raises(DataError):
        knn_from_distances(np.zeros((1, 0)), np.array([]), 1)


def test_knn_classify_on_composite(rng):
    S = np.vstack([rng.normal(0, 0.1, size=(8, 2)), rng.normal(10, 0.1, size=(5, 2))])
    labels = np.array([0] * 8 + [1] * 5)
    T = np.vstack([rng.normal(0, 0.1, size=(8, 2)), rng.normal(10, 0.1, size=(5, 2))])
    da = kernel_da_samples(KernelSpec("Linear"), S, T, source_labels=labels)
    np.testing.assert_array_equal(knn_classify(da, 1), labels)


def test_vote_examples():
    p = np.array([1, 2, 3])
    np.testing.assert_array_equal(vote_across_features([p]), p)
    out = vote_across_features([np.array([1, 1]), np.array([2, 1]), np.array([2, 3])])
    assert out.tolist() == [2, 1]
    w = vote_across_features([np.array([1]), np.array([2]), np.array([2])], [0.6, 0.2, 0.2])
    assert w.tolist() == [1]
    assert vote_across_features([np.array([5]), np.array([3])]).tolist() == [3]
    with pytest.raises(DataError):
        vote_across_features([np.array([1, 2]), np.array([1])])


def test_write_da_csv(rng, tmp_path):
    da = kernel_da_samples(KernelSpec("Linear"), rng.normal(size=(4, 2)), rng.normal(size=(3, 2)))
    kp, dp = write_da_csv(da, tmp_path)
    np.testing.assert_allclose(np.loadtxt(kp, delimiter=","), da.composite)
    assert np.loadtxt(dp, delimiter=",").shape == (7, 7)
