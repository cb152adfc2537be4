from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfkl.errors import DataError
from mfkl.features import (
    Codebook, bow_encode, dense_patch_descriptors, fit_codebook, fit_eigenfaces, fit_fisherfaces,
    gabor_face, gabor_kernel, gabor_responses, lbp_codes, lbp_histogram, vlad_encode, weber_face,
)


def test_lbp_constant_image():
    h = lbp_histogram(np.full((10, 10), 0.3), 2, 2).values.reshape(4, 256)
    np.testing.assert_array_equal(h[:, 255], 1.0)
    assert h.sum() == 4.0


def test_lbp_hand_code():
    # Ring clockwise from top-left: 1 2 3 4 9 6 7 8 against centre 5.
    img = np.array([[1, 2, 3], [8, 5, 4], [7, 6, 9]], dtype=float) / 10
    assert lbp_codes(img).tolist() == [[0b00001111]]
    tie = np.array([[5, 0, 0], [0, 5, 0], [0, 0, 0]], dtype=float) / 10
    assert lbp_codes(tie).tolist() == [[0b10000000]]


def test_lbp_dims_and_errors(rng):
    fv = lbp_histogram(rng.uniform(size=(12, 12)), 2, 2)
    assert fv.dims == 4 * 256 and fv.feature_id == "LBP"
    np.testing.assert_allclose(fv.values.reshape(4, 256).sum(1), 1.0)
    with pytest.raises(DataError):
        lbp_histogram(np.zeros((2, 5)))
    with pytest.raises(DataError):
        lbp_histogram(rng.uniform(size=(4, 4)), 3, 3)


def test_eigenfaces_examples(rng):
    a, b = rng.uniform(size=(6, 6)), rng.uniform(size=(6, 6))
    assert fit_eigenfaces([a, b]).n_components == 1
    patterns = np.linalg.qr(rng.normal(size=(64, 3)))[0].T
    mean = rng.uniform(size=64)
    imgs = [(mean + rng.normal(size=3) * [3, 2, 1] @ patterns).reshape(8, 8) for _ in range(12)]
    model = fit_eigenfaces(imgs, variance_keep=1.0)
    assert model.n_components == 3
    X = np.stack([im.ravel() for im in imgs])
    ev = np.linalg.svd(X - X.mean(0), compute_uv=False) ** 2 / len(imgs)
    assert np.sum(ev > 1e-8) == 3


def test_eigenfaces_reconstruction_monotone(rng):
    imgs = [rng.uniform(size=(6, 6)) for _ in range(15)]
    X = np.stack([im.ravel() for im in imgs])
    errs = []
    for keep in (0.5, 0.8, 0.95, 1.0):
        m = fit_eigenfaces(imgs, keep)
        Z = (X - m.mean) @ m.components
        errs.append(np.sum((X - m.mean - Z @ m.components.T) ** 2))
    assert all(e1 >= e2 - 1e-12 for e1, e2 in zip(errs, errs[1:]))
    with pytest.raises(DataError):
        fit_eigenfaces([imgs[0], np.zeros((5, 5))])


def test_fisherfaces_examples(rng):
    base = [rng.uniform(size=(6, 6)) for _ in range(2)]
    imgs, labels = [], []
    for c in range(2):
        for _ in range(6):
            imgs.append(np.clip(base[c] + 0.02 * rng.normal(size=(6, 6)), 0, 1))
            labels.append(c)
    m = fit_fisherfaces(imgs, labels)
    assert m.n_components == 1
    z = np.array([m.transform(im).values[0] for im in imgs])
    labels = np.array(labels)
    gap = abs(z[labels == 0].mean() - z[labels == 1].mean())
    pooled = np.sqrt(0.5 * (z[labels == 0].var() + z[labels == 1].var()))
    assert gap > 5 * pooled
    with pytest.raises(DataError):
        fit_fisherfaces(imgs, [0] * len(imgs))
    with pytest.raises(DataError):
        fit_fisherfaces(imgs[:3], [0, 0, 1])


def test_gabor_kernel_is_dc_free():
    for v in range(8):
        for mu in range(8):
            assert abs(gabor_kernel(v, mu, 8).sum()) < 1e-12


def test_gabor_constant_image():
    resp = gabor_responses(np.full((32, 32), 0.6), range(5), 4)
    assert np.linalg.norm(resp) < 1e-6
    assert np.all(gabor_face(np.full((32, 32), 0.6)).values == 0)


def test_gabor_grating_selects_matching_filter():
    kv = math.pi / math.sqrt(2) ** 2  # scale v = 2
    x = np.arange(64)
    grating = np.tile(0.5 + 0.4 * np.cos(kv * x), (64, 1))  # varies along x: orientation 0
    R = gabor_responses(grating, range(5), 4)
    energy = (R[:, :, 16:48, 16:48] ** 2).sum((2, 3))
    assert np.unravel_index(energy.argmax(), energy.shape) == (2, 0)


def test_gabor_dims_and_norm(rng):
    fv = gabor_face(rng.uniform(size=(32, 24)), scales=[0, 1, 2], orientations_count=4)
    assert fv.dims == 3 * 4 * (32 // 4) * (24 // 4)
    assert np.linalg.norm(fv.values) == pytest.approx(1.0)
    with pytest.raises(DataError):
        gabor_face(rng.uniform(size=(8, 8)), scales=[])


def test_weber_examples(rng):
    assert np.all(weber_face(np.full((5, 5), 0.4)).values == 0)
    img = np.full((5, 5), 0.1)
    img[2, 2] = 1.0
    got = weber_face(img, alpha_w=0.5).values.reshape(5, 5)[2, 2]
    assert got == pytest.approx(math.atan(8 * 0.5 * (1 - 0.1) / 1.0))
    with pytest.raises(DataError):
        weber_face(np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(0.05, 1.0))
def test_weber_scale_invariance(seed, c):
    img = np.random.default_rng(seed).uniform(0.05, 0.9, size=(7, 7))
    np.testing.assert_allclose(weber_face(img).values, weber_face(c * img).values, atol=1e-9)


def test_dense_descriptor_examples(rng):
    assert np.all(dense_patch_descriptors(np.full((16, 16), 0.5)) == 0)
    edge = np.zeros((16, 16))
    edge[:, 8:] = 1.0
    d = dense_patch_descriptors(edge).reshape(16, 8)
    by_bin = d.sum(0)
    assert by_bin[0] == by_bin.max() and by_bin[1:].sum() == 0
    assert dense_patch_descriptors(rng.uniform(size=(20, 23)), stride=1).shape == (5 * 8, 128)
    with pytest.raises(DataError):
        dense_patch_descriptors(rng.uniform(size=(10, 20)))


def test_dense_descriptor_normalisation(rng):
    D = dense_patch_descriptors(rng.uniform(size=(24, 24)), stride=4)
    np.testing.assert_allclose(np.linalg.norm(D, axis=1), 1.0)
    assert D.min() >= -1e-12
    # Clipping caps how far one bin can dominate its row.
    assert D.max() < 0.9


def two_clusters(rng, n_a=30, n_b=70):
    a = rng.normal(0.0, 0.01, size=(n_a, 4))
    b = rng.normal(5.0, 0.01, size=(n_b, 4))
    return np.vstack([a, b]), a, b


def test_codebook_examples(rng):
    D, a, b = two_clusters(rng)
    one = fit_codebook(D, k=1, seed=0)
    np.testing.assert_allclose(one.centers[0], D.mean(0), atol=1e-12)
    two = fit_codebook(D, k=2, seed=3)
    centers = two.centers[np.argsort(two.centers[:, 0])]
    np.testing.assert_allclose(centers, [a.mean(0), b.mean(0)], atol=1e-3)
    again = fit_codebook(D, k=2, seed=3)
    assert np.array_equal(two.centers, again.centers)
    with pytest.raises(DataError):
        fit_codebook(D[:3], k=4)


def test_bow_examples(rng):
    D, _, _ = two_clusters(rng)
    cb = fit_codebook(D, k=2, seed=0)
    lo = int(np.argmin(cb.centers[:, 0]))
    h = bow_encode(D, cb).values
    assert h.sum() == pytest.approx(1.0)
    assert h[lo] == pytest.approx(0.3) and h[1 - lo] == pytest.approx(0.7)
    ind = bow_encode(np.repeat(cb.centers[[1]], 5, axis=0), cb).values
    assert ind.tolist() == [0.0, 1.0]
    tie = Codebook(np.array([[0.0], [2.0]]), 0)
    assert bow_encode(np.array([[1.0]]), tie).values.tolist() == [1.0, 0.0]
    with pytest.raises(DataError):
        bow_encode(np.zeros((0, 4)), cb)


def test_vlad_examples(rng):
    cb = Codebook(rng.normal(size=(3, 128)), 0)
    z = vlad_encode(cb.centers, cb)
    assert z.dims == 3 * 128 and np.all(z.values == 0)
    one = Codebook(np.zeros((1, 128)), 0)
    x = rng.normal(size=128)
    v = vlad_encode(x[None, :], one).values
    expect = np.sign(x) * np.sqrt(np.abs(x))
    np.testing.assert_allclose(v, expect / np.linalg.norm(expect))
    assert np.linalg.norm(vlad_encode(rng.normal(size=(9, 128)), cb).values) == pytest.approx(1.0)
