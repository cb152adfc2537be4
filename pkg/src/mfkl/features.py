"""Face feature extractors producing one fixed-length vector per image."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.signal import fftconvolve
from sklearn.cluster import KMeans

from .errors import DataError
from .imageproc import as_image


class FeatureId(str, Enum):
    LBP = "LBP"
    EIGEN = "EigenFace"
    FISHER = "FisherFace"
    GABOR = "GaborFace"
    WEBER = "WeberFace"
    BOW = "BOW"
    VLAD = "VLAD"


@dataclass(frozen=True)
class FeatureVector:
    feature_id: str
    values: np.ndarray

    @property
    def dims(self) -> int:
        return self.values.size


def _l2(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else np.zeros_like(v)


# -- LBP --------------------------------------------------------------------

# Clockwise from the top-left neighbour; the first neighbour is the MSB.
_LBP_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]


def lbp_codes(img) -> np.ndarray:
    """8-bit LBP label of every interior pixel (neighbour >= centre sets the bit)."""
    a = as_image(img)
    h, w = a.shape
    if h < 3 or w < 3:
        raise DataError("LBP needs an image of at least 3x3 pixels")
    centre = a[1:-1, 1:-1]
    codes = np.zeros(centre.shape, dtype=np.int64)
    for bit, (dy, dx) in enumerate(_LBP_OFFSETS):
        nb = a[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        codes |= (nb >= centre).astype(np.int64) << (7 - bit)
    return codes


def lbp_histogram(img, grid_rows: int = 4, grid_cols: int = 4) -> FeatureVector:
    """Concatenated per-cell 256-bin LBP histograms, each summing to one."""
    codes = lbp_codes(img)
    if grid_rows < 1 or grid_cols < 1 or grid_rows > codes.shape[0] or grid_cols > codes.shape[1]:
        raise DataError(f"cannot split a {codes.shape} label image into {grid_rows}x{grid_cols} cells")
    hists = []
    for band in np.array_split(codes, grid_rows, axis=0):
        for cell in np.array_split(band, grid_cols, axis=1):
            h = np.bincount(cell.ravel(), minlength=256).astype(float)
            hists.append(h / h.sum())
    return FeatureVector(FeatureId.LBP.value, np.concatenate(hists))


# -- Eigenfaces / Fisherfaces -----------------------------------------------

def _stack_images(images: Sequence) -> np.ndarray:
    images = [as_image(im) for im in images]
    if not images:
        raise DataError("no images given")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise DataError("all images must have the same size")
    return np.stack([im.ravel() for im in images])


@dataclass(frozen=True)
class ProjectionModel:
    """Affine projection ``(x - mean) @ components``."""

    feature_id: str
    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray | None = None

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def transform(self, img) -> FeatureVector:
        x = as_image(img).ravel()
        if x.size != self.mean.size:
            raise DataError(f"image has {x.size} pixels, model expects {self.mean.size}")
        return FeatureVector(self.feature_id, (x - self.mean) @ self.components)


def _pca(X: np.ndarray):
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    ev = s**2 / X.shape[0]
    return mean, Vt.T, ev


def fit_eigenfaces(train: Sequence, variance_keep: float = 0.95) -> ProjectionModel:
    """PCA keeping the fewest components reaching ``variance_keep`` of the variance."""
    X = _stack_images(train)
    if X.shape[0] < 2:
        raise DataError("eigenfaces need at least two images")
    mean, V, ev = _pca(X)
    total = ev.sum()
    if not total > 0:
        raise DataError("training images have zero variance")
    frac = np.cumsum(ev) / total
    r = int(np.searchsorted(frac, min(variance_keep, 1.0) - 1e-12) + 1)
    r = min(r, int(np.sum(ev > 1e-12 * ev[0])))
    return ProjectionModel(FeatureId.EIGEN.value, mean, V[:, :r], ev[:r])


def fit_fisherfaces(train: Sequence, labels) -> ProjectionModel:
    """PCA to ``n - c`` dimensions, then LDA to ``c - 1``."""
    X = _stack_images(train)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    c = len(classes)
    if c < 2:
        raise DataError("fisherfaces need at least two classes")
    if any(np.sum(labels == k) < 2 for k in classes):
        raise DataError("fisherfaces need at least two samples per class")
    n = X.shape[0]
    mean, V, ev = _pca(X)
    r = min(n - c, int(np.sum(ev > 1e-12 * ev[0])))
    W_pca = V[:, :r]
    Z = (X - mean) @ W_pca
    mu = Z.mean(axis=0)
    Sw = np.zeros((r, r))
    Sb = np.zeros((r, r))
    for k in classes:
        Zk = Z[labels == k]
        mk = Zk.mean(axis=0)
        Sw += (Zk - mk).T @ (Zk - mk)
        Sb += len(Zk) * np.outer(mk - mu, mk - mu)
    try:
        np.linalg.cholesky(Sw)
    except np.linalg.LinAlgError:
        warnings.warn("within-class scatter is singular; regularising", stacklevel=2)
        Sw = Sw + 1e-6 * max(np.trace(Sw), 1e-12) * np.eye(r)
    vals, vecs = scipy.linalg.eigh(Sb, Sw)
    order = np.argsort(vals)[::-1][: c - 1]
    return ProjectionModel(FeatureId.FISHER.value, mean, W_pca @ vecs[:, order])


# -- Gabor ------------------------------------------------------------------

GABOR_PRESETS = {
    "FR_SURV": (tuple(range(8)), 8),
    "SCface": (tuple(range(6)), 16),
    "ChokePoint": (tuple(range(5)), 4),
}


def gabor_kernel(scale: int, orientation: int, n_orientations: int, sigma: float = 2 * math.pi,
                 k_max: float = math.pi, f: float = math.sqrt(2)) -> np.ndarray:
    """Complex Gabor wavelet ``psi_{mu,v}`` with exact zero DC response.

    ``k_v = k_max / f**v`` and ``phi_mu = pi mu / n_orientations``.  The
    window is cut at three envelope widths and the DC compensation term is
    computed on the truncated window so the kernel sums to zero.
    """
    k = k_max / f**scale
    phi = math.pi * orientation / n_orientations
    kx, ky = k * math.cos(phi), k * math.sin(phi)
    radius = max(1, math.ceil(3.0 * sigma / k))
    y, x = np.mgrid[-radius:radius + 1, -radius:radius + 1].astype(float)
    env = (k * k / sigma**2) * np.exp(-(k * k) * (x * x + y * y) / (2.0 * sigma**2))
    wave = np.exp(1j * (kx * x + ky * y))
    dc = (env * wave).sum() / env.sum()
    return env * (wave - dc)


def gabor_responses(img, scales: Sequence[int], n_orientations: int, sigma: float = 2 * math.pi,
                    k_max: float = math.pi, f: float = math.sqrt(2)) -> np.ndarray:
    """Magnitude responses, shape ``(len(scales), n_orientations, h, w)``."""
    a = as_image(img)
    out = np.empty((len(scales), n_orientations) + a.shape)
    for i, v in enumerate(scales):
        for mu in range(n_orientations):
            ker = gabor_kernel(v, mu, n_orientations, sigma, k_max, f)
            r = ker.shape[0] // 2
            padded = np.pad(a, r, mode="symmetric")
            out[i, mu] = np.abs(fftconvolve(padded, ker, mode="valid"))
    return out


def gabor_face(img, scales: Sequence[int] = tuple(range(5)), orientations_count: int = 4,
               sigma: float = 2 * math.pi, k_max: float = math.pi, f: float = math.sqrt(2),
               downsample: int = 4) -> FeatureVector:
    """Gabor bank magnitudes, decimated by ``downsample``, concatenated, L2-normalised."""
    if len(scales) == 0 or orientations_count < 1:
        raise DataError("Gabor bank needs at least one scale and one orientation")
    resp = gabor_responses(img, scales, orientations_count, sigma, k_max, f)
    vec = resp[:, :, ::downsample, ::downsample].ravel()
    return FeatureVector(FeatureId.GABOR.value, _l2(vec))


# -- Weber faces --------------------------------------------------------------

def weber_face(img, alpha_w: float = 1.0, eps: float = 1e-3) -> FeatureVector:
    """``arctan(alpha_w * sum_n (I_c - I_n) / max(I_c, eps))`` per pixel."""
    a = as_image(img)
    if a.shape[0] < 3 or a.shape[1] < 3:
        raise DataError("Weber face needs an image of at least 3x3 pixels")
    p = np.pad(a, 1, mode="edge")
    h, w = a.shape
    diff = np.zeros_like(a)
    for dy, dx in _LBP_OFFSETS:
        diff += a - p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    out = np.arctan(alpha_w * diff / np.maximum(a, eps))
    return FeatureVector(FeatureId.WEBER.value, out.ravel())


# -- dense SIFT-like descriptors ----------------------------------------------

def dense_patch_descriptors(img, patch: int = 16, stride: int = 4) -> np.ndarray:
    """128-d gradient-orientation histograms on a dense grid of patches.

    Each ``patch x patch`` window is split into 4x4 cells; each cell
    accumulates gradient magnitude into 8 orientation bins over
    ``[0, 2 pi)``.  The descriptor is L2-normalised, clipped at 0.2 and
    renormalised; flat patches give the zero vector.
    """
    a = as_image(img)
    h, w = a.shape
    if h < patch or w < patch:
        raise DataError(f"image {a.shape} is smaller than the {patch}px patch")
    if patch % 4:
        raise DataError("patch size must be a multiple of 4")
    gy, gx = np.gradient(a)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), 2 * math.pi)
    bins = np.minimum((ang / (2 * math.pi) * 8).astype(int), 7)
    cell = patch // 4
    # Box sums of each orientation channel over cell x cell windows.
    chan = np.zeros((8, h + 1, w + 1))
    for b in range(8):
        chan[b, 1:, 1:] = np.cumsum(np.cumsum(np.where(bins == b, mag, 0.0), 0), 1)
    ys = np.arange(0, h - patch + 1, stride)
    xs = np.arange(0, w - patch + 1, stride)
    desc = np.empty((ys.size, xs.size, 4, 4, 8))
    for cy in range(4):
        for cx in range(4):
            y0 = ys[:, None] + cy * cell
            x0 = xs[None, :] + cx * cell
            s = (chan[:, y0 + cell, x0 + cell] - chan[:, y0, x0 + cell]
                 - chan[:, y0 + cell, x0] + chan[:, y0, x0])
            desc[:, :, cy, cx, :] = np.moveaxis(s, 0, -1)
    desc = desc.reshape(-1, 128)
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    desc = np.divide(desc, norms, out=np.zeros_like(desc), where=norms > 1e-12)
    desc = np.minimum(desc, 0.2)
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    return np.divide(desc, norms, out=np.zeros_like(desc), where=norms > 1e-12)


# -- codebooks, BOW and VLAD --------------------------------------------------

@dataclass(frozen=True)
class Codebook:
    centers: np.ndarray
    seed: int
    trained_on: str = ""

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    def assign(self, descriptors) -> np.ndarray:
        D = np.atleast_2d(np.asarray(descriptors, dtype=float))
        if D.shape[0] == 0:
            raise DataError("no descriptors to encode")
        d2 = ((D[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)


def fit_codebook(descriptors, k: int = 64, seed: int = 0, trained_on: str = "") -> Codebook:
    """k-means (k-means++ seeding, one deterministic run of at most 100 iterations)."""
    D = np.atleast_2d(np.asarray(descriptors, dtype=float))
    if D.shape[0] < k:
        raise DataError(f"need at least k={k} descriptors, got {D.shape[0]}")
    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=100, tol=1e-6,
                random_state=seed, algorithm="lloyd").fit(D)
    return Codebook(np.asarray(km.cluster_centers_), seed, trained_on)


def bow_encode(descriptors, codebook: Codebook) -> FeatureVector:
    """L1-normalised hard-assignment word histogram."""
    idx = codebook.assign(descriptors)
    h = np.bincount(idx, minlength=codebook.k).astype(float)
    return FeatureVector(FeatureId.BOW.value, h / h.sum())


def vlad_encode(descriptors, codebook: Codebook) -> FeatureVector:
    """Per-centre residual sums, signed square root, then L2 normalisation."""
    D = np.atleast_2d(np.asarray(descriptors, dtype=float))
    idx = codebook.assign(D)
    V = np.zeros_like(codebook.centers)
    np.add.at(V, idx, D - codebook.centers[idx])
    v = V.ravel()
    v = np.sign(v) * np.sqrt(np.abs(v))
    return FeatureVector(FeatureId.VLAD.value, _l2(v))
