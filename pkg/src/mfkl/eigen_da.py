"""Unsupervised eigen-domain adaptation, linear and in RKHS.

The linear transform maps centred source data onto the target's principal
axes, ``S~ = (S - mu_S) U_S U_T^T + mu_T``, so that the covariance of
``S~`` has the target eigenvectors and its mean is the target mean.

The kernel version works on double-centred Gram blocks.  With ``V`` the
eigenvectors and ``lam`` the eigenvalues of a centred Gram, the unit-norm
feature-space principal axes are ``U = Phi_c^T V lam^{-1/2}``, and the
adapted Grams follow from

    K_S~S~ = Kc_SS Vs Vt^T Kc_TT Vt Vs^T Kc_SS      (scaled V's)
    K_S~T  = Kc_SS Vs Vt^T (H K_TT)

followed by the entrywise mean shift that moves the transformed source
mean onto the target mean.  Every adapted source point is a linear
combination of target points, ``Phi(S~) = A Phi(T)``; ``A`` is kept so
that unseen probes can be scored against the adapted source.

Component signs are fixed from the projected scores of each domain (the
sign making the third moment of the scores positive, falling back to the
largest-magnitude score).  The same rule is computable from a Gram alone,
which keeps the kernel and explicit constructions identical for a linear
kernel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError
from .kernels import GramMatrix, KernelSpec, as_samples, kernel_values

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class EigenBasis:
    """Principal axes (columns, descending eigenvalue) of a sample set."""

    vectors: np.ndarray
    values: np.ndarray
    mean: np.ndarray

    @property
    def rank(self) -> int:
        return self.values.size


def _sign_by_max_entry(V: np.ndarray) -> np.ndarray:
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _sign_by_scores(V: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Orient columns of ``V`` so their score columns have positive skew."""
    if V.size == 0:
        return V
    V = V.copy()
    for k in range(V.shape[1]):
        s = scores[:, k]
        m3 = float(np.sum(s**3))
        scale = float(np.sum(np.abs(s) ** 3))
        if abs(m3) > 1e-8 * scale:
            flip = m3 < 0
        else:
            mag = np.abs(s)
            first = np.flatnonzero(mag >= mag.max() * (1.0 - 1e-9))[0]
            flip = s[first] < 0
        if flip:
            V[:, k] = -V[:, k]
    return V


def _eigh_desc(M: np.ndarray, rank_tol: float):
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    top = vals[0] if vals.size else 0.0
    if not top > 0:
        return vals[:0], vecs[:, :0]
    keep = vals > rank_tol * top
    return vals[keep], vecs[:, keep]


def principal_components(X, rank_tol: float = DEFAULT_RANK_TOL) -> EigenBasis:
    """Eigen-decomposition of the (1/n) covariance of mean-centred ``X``.

    Components with eigenvalue ``<= rank_tol * lambda_max`` are dropped and
    each column is signed so that its largest-magnitude entry is positive.
    """
    X = as_samples(X).values
    if X.shape[0] < 2:
        raise DataError("principal components need at least two samples")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / X.shape[0]
    vals, vecs = _eigh_desc(cov, rank_tol)
    if vals.size == 0:
        raise DataError("input has zero variance")
    return EigenBasis(_sign_by_max_entry(vecs), vals, mean)


def _common_rank(r_s: int, r_t: int, what: str) -> int:
    r = min(r_s, r_t)
    if r_s != r_t:
        warnings.warn(f"{what}: source rank {r_s} != target rank {r_t}; truncating to {r}",
                      stacklevel=3)
    return r


def linear_da(source, target, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Adapt ``source`` rows to the target domain in input space."""
    S = as_samples(source).values
    T = as_samples(target).values
    if S.shape[1] != T.shape[1]:
        raise DataError(f"source has {S.shape[1]} features, target {T.shape[1]}")
    bs = principal_components(S, rank_tol)
    bt = principal_components(T, rank_tol)
    r = _common_rank(bs.rank, bt.rank, "linear_da")
    Sc, Tc = S - bs.mean, T - bt.mean
    Us = _sign_by_scores(bs.vectors[:, :r], Sc @ bs.vectors[:, :r])
    Ut = _sign_by_scores(bt.vectors[:, :r], Tc @ bt.vectors[:, :r])
    return Sc @ Us @ Ut.T + bt.mean


def _center_gram(K: np.ndarray) -> np.ndarray:
    row = K.mean(axis=1, keepdims=True)
    col = K.mean(axis=0, keepdims=True)
    return K - row - col + K.mean()


def gram_eigvecs(K, rank_tol: float = DEFAULT_RANK_TOL):
    """Eigenvectors of a symmetric Gram, descending, truncated, signed.

    Returns ``(V, eigvals)``; signs follow the largest-magnitude entry rule.
    """
    Kv = K.values if isinstance(K, GramMatrix) else np.asarray(K, dtype=float)
    if Kv.ndim != 2 or Kv.shape[0] != Kv.shape[1]:
        raise DataError(f"Gram must be square, got {Kv.shape}")
    scale = max(1.0, float(np.max(np.abs(Kv)))) if Kv.size else 1.0
    if np.max(np.abs(Kv - Kv.T), initial=0.0) > 1e-10 * scale:
        raise DataError("Gram matrix is not symmetric")
    vals, vecs = _eigh_desc(Kv, rank_tol)
    return _sign_by_max_entry(vecs), vals


@dataclass(frozen=True)
class DaGramSet:
    """Adapted Gram blocks and the composite ``[[K^SS, K^ST], [K^ST^T, K_TT]]``.

    ``transform`` is the ``n_S x n_T`` matrix ``A`` with ``Phi(S~) = A Phi(T)``.
    """

    k_ss_adapted: np.ndarray
    k_st_adapted: np.ndarray
    k_tt: np.ndarray
    composite: np.ndarray
    source_labels: np.ndarray | None
    transform: np.ndarray
    rank: int

    @property
    def n_source(self) -> int:
        return self.k_ss_adapted.shape[0]

    @property
    def n_target(self) -> int:
        return self.k_tt.shape[0]

    def cross_gram(self, k_target_probe) -> np.ndarray:
        """``<Phi(S~_i), Phi(p)>`` for probes given their Gram against the targets."""
        Ktp = np.asarray(k_target_probe, dtype=float)
        if Ktp.shape[0] != self.n_target:
            raise DataError(f"expected {self.n_target} target rows, got {Ktp.shape[0]}")
        return self.transform @ Ktp


def _scaled_basis(Kc: np.ndarray, r: int, rank_tol: float):
    vals, vecs = _eigh_desc(Kc, rank_tol)
    vals, vecs = vals[:r], vecs[:, :r]
    # Scores of the domain's own samples on each axis are V sqrt(lam).
    vecs = _sign_by_scores(vecs, vecs * np.sqrt(vals))
    return vecs / np.sqrt(vals)


def kernel_da(K_SS, K_ST, K_TT, rank_tol: float = DEFAULT_RANK_TOL,
              source_labels=None) -> DaGramSet:
    """Adapt the source to the target inside the RKHS of the kernel.

    ``K_ST`` is only checked for shape: the adapted blocks are expressed
    through ``K_SS`` and ``K_TT`` alone.
    """
    Kss = K_SS.values if isinstance(K_SS, GramMatrix) else np.asarray(K_SS, dtype=float)
    Ktt = K_TT.values if isinstance(K_TT, GramMatrix) else np.asarray(K_TT, dtype=float)
    n_s, n_t = Kss.shape[0], Ktt.shape[0]
    if Kss.shape != (n_s, n_s) or Ktt.shape != (n_t, n_t):
        raise DataError("K_SS and K_TT must be square")
    if K_ST is not None:
        Kst = K_ST.values if isinstance(K_ST, GramMatrix) else np.asarray(K_ST)
        if Kst.shape != (n_s, n_t):
            raise DataError(f"K_ST has shape {Kst.shape}, expected {(n_s, n_t)}")
    for name, K in (("K_SS", Kss), ("K_TT", Ktt)):
        if not np.all(np.isfinite(K)):
            raise NumericalError(f"{name} has non-finite entries")
        if not np.any(K):
            raise NumericalError(f"{name} is identically zero")
        if np.max(np.abs(K - K.T)) > 1e-10 * max(1.0, np.max(np.abs(K))):
            raise DataError(f"{name} is not symmetric")

    Kss_c = _center_gram(Kss)
    Ktt_c = _center_gram(Ktt)
    r_s = _eigh_desc(Kss_c, rank_tol)[0].size if n_s > 1 else 0
    r_t = _eigh_desc(Ktt_c, rank_tol)[0].size if n_t > 1 else 0
    r = min(r_s, r_t)
    if r_s and r_t and r_s != r_t:
        warnings.warn(f"kernel_da: source rank {r_s} != target rank {r_t}; truncating to {r}",
                      stacklevel=2)

    o_s = np.full(n_s, 1.0 / n_s)
    o_t = np.full(n_t, 1.0 / n_t)
    Ktt_rowc = Ktt - Ktt.mean(axis=0, keepdims=True)  # H K_TT
    if r > 0:
        Vs = _scaled_basis(Kss_c, r, rank_tol)
        Vt = _scaled_basis(Ktt_c, r, rank_tol)
        M = Kss_c @ Vs @ Vt.T
        k_ss = M @ Ktt_c @ M.T
        k_st = M @ Ktt_rowc
    else:
        M = np.zeros((n_s, n_t))
        k_ss = np.zeros((n_s, n_s))
        k_st = np.zeros((n_s, n_t))
    k_ts = k_st.T

    # Mean shift onto the target mean, written out term by term.
    a_i = k_ss @ o_s
    b_i = k_st @ o_t
    c_j = o_t @ k_ts
    k_ss_hat = (k_ss - a_i[:, None] + b_i[:, None] - a_i[None, :]
                + o_s @ k_ss @ o_s - o_s @ k_st @ o_t
                + c_j[None, :] - o_t @ k_ts @ o_s + o_t @ Ktt @ o_t)
    k_ss_hat = 0.5 * (k_ss_hat + k_ss_hat.T)
    k_st_hat = k_st - (o_s @ k_st)[None, :] + (o_t @ Ktt)[None, :]

    composite = np.block([[k_ss_hat, k_st_hat], [k_st_hat.T, Ktt]])
    # Phi(S~) = (M H_T + 1 o_T^T) Phi(T)
    A = M - M.mean(axis=1, keepdims=True) + o_t[None, :]
    labels = None if source_labels is None else np.asarray(source_labels)
    return DaGramSet(k_ss_hat, k_st_hat, Ktt.copy(), composite, labels, A, r)


def kernel_da_samples(spec: KernelSpec, source, target, rank_tol: float = DEFAULT_RANK_TOL,
                      source_labels=None) -> DaGramSet:
    """Convenience wrapper building the Gram blocks from raw samples."""
    S = as_samples(source).values
    T = as_samples(target).values
    Kss = kernel_values(spec, S, S)
    Ktt = kernel_values(spec, T, T)
    return kernel_da(0.5 * (Kss + Kss.T), None, 0.5 * (Ktt + Ktt.T), rank_tol, source_labels)


def rkhs_distance(da: DaGramSet, i: int, j: int) -> float:
    """``K(i,i) + K(j,j) - 2 K(i,j)`` on the composite Gram, floored at 0."""
    n = da.composite.shape[0]
    for idx in (i, j):
        if not 0 <= idx < n:
            raise IndexError(f"index {idx} out of range for composite of size {n}")
    K = da.composite
    return max(0.0, float(K[i, i] + K[j, j] - 2.0 * K[i, j]))


def distance_matrix(da: DaGramSet) -> np.ndarray:
    """All pairwise composite distances, floored at 0."""
    d = np.diag(da.composite)
    D = d[:, None] + d[None, :] - 2.0 * da.composite
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def knn_from_distances(dist, labels, k: int = 1) -> np.ndarray:
    """Majority vote of the ``k`` nearest labelled columns for each row.

    ``dist`` has one row per query and one column per labelled instance.
    Vote ties go to the class with the smaller mean distance among its
    voters, then to the smaller class label.
    """
    dist = np.asarray(dist, dtype=float)
    labels = np.asarray(labels)
    n_src = labels.size
    if n_src == 0:
        raise DataError("no labelled instances to vote with")
    if dist.ndim != 2 or dist.shape[1] != n_src:
        raise DataError(f"distance matrix {dist.shape} does not match {n_src} labels")
    if not 1 <= k <= n_src:
        raise DataError(f"k must be in [1, {n_src}], got {k}")
    classes = np.array(sorted(set(labels.tolist())))
    out = []
    for row in dist:
        nn = np.argsort(row, kind="stable")[:k]
        best = None
        for c in classes:
            mask = labels[nn] == c
            cnt = int(mask.sum())
            if cnt == 0:
                continue
            key = (-cnt, float(row[nn][mask].mean()))
            if best is None or key < best[0]:
                best = (key, c)
        out.append(best[1])
    return np.array(out, dtype=labels.dtype)


def knn_classify(da: DaGramSet, k: int = 1) -> np.ndarray:
    """Label every target row of the composite by KNN over the source rows."""
    if da.source_labels is None:
        raise DataError("DaGramSet has no source labels")
    n_s = da.n_source
    if n_s == 0:
        raise DataError("empty source domain")
    D = distance_matrix(da)
    return knn_from_distances(D[n_s:, :n_s], da.source_labels, k)


def vote_across_features(per_feature_predictions, weights=None) -> np.ndarray:
    """Weighted majority over feature channels; ties go to the smaller label."""
    preds = [np.asarray(p) for p in per_feature_predictions]
    if not preds:
        raise DataError("need at least one feature channel")
    n = preds[0].size
    if any(p.size != n for p in preds):
        raise DataError("prediction vectors differ in length")
    w = np.ones(len(preds)) if weights is None else np.asarray(weights, dtype=float)
    if w.size != len(preds):
        raise DataError(f"{w.size} weights for {len(preds)} channels")
    stacked = np.stack(preds)
    out = []
    for i in range(n):
        mass: dict = {}
        for f in range(len(preds)):
            c = stacked[f, i]
            mass[c] = mass.get(c, 0.0) + w[f]
        top = max(mass.values())
        winners = [c for c, v in mass.items() if v >= top - 1e-12 * max(1.0, abs(top))]
        out.append(min(winners))
    return np.array(out, dtype=stacked.dtype)


def write_da_csv(da: DaGramSet, out_dir) -> tuple[Path, Path]:
    """Dump the composite Gram and its distance matrix for offline inspection."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kp, dp = out / "composite.csv", out / "distances.csv"
    np.savetxt(kp, da.composite, delimiter=",", fmt="%.17g")
    np.savetxt(dp, distance_matrix(da), delimiter=",", fmt="%.17g")
    return kp, dp
