"""Kernel functions, Gram matrices and convex kernel combination.

The six kernel families are evaluated exactly as tabulated for MFKL:

========================  ==============================================
Linear                    ``x.y + c``
Polynomial                ``(alpha * x.y + c) ** d``
Gaussian                  ``exp(-||x - y||^2 / (2 sigma^2))``
RBF                       ``exp(-||x - y|| / (2 sigma^2))``
ChiSquare                 ``1 - sum (x_i - y_i)^2 / (0.5 (x_i + y_i))``
RbfPlusChiSquare          ChiSquare + RBF
========================  ==============================================

Note that RBF uses the *unsquared* Euclidean distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataError, NumericalError, ConfigError

# Rows processed per block when building chi-square Grams (memory bound).
_CHI_BLOCK = 64


class KernelFamily(str, Enum):
    LINEAR = "Linear"
    POLYNOMIAL = "Polynomial"
    GAUSSIAN = "Gaussian"
    RBF = "RBF"
    CHI_SQUARE = "ChiSquare"
    RBF_CHI_SQUARE = "RbfPlusChiSquare"

    @property
    def uses_sigma(self) -> bool:
        return self in (KernelFamily.GAUSSIAN, KernelFamily.RBF, KernelFamily.RBF_CHI_SQUARE)

    @property
    def needs_nonnegative(self) -> bool:
        return self in (KernelFamily.CHI_SQUARE, KernelFamily.RBF_CHI_SQUARE)


@dataclass(frozen=True)
class KernelSpec:
    """One member of the kernel set with its hyperparameters."""

    family: KernelFamily
    c: float = 0.0
    alpha: float = 1.0
    d: int = 2
    sigma: float = 1.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", KernelFamily(self.family))
        except ValueError:
            raise ConfigError(f"unknown kernel family {self.family!r}") from None
        if self.family.uses_sigma and not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"{self.family.value}: sigma must be positive, got {self.sigma}")
        if self.family is KernelFamily.POLYNOMIAL:
            if int(self.d) != self.d or self.d < 1:
                raise ConfigError(f"Polynomial: degree must be a positive integer, got {self.d}")
            if not self.alpha > 0:
                raise ConfigError(f"Polynomial: alpha must be positive, got {self.alpha}")
        if self.family in (KernelFamily.LINEAR, KernelFamily.POLYNOMIAL) and self.c < 0:
            raise ConfigError(f"{self.family.value}: c must be non-negative, got {self.c}")

    @property
    def label(self) -> str:
        f = self.family
        if f is KernelFamily.LINEAR:
            return f"Linear(c={self.c:g})"
        if f is KernelFamily.POLYNOMIAL:
            return f"Polynomial(alpha={self.alpha:g},c={self.c:g},d={self.d})"
        if f.uses_sigma:
            return f"{f.value}(sigma={self.sigma:.6g})"
        return f.value

    def to_dict(self) -> dict:
        out = {"family": self.family.value}
        if self.family in (KernelFamily.LINEAR, KernelFamily.POLYNOMIAL):
            out["c"] = self.c
        if self.family is KernelFamily.POLYNOMIAL:
            out.update(alpha=self.alpha, d=int(self.d))
        if self.family.uses_sigma:
            out["sigma"] = self.sigma
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        return cls(**data)


@dataclass(frozen=True)
class SampleMatrix:
    """An ``n x l`` block of samples with one opaque identifier per row."""

    values: np.ndarray
    ids: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2:
            raise DataError(f"samples must be a 2-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("samples contain non-finite entries")
        ids = tuple(self.ids) if len(self.ids) else tuple(range(values.shape[0]))
        if len(ids) != values.shape[0]:
            raise DataError(f"{len(ids)} ids for {values.shape[0]} rows")
        if len(set(ids)) != len(ids):
            raise DataError("sample ids are not unique")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ids", ids)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


def as_samples(X) -> SampleMatrix:
    return X if isinstance(X, SampleMatrix) else SampleMatrix(X)


@dataclass(frozen=True)
class GramMatrix:
    """Kernel matrix between two sample sets, with provenance."""

    values: np.ndarray
    row_ids: tuple
    col_ids: tuple
    spec: KernelSpec | None = None
    normalized: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def is_square(self) -> bool:
        return self.row_ids == self.col_ids


@dataclass(frozen=True)
class PsdReport:
    min_eig: float
    max_eig: float
    symmetric_defect: float
    passed: bool = field(default=False)


def _check_vector_pair(spec: KernelSpec, x: np.ndarray, y: np.ndarray):
    if x.shape != y.shape or x.ndim != 1:
        raise DataError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if spec.family.needs_nonnegative and (np.any(x < 0) or np.any(y < 0)):
        raise DataError(f"{spec.family.value} kernel requires non-negative inputs")


def _chi_square_scalar(x: np.ndarray, y: np.ndarray) -> float:
    total = 0.0
    for xi, yi in zip(x, y):
        s = xi + yi
        if s > 0:
            total += (xi - yi) ** 2 / (0.5 * s)
    return 1.0 - total


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Evaluate ``k(x, y)`` for a single pair of vectors.

    This is the plain per-pair formula; :func:`gram` is the vectorised path
    and is tested against this one.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    _check_vector_pair(spec, x, y)
    f = spec.family
    if f is KernelFamily.LINEAR:
        value = float(x @ y) + spec.c
    elif f is KernelFamily.POLYNOMIAL:
        value = (spec.alpha * float(x @ y) + spec.c) ** int(spec.d)
    elif f is KernelFamily.GAUSSIAN:
        value = math.exp(-float(np.sum((x - y) ** 2)) / (2.0 * spec.sigma**2))
    elif f is KernelFamily.RBF:
        value = math.exp(-math.sqrt(float(np.sum((x - y) ** 2))) / (2.0 * spec.sigma**2))
    elif f is KernelFamily.CHI_SQUARE:
        value = _chi_square_scalar(x, y)
    else:
        value = _chi_square_scalar(x, y) + math.exp(
            -math.sqrt(float(np.sum((x - y) ** 2))) / (2.0 * spec.sigma**2)
        )
    if not math.isfinite(value):
        raise NumericalError(f"{spec.label} produced a non-finite value")
    return float(value)


def _chi_square_block(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    out = np.empty((X.shape[0], Y.shape[0]))
    for start in range(0, X.shape[0], _CHI_BLOCK):
        xb = X[start:start + _CHI_BLOCK, None, :]
        num = (xb - Y[None, :, :]) ** 2
        den = 0.5 * (xb + Y[None, :, :])
        ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        out[start:start + _CHI_BLOCK] = 1.0 - ratio.sum(axis=2)
    return out


def kernel_values(spec: KernelSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Raw ``len(X) x len(Y)`` kernel matrix for plain arrays."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise DataError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]} features")
    f = spec.family
    if f.needs_nonnegative and (np.any(X < 0) or np.any(Y < 0)):
        raise DataError(f"{f.value} kernel requires non-negative inputs")
    if f is KernelFamily.LINEAR:
        K = X @ Y.T + spec.c
    elif f is KernelFamily.POLYNOMIAL:
        with np.errstate(over="ignore", invalid="ignore"):
            K = (spec.alpha * (X @ Y.T) + spec.c) ** int(spec.d)
    elif f is KernelFamily.GAUSSIAN:
        K = np.exp(-cdist(X, Y, "sqeuclidean") / (2.0 * spec.sigma**2))
    elif f is KernelFamily.RBF:
        K = np.exp(-cdist(X, Y, "euclidean") / (2.0 * spec.sigma**2))
    elif f is KernelFamily.CHI_SQUARE:
        K = _chi_square_block(X, Y)
    else:
        K = _chi_square_block(X, Y) + np.exp(-cdist(X, Y, "euclidean") / (2.0 * spec.sigma**2))
    if not np.all(np.isfinite(K)):
        raise NumericalError(f"{spec.label} Gram has non-finite entries")
    return K


def gram(spec: KernelSpec, X, Y=None) -> GramMatrix:
    """Gram matrix ``K[i, j] = k(X_i, Y_j)``; ``Y`` defaults to ``X``."""
    Xs = as_samples(X)
    Ys = Xs if Y is None else as_samples(Y)
    K = kernel_values(spec, Xs.values, Ys.values)
    if Ys is Xs or (Xs.ids == Ys.ids and np.array_equal(Xs.values, Ys.values)):
        K = 0.5 * (K + K.T)
    return GramMatrix(K, Xs.ids, Ys.ids, spec)


def unit_trace_normalize(K: GramMatrix) -> GramMatrix:
    """Rescale a square Gram so that its trace equals its size ``n``."""
    if not K.is_square:
        raise DataError("unit-trace normalisation needs a square Gram")
    n = K.values.shape[0]
    tr = float(np.trace(K.values))
    if not tr > 0:
        raise NumericalError(f"Gram trace must be positive, got {tr}")
    return replace(K, values=K.values * (n / tr), normalized=True)


def combine(weights: Sequence[float], grams: Sequence[GramMatrix]) -> GramMatrix:
    """Non-negative weighted sum ``sum_j w_j K_j``."""
    weights = np.asarray(weights, dtype=float)
    if len(grams) == 0 or weights.shape != (len(grams),):
        raise DataError(f"{weights.size} weights for {len(grams)} Grams")
    if np.any(weights < 0):
        raise DataError("kernel weights must be non-negative")
    first = grams[0]
    for G in grams[1:]:
        if G.shape != first.shape or G.row_ids != first.row_ids or G.col_ids != first.col_ids:
            raise DataError("Grams to combine must share shape and sample ids")
    values = sum(w * G.values for w, G in zip(weights, grams))
    return GramMatrix(values, first.row_ids, first.col_ids, None,
                      all(G.normalized for G in grams))


def check_psd(K, tol: float = 1e-8) -> PsdReport:
    """Symmetry and positive-semidefiniteness diagnostic.

    Passes iff ``min_eig >= -tol * max(1, |max_eig|)`` and the largest
    asymmetry ``|K - K^T|`` is at most ``tol``.
    """
    values = K.values if isinstance(K, GramMatrix) else np.asarray(K, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise DataError(f"PSD check needs a square matrix, got {values.shape}")
    defect = float(np.max(np.abs(values - values.T))) if values.size else 0.0
    eigs = np.linalg.eigvalsh(0.5 * (values + values.T))
    lo, hi = float(eigs[0]), float(eigs[-1])
    passed = lo >= -tol * max(1.0, abs(hi)) and defect <= tol
    return PsdReport(lo, hi, defect, bool(passed))
