"""Multi-feature kernel learning with eigen-domain adaptation for face recognition."""

from __future__ import annotations

__version__ = "0.1.0"

from .eigen_da import (
    DaGramSet, EigenBasis, gram_eigvecs, kernel_da, knn_classify, knn_from_distances, linear_da,
    principal_components, rkhs_distance, vote_across_features,
)
from .errors import ConfigError, DataError, MfklError, NumericalError
from .kernels import (
    GramMatrix, KernelFamily, KernelSpec, SampleMatrix, check_psd, combine, eval_kernel, gram,
    unit_trace_normalize,
)
from .solver import FeatureKernelPairing, LabeledSet, MklSolution, mfkl_select, solve_skm

__all__ = [
    "ConfigError", "DaGramSet", "DataError", "EigenBasis", "FeatureKernelPairing", "GramMatrix",
    "KernelFamily", "KernelSpec", "LabeledSet", "MfklError", "MklSolution", "NumericalError",
    "SampleMatrix", "check_psd", "combine", "eval_kernel", "gram", "gram_eigvecs", "kernel_da",
    "knn_classify", "knn_from_distances", "linear_da", "mfkl_select", "principal_components",
    "rkhs_distance", "solve_skm", "unit_trace_normalize", "vote_across_features",
]
