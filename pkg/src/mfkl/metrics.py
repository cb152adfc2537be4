"""Identification (CMC) and verification (ROC) metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def rank_classes(scores: np.ndarray, classes, priority: np.ndarray | None = None) -> np.ndarray:
    """Per-probe class ordering, most similar first.

    ``priority`` (same shape as ``scores``) is an optional leading sort key,
    also descending.  Remaining ties go to the smaller class id.
    """
    scores = np.asarray(scores, dtype=float)
    classes = np.asarray(classes)
    tie = np.argsort(np.argsort(classes, kind="stable"), kind="stable")
    out = np.empty(scores.shape, dtype=int)
    for i in range(scores.shape[0]):
        keys = [tie, -scores[i]]
        if priority is not None:
            keys.append(-np.asarray(priority[i], dtype=float))
        out[i] = np.lexsort(keys)
    return out


def compute_cmc(scores, true_labels, classes, rank_max: int | None = None,
                priority=None) -> list[tuple[int, float]]:
    """Cumulative match curve ``[(r, rate), ...]`` for ``r = 1..rank_max``.

    ``scores[i, c]`` is the similarity of probe ``i`` to ``classes[c]``.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    classes = list(classes)
    true_labels = list(true_labels)
    if scores.shape != (len(true_labels), len(classes)):
        raise DataError(f"score matrix {scores.shape} does not match "
                        f"{len(true_labels)} probes x {len(classes)} classes")
    if not np.all(np.isfinite(scores)):
        raise DataError("scores must be finite")
    index = {c: j for j, c in enumerate(classes)}
    missing = [t for t in true_labels if t not in index]
    if missing:
        raise DataError(f"probe label {missing[0]!r} is not a gallery class")
    rank_max = len(classes) if rank_max is None else int(rank_max)
    if rank_max < 1:
        raise DataError("rank_max must be at least 1")
    order = rank_classes(scores, np.asarray(classes), priority)
    pos = np.array([int(np.nonzero(order[i] == index[t])[0][0]) for i, t in enumerate(true_labels)])
    n = max(len(true_labels), 1)
    return [(r, float(np.sum(pos < r)) / n) for r in range(1, rank_max + 1)]


def compute_roc(genuine, impostor, points: int | None = None) -> list[tuple[float, float]]:
    """ROC as ``(false accept rate, verification rate)`` pairs.

    A probe is accepted when its score is ``>=`` the threshold.  Every
    distinct pooled score is used as a threshold unless ``points`` asks for
    an evenly spaced subset.  The curve always starts at (0, 0) and ends at
    (1, 1).
    """
    g = np.asarray(genuine, dtype=float).ravel()
    m = np.asarray(impostor, dtype=float).ravel()
    if g.size == 0 or m.size == 0:
        raise DataError("ROC needs genuine and impostor scores")
    thresholds = np.unique(np.concatenate([g, m]))[::-1]
    if points is not None and points >= 2 and thresholds.size > points:
        idx = np.unique(np.round(np.linspace(0, thresholds.size - 1, points)).astype(int))
        thresholds = thresholds[idx]
    gs, ms = np.sort(g), np.sort(m)
    curve = [(0.0, 0.0)]
    for t in thresholds:
        far = (ms.size - np.searchsorted(ms, t, side="left")) / ms.size
        vr = (gs.size - np.searchsorted(gs, t, side="left")) / gs.size
        if (far, vr) != curve[-1]:
            curve.append((float(far), float(vr)))
    if curve[-1] != (1.0, 1.0):
        curve.append((1.0, 1.0))
    return curve


def roc_auc(curve) -> float:
    c = np.asarray(curve, dtype=float)
    return float(np.trapezoid(c[:, 1], c[:, 0]))


@dataclass
class EvalResult:
    rank1: float | None
    cmc: list[tuple[int, float]]
    roc: list[tuple[float, float]]
    confusion: list[list[int]]
    classes: list
    predictions: list
    per_feature_diagnostics: dict = field(default_factory=dict)

    @property
    def auc(self) -> float | None:
        return roc_auc(self.roc) if self.roc else None

    def summary(self) -> dict:
        return {
            "rank1": self.rank1,
            "auc": self.auc,
            "cmc": [[r, v] for r, v in self.cmc],
            "roc": [[a, b] for a, b in self.roc],
            "confusion": self.confusion,
            "classes": list(self.classes),
            "predictions": list(self.predictions),
            "per_feature": self.per_feature_diagnostics,
        }


def confusion_matrix(true_labels, predicted, classes) -> list[list[int]]:
    index = {c: j for j, c in enumerate(classes)}
    M = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(true_labels, predicted):
        M[index[t], index[p]] += 1
    return M.tolist()
