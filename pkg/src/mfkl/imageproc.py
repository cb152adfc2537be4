"""Gray-image preprocessing: resampling, blur, contrast stretch, blur estimation.

Images are 2-D float arrays with values in ``[0, 1]``.  Every public
function returns a new array clipped to that range.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import convolve1d

from .errors import ConfigError, DataError

HIST_BINS = 256
HIST_EPS = 1e-10


def as_image(img) -> np.ndarray:
    a = np.asarray(img, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise DataError(f"expected a non-empty 2-D gray image, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError("image has non-finite pixels")
    return a


def power_law(img, gamma: float = 1.25, k: float = 1.0) -> np.ndarray:
    """Contrast stretch ``out = clip(k * in ** gamma, 0, 1)``."""
    if not gamma > 0 or not k > 0:
        raise ConfigError(f"gamma and k must be positive, got gamma={gamma}, k={k}")
    a = np.clip(as_image(img), 0.0, 1.0)
    return np.clip(k * a**gamma, 0.0, 1.0)


def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    return np.where(
        t <= 1, (a + 2) * t3 - (a + 3) * t2 + 1,
        np.where(t < 2, a * t3 - 5 * a * t2 + 8 * a * t - 4 * a, 0.0),
    )


def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    scale = n_out / n_in
    centres = (np.arange(n_out) + 0.5) / scale - 0.5
    base = np.floor(centres).astype(int)
    W = np.zeros((n_out, n_in))
    for off in range(-1, 3):
        idx = base + off
        w = _cubic(centres - idx)
        np.add.at(W, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), w)
    return W


def resize(img, shape: tuple[int, int]) -> np.ndarray:
    """Catmull-Rom bicubic resampling to ``shape`` with clamped edges."""
    a = as_image(img)
    h, w = int(shape[0]), int(shape[1])
    if h < 1 or w < 1:
        raise DataError(f"degenerate output size {shape}")
    if (h, w) == a.shape:
        return np.clip(a, 0.0, 1.0)
    out = _resample_matrix(a.shape[0], h) @ a @ _resample_matrix(a.shape[1], w).T
    return np.clip(out, 0.0, 1.0)


def bicubic_resample(img, factor: float) -> np.ndarray:
    """Scale both image axes by ``factor`` (``0.5`` halves, ``2`` doubles)."""
    a = as_image(img)
    if not factor > 0:
        raise DataError(f"resampling factor must be positive, got {factor}")
    shape = (int(round(a.shape[0] * factor)), int(round(a.shape[1] * factor)))
    return resize(a, shape)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = max(1, math.ceil(3.0 * sigma - 1e-9))
    x = np.arange(-radius, radius + 1, dtype=float)
    with np.errstate(over="ignore"):
        g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian blur truncated at ``ceil(3 sigma)``, mirrored borders."""
    a = as_image(img)
    if sigma < 0:
        raise DataError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return np.clip(a, 0.0, 1.0)
    g = gaussian_kernel1d(sigma)
    out = convolve1d(a, g, axis=0, mode="reflect")
    out = convolve1d(out, g, axis=1, mode="reflect")
    return np.clip(out, 0.0, 1.0)


def intensity_histogram(imgs: Sequence, eps: float = HIST_EPS) -> np.ndarray:
    """Pooled 256-bin histogram, mixed with a uniform floor of ``eps`` per bin.

    A pixel value ``p`` falls in bin ``min(floor(256 p), 255)``, so an 8-bit
    value ``v`` read as ``v / 255`` lands in bin ``v``.
    """
    imgs = list(imgs)
    if not imgs:
        raise DataError("need at least one image for a histogram")
    counts = np.zeros(HIST_BINS)
    for img in imgs:
        a = np.clip(as_image(img), 0.0, 1.0)
        bins = np.minimum((a * HIST_BINS).astype(int), HIST_BINS - 1)
        counts += np.bincount(bins.ravel(), minlength=HIST_BINS)
    p = counts / counts.sum()
    return (1.0 - HIST_BINS * eps) * p + eps


def kl_divergence(p, q, symmetric: bool = False) -> float:
    """``sum p log(p / q)``; the symmetric form adds the reverse direction."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DataError("histograms differ in size")
    mask = p > 0
    d = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    if symmetric:
        mask = q > 0
        d += float(np.sum(q[mask] * np.log(q[mask] / p[mask])))
    return max(d, 0.0)


def sigma_grid(lo: float = 0.5, hi: float = 3.0, step: float = 0.05) -> np.ndarray:
    if not step > 0 or lo < 0 or hi < lo:
        raise ConfigError(f"invalid sigma grid lo={lo} hi={hi} step={step}")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(n), 10)


@dataclass
class SigmaEstimate:
    sigma_opt: float
    curve: list[tuple[float, float]] = field(default_factory=list)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "kl"])
            for s, kl in self.curve:
                w.writerow([f"{s:.10g}", repr(float(kl))])
        return path


def estimate_sigma(gallery: Sequence, probe: Sequence, lo: float = 0.5, hi: float = 3.0,
                   step: float = 0.05) -> SigmaEstimate:
    """Blur strength that best matches the gallery histogram to the probe's.

    The (already downsampled) gallery is blurred at each grid value and
    compared to the probe set with the symmetric KL divergence of the
    pooled histograms.  Ties resolve to the smaller sigma.
    """
    gallery, probe = list(gallery), list(probe)
    if not gallery or not probe:
        raise DataError("sigma estimation needs gallery and probe images")
    grid = sigma_grid(lo, hi, step)
    if grid.size == 0:
        raise ConfigError("empty sigma grid")
    target = intensity_histogram(probe)
    curve = []
    for s in grid:
        hist = intensity_histogram([gaussian_blur(g, float(s)) for g in gallery])
        curve.append((float(s), kl_divergence(hist, target, symmetric=True)))
    best = min(range(len(curve)), key=lambda i: (curve[i][1], i))
    return SigmaEstimate(curve[best][0], curve)


# -- image files ----------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary (P5) PGM as floats in ``[0, 1]``."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise DataError(f"{path}: only 8-bit PGM is supported")
    pos += 1
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return pix.reshape(h, w).astype(float) / 255.0


def write_pgm(path, img) -> None:
    a = np.clip(np.rint(as_image(img) * 255.0), 0, 255).astype(np.uint8)
    h, w = a.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + a.tobytes())


def read_image(path) -> np.ndarray:
    """Load a gray PGM or PNG; values map ``p -> p / 255``."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        from PIL import Image

        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=float) / 255.0
    raise DataError(f"unsupported image format: {path}")


def write_png(path, img) -> None:
    from PIL import Image

    a = np.clip(np.rint(as_image(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(a, mode="L").save(path)
