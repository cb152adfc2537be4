"""Built-in synthetic domain-shift datasets with ready-to-run configs."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, shift as nd_shift

from .errors import ConfigError
from .imageproc import bicubic_resample, gaussian_blur, write_pgm
from .io import write_feature_csv

PRESETS = ("blobs-rot45", "faces-tiny")


def rotation(deg: float) -> np.ndarray:
    t = np.deg2rad(deg)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def two_blobs(rng: np.random.Generator, n_a: int, n_b: int, sep: float = 3.0,
              spread=(0.6, 0.35)) -> tuple[np.ndarray, np.ndarray]:
    """Two anisotropic Gaussian classes ``a`` and ``b`` split along the x axis."""
    a = rng.normal(size=(n_a, 2)) * spread + [-sep / 2, 0.0]
    b = rng.normal(size=(n_b, 2)) * spread + [sep / 2, 0.0]
    return np.vstack([a, b]), np.array(["a"] * n_a + ["b"] * n_b)


def blobs_rot45(out_dir, seed: int = 0, n_a: int = 36, n_b: int = 24,
                angle: float = 45.0, offset=(3.0, 3.0), da: bool = True) -> Path:
    """Source blobs and a target drawn from the same law, rotated and shifted.

    The classes are unbalanced so the principal axes of both domains carry
    a well-defined orientation.  Returns the path of the generated config.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    S, ys = two_blobs(rng, n_a, n_b)
    T0, yt = two_blobs(rng, n_a, n_b)
    T = T0 @ rotation(angle).T + np.asarray(offset)
    write_feature_csv(out / "gallery_xy.csv", [f"s{i:03d}" for i in range(len(S))], ys, S)
    write_feature_csv(out / "probe_xy.csv", [f"t{i:03d}" for i in range(len(T))], yt, T)
    cfg = {
        "dataset": {"mode": "features", "gallery": {"xy": "gallery_xy.csv"},
                    "probe": {"xy": "probe_xy.csv"}},
        "kernels": [{"family": "Linear"}],
        "mkl": {"C": 1.0, "seed": seed},
        "da": {"enabled": da},
        "knn": {"k": 1},
        "output_dir": "results",
    }
    path = out / "config.json"
    path.write_text(json.dumps(cfg, indent=2) + "\n")
    return path


def _face_prototype(rng: np.random.Generator, size: int) -> np.ndarray:
    base = gaussian_filter(rng.standard_normal((size, size)), 2.0)
    base = (base - base.min()) / (np.ptp(base) + 1e-12)
    yy, xx = np.mgrid[:size, :size] / (size - 1) - 0.5
    oval = np.exp(-(xx**2 / 0.12 + yy**2 / 0.18))
    return np.clip(0.15 + 0.6 * oval * (0.5 + 0.5 * base), 0, 1)


def faces_tiny(out_dir, seed: int = 0, n_classes: int = 4, n_gallery: int = 4, n_probe: int = 3,
               size: int = 32, probe_size: int = 12, blur: float = 2.0) -> Path:
    """Tiny face-like image classes: sharp gallery, small blurred probes."""
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    for c in range(n_classes):
        proto = _face_prototype(rng, size)
        for dom, count in (("gallery", n_gallery), ("probe", n_probe)):
            d = out / dom / f"id{c:02d}"
            d.mkdir(parents=True, exist_ok=True)
            for i in range(count):
                img = nd_shift(proto, rng.uniform(-1, 1, 2), mode="nearest")
                img = np.clip(img + 0.02 * rng.standard_normal(img.shape), 0, 1)
                if dom == "probe":
                    img = bicubic_resample(gaussian_blur(img, blur), probe_size / size)
                write_pgm(d / f"{i:02d}.pgm", img)
    cfg = {
        "dataset": {"mode": "images", "gallery_dir": "gallery", "probe_dir": "probe"},
        "preprocessing": {"gamma": 1.25, "k": 1.0},
        "features": [{"id": "LBP", "params": {"grid_rows": 2, "grid_cols": 2}},
                     {"id": "EigenFace"}, {"id": "WeberFace"}],
        "kernels": [{"family": "Linear"}, {"family": "Gaussian"}, {"family": "ChiSquare"}],
        "mkl": {"seed": seed},
        # Axis-order matching between the two domains is unreliable at this
        # sample size, so adaptation is off by default for this preset.
        "da": {"enabled": False},
        "output_dir": "results",
    }
    path = out / "config.json"
    path.write_text(json.dumps(cfg, indent=2) + "\n")
    return path


def generate(preset: str, out_dir, seed: int = 0) -> Path:
    if preset == "blobs-rot45":
        return blobs_rot45(out_dir, seed)
    if preset == "faces-tiny":
        return faces_tiny(out_dir, seed)
    raise ConfigError(f"unknown synth preset {preset!r}; choose from {', '.join(PRESETS)}")
