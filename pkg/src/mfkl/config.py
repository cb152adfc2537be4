"""Experiment configuration (JSON, validated with pydantic; unknown keys rejected)."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .features import FeatureId
from .kernels import KernelFamily


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ImageDataset(_Strict):
    mode: Literal["images"]
    gallery_dir: str
    probe_dir: str


class FeatureDataset(_Strict):
    """One CSV per feature for each domain (``id,label,f1,f2,...``)."""

    mode: Literal["features"]
    gallery: dict[str, str]
    probe: dict[str, str]

    @model_validator(mode="after")
    def _same_features(self):
        if not self.gallery:
            raise ValueError("at least one feature CSV is required")
        if set(self.gallery) != set(self.probe):
            raise ValueError("gallery and probe must list the same feature names")
        return self


class SigmaGrid(_Strict):
    lo: float = Field(0.5, ge=0)
    hi: float = 3.0
    step: float = Field(0.05, gt=0)

    @model_validator(mode="after")
    def _order(self):
        if self.hi < self.lo:
            raise ValueError("sigma_grid.hi must be >= lo")
        return self


class Preprocessing(_Strict):
    gamma: float = Field(1.25, gt=0)
    k: float = Field(1.0, gt=0)
    sigma_grid: SigmaGrid = SigmaGrid()
    sigma: float | None = Field(None, ge=0)
    upsample_factor: float | None = Field(None, gt=0)
    enable_degradation: bool = True
    # Stands in for the face hallucination step; only bicubic is available.
    super_resolution: Literal["bicubic"] = "bicubic"


class FeatureConfig(_Strict):
    id: FeatureId
    params: dict[str, float | int | str | list[int]] = Field(default_factory=dict)


class KernelConfig(_Strict):
    family: KernelFamily
    sigma_multiples: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    sigmas: list[float] | None = None
    c: float | None = None
    alpha: float | None = None
    d: int = Field(2, ge=1)

    @model_validator(mode="after")
    def _positive(self):
        if any(m <= 0 for m in self.sigma_multiples) or not self.sigma_multiples:
            raise ValueError("sigma_multiples must be non-empty and positive")
        if self.sigmas is not None and (not self.sigmas or any(s <= 0 for s in self.sigmas)):
            raise ValueError("sigmas must be non-empty and positive")
        return self


class MklConfig(_Strict):
    C: float = Field(1.0, gt=0)
    threshold: float = Field(1e-3, ge=0, lt=1)
    max_iter: int = Field(5000, ge=1)
    seed: int = 0


class DaConfig(_Strict):
    enabled: bool = True
    rank_tol: float = Field(1e-10, gt=0)
    targets_per_subject: int | None = Field(None, ge=1)


class KnnConfig(_Strict):
    k: int = Field(1, ge=1)


class MetricsConfig(_Strict):
    rank_max: int | None = Field(None, ge=1)
    roc_points: int | None = Field(None, ge=2)


class ExperimentConfig(_Strict):
    dataset: ImageDataset | FeatureDataset = Field(discriminator="mode")
    preprocessing: Preprocessing = Preprocessing()
    features: list[FeatureConfig] = Field(default_factory=list)
    kernels: list[KernelConfig]
    mkl: MklConfig = MklConfig()
    da: DaConfig = DaConfig()
    knn: KnnConfig = KnnConfig()
    metrics: MetricsConfig = MetricsConfig()
    output_dir: str = "results"
    cache_dir: str | None = None

    @model_validator(mode="after")
    def _non_empty(self):
        if not self.kernels:
            raise ValueError("at least one kernel family is required")
        if self.dataset.mode == "images" and not self.features:
            raise ValueError("image datasets need at least one feature extractor")
        if self.dataset.mode == "features" and self.features:
            raise ValueError("'features' applies to image datasets only; "
                             "CSV datasets name features in dataset.gallery")
        return self

    @property
    def feature_names(self) -> list[str]:
        if self.dataset.mode == "features":
            return sorted(self.dataset.gallery)
        return [f.id.value for f in self.features]

    def digest(self) -> str:
        """Stable hash of the settings that influence results."""
        data = self.model_dump(mode="json", exclude={"output_dir", "cache_dir"})
        blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _resolve(base: Path, p: str) -> str:
    q = Path(p).expanduser()
    return str(q if q.is_absolute() else (base / q).resolve())


def load_config(path, check_paths: bool = True) -> ExperimentConfig:
    """Parse a JSON config; relative paths resolve against the file's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw, base=path.parent, check_paths=check_paths)


def parse_config(raw: dict, base=".", check_paths: bool = True) -> ExperimentConfig:
    base = Path(base)
    if isinstance(raw, dict) and isinstance(raw.get("dataset"), dict):
        ds = dict(raw["dataset"])
        if ds.get("mode") == "images":
            for key in ("gallery_dir", "probe_dir"):
                if isinstance(ds.get(key), str):
                    ds[key] = _resolve(base, ds[key])
        elif ds.get("mode") == "features":
            for key in ("gallery", "probe"):
                if isinstance(ds.get(key), dict):
                    ds[key] = {f: _resolve(base, p) if isinstance(p, str) else p
                               for f, p in ds[key].items()}
        raw = {**raw, "dataset": ds}
        for key in ("output_dir", "cache_dir"):
            if isinstance(raw.get(key), str):
                raw[key] = _resolve(base, raw[key])
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        lines = [f"{'.'.join(str(x) for x in e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines)) from None
    if check_paths:
        check_dataset_paths(cfg)
    return cfg


def check_dataset_paths(cfg: ExperimentConfig) -> None:
    ds = cfg.dataset
    missing = []
    if ds.mode == "images":
        for key in ("gallery_dir", "probe_dir"):
            if not Path(getattr(ds, key)).is_dir():
                missing.append(f"dataset.{key}: {getattr(ds, key)}")
    else:
        for dom in ("gallery", "probe"):
            for f, p in getattr(ds, dom).items():
                if not Path(p).is_file():
                    missing.append(f"dataset.{dom}.{f}: {p}")
    if missing:
        raise ConfigError("missing dataset paths:\n  " + "\n  ".join(missing))
