"""Training and testing pipeline: preprocess, extract, select, adapt, classify, score."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import pickle
import platform
import sys
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from . import __version__
from .config import ExperimentConfig, KernelConfig
from .eigen_da import DaGramSet, kernel_da, knn_from_distances, vote_across_features
from .errors import ConfigError, DataError, MfklError, tag_stage
from .features import (
    FeatureId, GABOR_PRESETS, bow_encode, dense_patch_descriptors, fit_codebook,
    fit_eigenfaces, fit_fisherfaces, gabor_face, lbp_histogram, vlad_encode, weber_face,
)
from .imageproc import (
    SigmaEstimate, bicubic_resample, estimate_sigma, gaussian_blur, power_law, read_image, resize,
)
from .io import read_feature_csv
from .kernels import KernelFamily, KernelSpec, gram, kernel_values, unit_trace_normalize
from .metrics import EvalResult, compute_cmc, compute_roc, confusion_matrix
from .solver import FeatureKernelPairing, LabeledSet, mfkl_select

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".pgm")


# -- data containers ----------------------------------------------------------

@dataclass
class Domain:
    """Samples of one domain with a feature matrix per feature name."""

    ids: list[str]
    labels: list[str | None]
    features: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> "Domain":
        idx = list(idx)
        return Domain([self.ids[i] for i in idx], [self.labels[i] for i in idx],
                      {f: X[idx] for f, X in self.features.items()})


@dataclass
class Prepared:
    gallery: Domain
    probe: Domain
    extractors: dict[str, object] = field(default_factory=dict)
    sigma: SigmaEstimate | None = None
    sigma_opt: float | None = None
    image_shape: tuple[int, int] | None = None


@dataclass
class TrainedBundle:
    config_digest: str
    pairing: FeatureKernelPairing
    gallery_ids: list[str]
    gallery_labels: list[str]
    gallery_features: dict[str, np.ndarray]
    target_ids: list[str]
    target_features: dict[str, np.ndarray]
    da_models: dict[str, DaGramSet]
    extractors: dict[str, object]
    candidate_kernels: dict[str, list[str]]
    sigma: SigmaEstimate | None = None
    sigma_opt: float | None = None
    image_shape: tuple[int, int] | None = None
    version: str = __version__

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with tmp.open("wb") as fh:
            pickle.dump(self, fh, protocol=pickle.HIGHEST_PROTOCOL)
        os.replace(tmp, path)
        return path

    @staticmethod
    def load(path) -> "TrainedBundle":
        try:
            with Path(path).open("rb") as fh:
                obj = pickle.load(fh)
        except (OSError, pickle.UnpicklingError, EOFError) as exc:
            raise DataError(f"cannot load bundle {path}: {exc}") from None
        if not isinstance(obj, TrainedBundle):
            raise DataError(f"{path} does not hold a trained bundle")
        return obj


# -- stage cache --------------------------------------------------------------

class StageCache:
    """Pickle cache of stage outputs keyed by a config digest."""

    def __init__(self, root):
        self.root = None if root is None else Path(root)

    def get_or_compute(self, stage: str, key: str, fn):
        if self.root is None:
            return fn()
        path = self.root / f"{stage}-{key}.pkl"
        if path.is_file():
            try:
                with path.open("rb") as fh:
                    log.info("cache hit: %s", path.name)
                    return pickle.load(fh)
            except (pickle.UnpicklingError, EOFError, OSError):
                log.warning("ignoring unreadable cache entry %s", path)
        value = fn()
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        with tmp.open("wb") as fh:
            pickle.dump(value, fh, protocol=pickle.HIGHEST_PROTOCOL)
        os.replace(tmp, path)
        return value


def _input_files(cfg: ExperimentConfig) -> list[Path]:
    ds = cfg.dataset
    if ds.mode == "features":
        return [Path(p) for dom in (ds.gallery, ds.probe) for _, p in sorted(dom.items())]
    out = []
    for root in (ds.gallery_dir, ds.probe_dir):
        out += sorted(p for p in Path(root).rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    return out


def input_digest(cfg: ExperimentConfig) -> str:
    h = hashlib.sha256()
    for p in _input_files(cfg):
        h.update(str(p).encode())
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()[:16]


def _stage_key(cfg: ExperimentConfig, *sections: str) -> str:
    data = cfg.model_dump(mode="json", include=set(sections))
    blob = json.dumps(data, sort_keys=True).encode() + input_digest(cfg).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- ingestion ----------------------------------------------------------------

def _load_feature_domains(cfg: ExperimentConfig) -> Prepared:
    ds = cfg.dataset
    domains = []
    for dom in ("gallery", "probe"):
        tables = {f: read_feature_csv(p) for f, p in sorted(getattr(ds, dom).items())}
        first = next(iter(tables.values()))
        for f, t in tables.items():
            if t.ids != first.ids or t.labels != first.labels:
                raise DataError(f"{dom} feature {f!r}: sample ids/labels differ from other features")
        domains.append(Domain(list(first.ids), list(first.labels),
                              {f: t.values for f, t in tables.items()}))
    gallery, probe = domains
    if not all(lbl is not None for lbl in gallery.labels):
        raise DataError("every gallery sample needs a label")
    for f in gallery.features:
        if gallery.features[f].shape[1] != probe.features[f].shape[1]:
            raise DataError(f"feature {f!r}: gallery and probe dimensions differ")
    return Prepared(gallery, probe)


def _list_images(root: Path, labeled: bool) -> tuple[list[str], list[str | None], list[Path]]:
    ids, labels, paths = [], [], []
    for p in sorted(root.iterdir()):
        if p.is_dir():
            for q in sorted(p.iterdir()):
                if q.suffix.lower() in IMAGE_SUFFIXES:
                    ids.append(f"{p.name}/{q.name}")
                    labels.append(p.name)
                    paths.append(q)
        elif p.suffix.lower() in IMAGE_SUFFIXES and not labeled:
            ids.append(p.name)
            labels.append(None)
            paths.append(p)
    if not paths:
        raise DataError(f"no images found under {root}")
    return ids, labels, paths


def _common_shape(imgs, what: str) -> tuple[int, int]:
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise DataError(f"{what} images have differing sizes {sorted(shapes)}")
    return shapes.pop()


def preprocess_gallery(cfg: ExperimentConfig, imgs, probe_up=None):
    """Halve and blur the gallery; sigma is fixed or estimated against ``probe_up``."""
    pp = cfg.preprocessing
    if not pp.enable_degradation:
        return list(imgs), None, None
    down = [bicubic_resample(im, 0.5) for im in imgs]
    est = None
    sigma = pp.sigma
    if sigma is None:
        if probe_up is None:
            raise ConfigError("sigma estimation needs probe images")
        g = pp.sigma_grid
        est = estimate_sigma(down, probe_up, g.lo, g.hi, g.step)
        sigma = est.sigma_opt
    return [gaussian_blur(im, sigma) for im in down], est, float(sigma)


def upsample_probes(cfg: ExperimentConfig, imgs, shape) -> list[np.ndarray]:
    """Bring probes to the (degraded) gallery size; an explicit factor must land on it."""
    v = cfg.preprocessing.upsample_factor
    out = []
    for im in imgs:
        up = resize(im, shape) if v is None else bicubic_resample(im, v)
        if up.shape != tuple(shape):
            raise DataError(f"probe of size {im.shape} upsampled by {v} gives {up.shape}, "
                            f"gallery is {tuple(shape)}")
        out.append(up)
    return out


def _params(fc, allowed: dict) -> dict:
    unknown = set(fc.params) - set(allowed)
    if unknown:
        raise ConfigError(f"feature {fc.id.value}: unknown params {sorted(unknown)}")
    return {**allowed, **fc.params}


def fit_extractors(cfg: ExperimentConfig, gallery_imgs, gallery_labels) -> dict[str, object]:
    models: dict[str, object] = {}
    seed = cfg.mkl.seed
    for fc in cfg.features:
        fid = fc.id
        if fid is FeatureId.EIGEN:
            p = _params(fc, {"variance_keep": 0.95})
            models[fid.value] = fit_eigenfaces(gallery_imgs, float(p["variance_keep"]))
        elif fid is FeatureId.FISHER:
            _params(fc, {})
            models[fid.value] = fit_fisherfaces(gallery_imgs, gallery_labels)
        elif fid in (FeatureId.BOW, FeatureId.VLAD):
            p = _params(fc, {"k": 64, "patch": 16, "stride": 4})
            desc = np.vstack([dense_patch_descriptors(im, int(p["patch"]), int(p["stride"]))
                              for im in gallery_imgs])
            models[fid.value] = fit_codebook(desc, int(p["k"]), seed, trained_on="gallery")
    return models


def extract(cfg: ExperimentConfig, imgs, models: dict) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for fc in cfg.features:
        fid = fc.id
        if fid is FeatureId.LBP:
            p = _params(fc, {"grid_rows": 4, "grid_cols": 4})
            vecs = [lbp_histogram(im, int(p["grid_rows"]), int(p["grid_cols"])).values for im in imgs]
        elif fid in (FeatureId.EIGEN, FeatureId.FISHER):
            vecs = [models[fid.value].transform(im).values for im in imgs]
        elif fid is FeatureId.GABOR:
            p = _params(fc, {"preset": "", "scales": [0, 1, 2, 3, 4], "orientations": 4,
                             "downsample": 4})
            scales, n_mu = p["scales"], int(p["orientations"])
            if p["preset"]:
                if p["preset"] not in GABOR_PRESETS:
                    raise ConfigError(f"unknown Gabor preset {p['preset']!r}")
                scales, n_mu = GABOR_PRESETS[p["preset"]]
            vecs = [gabor_face(im, list(scales), n_mu, downsample=int(p["downsample"])).values
                    for im in imgs]
        elif fid is FeatureId.WEBER:
            p = _params(fc, {"alpha_w": 1.0})
            vecs = [weber_face(im, float(p["alpha_w"])).values for im in imgs]
        else:
            p = _params(fc, {"k": 64, "patch": 16, "stride": 4})
            enc = bow_encode if fid is FeatureId.BOW else vlad_encode
            vecs = [enc(dense_patch_descriptors(im, int(p["patch"]), int(p["stride"])),
                        models[fid.value]).values for im in imgs]
        out[fid.value] = np.vstack(vecs)
    return out


def _load_images(paths) -> list[np.ndarray]:
    return [read_image(p) for p in paths]


def _load_image_domains(cfg: ExperimentConfig, extractors=None, sigma_opt=None,
                        image_shape=None) -> Prepared:
    ds = cfg.dataset
    g_ids, g_labels, g_paths = _list_images(Path(ds.gallery_dir), labeled=True)
    p_ids, p_labels, p_paths = _list_images(Path(ds.probe_dir), labeled=False)
    g_imgs = _load_images(g_paths)
    p_imgs = _load_images(p_paths)
    g_shape = _common_shape(g_imgs, "gallery")
    _common_shape(p_imgs, "probe")
    pp = cfg.preprocessing
    target_shape = image_shape
    if target_shape is None:
        target_shape = bicubic_resample(g_imgs[0], 0.5).shape if pp.enable_degradation else g_shape
    p_up = upsample_probes(cfg, p_imgs, target_shape)
    if sigma_opt is None:
        g_prep, est, sigma_opt = preprocess_gallery(cfg, g_imgs, p_up)
    else:
        est = None
        g_prep = [gaussian_blur(bicubic_resample(im, 0.5), sigma_opt) for im in g_imgs] \
            if pp.enable_degradation else g_imgs
    p_prep = [power_law(im, pp.gamma, pp.k) for im in p_up]
    if extractors is None:
        extractors = fit_extractors(cfg, g_prep, g_labels)
    gallery = Domain(g_ids, g_labels, extract(cfg, g_prep, extractors))
    probe = Domain(p_ids, p_labels, extract(cfg, p_prep, extractors))
    return Prepared(gallery, probe, extractors, est, sigma_opt, tuple(target_shape))


def prepare(cfg: ExperimentConfig, cache: StageCache | None = None) -> Prepared:
    cache = cache or StageCache(cfg.cache_dir)
    key = _stage_key(cfg, "dataset", "preprocessing", "features", "mkl")

    def compute():
        if cfg.dataset.mode == "features":
            return _load_feature_domains(cfg)
        return _load_image_domains(cfg)

    try:
        return cache.get_or_compute("prepare", key, compute)
    except MfklError as exc:
        raise tag_stage(exc, "prepare")


# -- kernels ------------------------------------------------------------------

def median_distance(X: np.ndarray) -> float:
    if X.shape[0] < 2:
        return 1.0
    d = pdist(X)
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def expand_kernels(kernels: list[KernelConfig], X: np.ndarray, nonnegative: bool,
                   feature: str = "") -> list[KernelSpec]:
    """Concrete kernel specs for one feature from the configured families and grids.

    Gaussian widths are ``m * median`` pairwise distance; the RBF exponent
    uses the plain distance so its width is ``sqrt(m * median / 2)``.
    """
    med = median_distance(X)
    specs: list[KernelSpec] = []
    for kc in kernels:
        fam = kc.family
        if fam.needs_nonnegative and not nonnegative:
            log.info("feature %r has negative values; skipping %s", feature, fam.value)
            continue
        if fam is KernelFamily.LINEAR:
            specs.append(KernelSpec(fam, c=kc.c or 0.0))
        elif fam is KernelFamily.POLYNOMIAL:
            alpha = kc.alpha if kc.alpha is not None else 1.0 / X.shape[1]
            specs.append(KernelSpec(fam, c=1.0 if kc.c is None else kc.c, alpha=alpha, d=kc.d))
        elif fam is KernelFamily.CHI_SQUARE:
            specs.append(KernelSpec(fam))
        else:
            if kc.sigmas is not None:
                sigmas = list(kc.sigmas)
            elif fam is KernelFamily.GAUSSIAN:
                sigmas = [m * med for m in kc.sigma_multiples]
            else:
                sigmas = [math.sqrt(m * med / 2.0) for m in kc.sigma_multiples]
            specs += [KernelSpec(fam, sigma=float(s)) for s in sigmas]
    unique = list(dict.fromkeys(specs))
    if not unique:
        raise ConfigError(f"no usable kernel for feature {feature!r}")
    return unique


# -- training -----------------------------------------------------------------

def select_targets(cfg: ExperimentConfig, probe: Domain, n_classes: int) -> list[int]:
    """Indices of the unlabelled DA target subset (probe labels are never read)."""
    per = cfg.da.targets_per_subject
    n = len(probe)
    if per is None or per * n_classes >= n:
        return list(range(n))
    rng = np.random.default_rng(cfg.mkl.seed)
    return sorted(rng.choice(n, size=per * n_classes, replace=False).tolist())


def _train(cfg: ExperimentConfig, prep: Prepared) -> TrainedBundle:
    gallery, probe = prep.gallery, prep.probe
    labels = np.asarray(gallery.labels)
    classes = sorted(set(gallery.labels))
    if len(classes) < 2:
        raise DataError("the gallery needs at least two classes")
    t_idx = select_targets(cfg, probe, len(classes))
    targets = probe.subset(t_idx)

    blocks, candidates = {}, {}
    for f, X in gallery.features.items():
        nonneg = bool(np.all(X >= 0) and np.all(targets.features[f] >= 0))
        specs = expand_kernels(cfg.kernels, X, nonneg, f)
        blocks[f] = [unit_trace_normalize(gram(s, X)) for s in specs]
        candidates[f] = [s.label for s in specs]
    data = LabeledSet(blocks, labels, C=cfg.mkl.C)
    try:
        pairing = mfkl_select(data, cfg.mkl.threshold, max_iter=cfg.mkl.max_iter)
    except MfklError as exc:
        raise tag_stage(exc, "mkl")
    log.info("pairing: %s", [(f, k.label, round(b, 4)) for f, k, b in pairing.pairs])

    da_models = {}
    if cfg.da.enabled:
        for f, spec, _ in pairing.pairs:
            S, T = gallery.features[f], targets.features[f]
            try:
                da_models[f] = kernel_da(gram(spec, S).values, None, gram(spec, T).values,
                                         cfg.da.rank_tol, labels)
            except MfklError as exc:
                raise tag_stage(exc, f"da:{f}")
    kept = [f for f, _, _ in pairing.pairs]
    return TrainedBundle(
        config_digest=cfg.digest(),
        pairing=pairing,
        gallery_ids=list(gallery.ids),
        gallery_labels=list(gallery.labels),
        gallery_features={f: gallery.features[f] for f in kept},
        target_ids=list(targets.ids),
        target_features={f: targets.features[f] for f in kept},
        da_models=da_models,
        extractors=prep.extractors,
        candidate_kernels=candidates,
        sigma=prep.sigma,
        sigma_opt=prep.sigma_opt,
        image_shape=prep.image_shape,
    )


def run_training(cfg: ExperimentConfig, cache: StageCache | None = None) -> TrainedBundle:
    cache = cache or StageCache(cfg.cache_dir)
    prep = prepare(cfg, cache)
    key = _stage_key(cfg, "dataset", "preprocessing", "features", "kernels", "mkl", "da")
    return cache.get_or_compute("train", key, lambda: _train(cfg, prep))


# -- testing ------------------------------------------------------------------

def _diag_kernel(spec: KernelSpec, P: np.ndarray) -> np.ndarray:
    return np.array([kernel_values(spec, p[None, :], p[None, :])[0, 0] for p in P])


def probe_distances(bundle: TrainedBundle, feature: str, spec: KernelSpec,
                    P: np.ndarray) -> np.ndarray:
    """Squared RKHS distances, probes x gallery, to the (adapted) gallery."""
    G = bundle.gallery_features[feature]
    if P.shape[1] != G.shape[1]:
        raise DataError(f"feature {feature!r}: probe has {P.shape[1]} dims, bundle has {G.shape[1]}")
    da = bundle.da_models.get(feature)
    if da is not None:
        K_gp = da.cross_gram(kernel_values(spec, bundle.target_features[feature], P))
        k_gg = np.diag(da.k_ss_adapted)
    else:
        K_gp = kernel_values(spec, G, P)
        k_gg = _diag_kernel(spec, G)
    D = k_gg[:, None] + _diag_kernel(spec, P)[None, :] - 2.0 * K_gp
    return np.maximum(D, 0.0).T


def _class_min(dist: np.ndarray, labels: np.ndarray, classes: list) -> np.ndarray:
    return np.stack([dist[:, labels == c].min(axis=1) for c in classes], axis=1)


def evaluate(bundle: TrainedBundle, probe: Domain, cfg: ExperimentConfig) -> EvalResult:
    labels = np.asarray(bundle.gallery_labels)
    classes = sorted(set(bundle.gallery_labels))
    n_p = len(probe)
    if n_p == 0:
        raise DataError("no probe samples")
    k = cfg.knn.k
    preds, betas, fused = [], [], np.zeros((n_p, len(classes)))
    mass = np.zeros((n_p, len(classes)))
    diagnostics = {}
    col = {c: j for j, c in enumerate(classes)}
    for f, spec, beta in bundle.pairing.pairs:
        if f not in probe.features:
            raise DataError(f"probe set lacks feature {f!r} required by the bundle")
        dist = probe_distances(bundle, f, spec, probe.features[f])
        pred = knn_from_distances(dist, labels, k)
        preds.append(pred)
        betas.append(beta)
        for i, c in enumerate(pred):
            mass[i, col[c]] += beta
        med = float(np.median(dist))
        fused -= beta * _class_min(dist, labels, classes) / (med if med > 0 else 1.0)
        diag = {"kernel": spec.label, "beta": beta, "da": f in bundle.da_models}
        if all(t is not None for t in probe.labels):
            diag["rank1"] = float(np.mean([p == t for p, t in zip(pred, probe.labels)]))
        diagnostics[f] = diag
    final = vote_across_features(preds, betas)

    # Classes holding vote mass rank first (by mass, then id) so the top
    # of the ranking is the voted label; the rest follow by fused distance.
    rank_scores = np.where(mass > 0, 0.0, fused)
    predictions = [str(p) for p in final]
    scored = all(t is not None for t in probe.labels)
    if not scored:
        return EvalResult(None, [], [], [], classes, predictions, diagnostics)
    unknown = sorted({t for t in probe.labels if t not in col})
    if unknown:
        raise DataError(f"probe classes {unknown} are not in the gallery")
    cmc = compute_cmc(rank_scores, probe.labels, classes, cfg.metrics.rank_max, priority=mass)
    truth = np.array([col[t] for t in probe.labels])
    genuine_mask = np.zeros_like(fused, dtype=bool)
    genuine_mask[np.arange(n_p), truth] = True
    roc = compute_roc(fused[genuine_mask], fused[~genuine_mask], cfg.metrics.roc_points) \
        if len(classes) > 1 else [(0.0, 0.0), (1.0, 1.0)]
    rank1 = float(np.mean([p == t for p, t in zip(predictions, probe.labels)]))
    if abs(rank1 - cmc[0][1]) > 1e-12:
        raise AssertionError("rank-1 rate disagrees with cmc(1)")
    return EvalResult(rank1, cmc, roc, confusion_matrix(probe.labels, predictions, classes),
                      classes, predictions, diagnostics)


def run_testing(bundle: TrainedBundle, cfg: ExperimentConfig,
                cache: StageCache | None = None) -> EvalResult:
    if bundle.config_digest != cfg.digest():
        warnings.warn("bundle was trained with a different configuration", stacklevel=2)
    if cfg.dataset.mode == "features":
        probe = _load_feature_domains(cfg).probe
    else:
        if not set(bundle.gallery_features) <= {f.id.value for f in cfg.features}:
            raise DataError("config does not extract every feature the bundle needs")
        probe = _load_image_domains(cfg, bundle.extractors, bundle.sigma_opt or 0.0,
                                    bundle.image_shape).probe
    try:
        return evaluate(bundle, probe, cfg)
    except MfklError as exc:
        raise tag_stage(exc, "test")


# -- output -------------------------------------------------------------------

def _versions() -> dict[str, str]:
    import pydantic
    import scipy
    import sklearn

    return {"mfkl": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__,
            "pydantic": pydantic.__version__}


def results_payload(result: EvalResult, bundle: TrainedBundle, cfg: ExperimentConfig) -> dict:
    return {
        **result.summary(),
        "config_digest": cfg.digest(),
        "pairing": [{"feature": f, "kernel": k.label, "beta": b} for f, k, b in bundle.pairing.pairs],
        "sigma_opt": bundle.sigma_opt,
        "da_enabled": cfg.da.enabled,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def emit_results(result: EvalResult, bundle: TrainedBundle, cfg: ExperimentConfig,
                 output_dir=None) -> dict[str, Path]:
    """Write results.json, cmc.csv, roc.csv, sigma_curve.csv, pairing.json and manifest.json."""
    out = Path(output_dir or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {name: out / name for name in
                 ("results.json", "cmc.csv", "roc.csv", "sigma_curve.csv", "pairing.json",
                  "manifest.json")}
        paths["results.json"].write_text(
            json.dumps(results_payload(result, bundle, cfg), sort_keys=True, indent=2) + "\n")
        with paths["cmc.csv"].open("w") as fh:
            fh.write("rank,identification_rate\n")
            fh.writelines(f"{r},{v!r}\n" for r, v in result.cmc)
        with paths["roc.csv"].open("w") as fh:
            fh.write("false_accept_rate,verification_rate\n")
            fh.writelines(f"{a!r},{b!r}\n" for a, b in result.roc)
        if bundle.sigma is not None:
            bundle.sigma.write_csv(paths["sigma_curve.csv"])
        else:
            paths["sigma_curve.csv"].write_text("sigma,kl\n")
        paths["pairing.json"].write_text(
            json.dumps(bundle.pairing.to_dict(), sort_keys=True, indent=2) + "\n")
        manifest = {
            "config_digest": cfg.digest(),
            "input_digest": input_digest(cfg),
            "seeds": {"mkl.seed": cfg.mkl.seed},
            "versions": _versions(),
            "threads": os.environ.get("MFKL_THREADS", "1"),
            "argv": sys.argv,
            "config": cfg.model_dump(mode="json"),
        }
        paths["manifest.json"].write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise DataError(f"cannot write results to {out}: {exc}") from None
    return paths


def load_results(path) -> EvalResult:
    data = json.loads(Path(path).read_text())
    return EvalResult(
        data["rank1"], [tuple(x) for x in data["cmc"]], [tuple(x) for x in data["roc"]],
        data["confusion"], data["classes"], data["predictions"], data["per_feature"])


def run_experiment(cfg: ExperimentConfig) -> tuple[TrainedBundle, EvalResult, dict[str, Path]]:
    cache = StageCache(cfg.cache_dir)
    bundle = run_training(cfg, cache)
    result = run_testing(bundle, cfg, cache)
    return bundle, result, emit_results(result, bundle, cfg)


def sigma_curve(cfg: ExperimentConfig) -> SigmaEstimate:
    """Blur estimate between the halved gallery and the upsampled probes."""
    if cfg.dataset.mode != "images":
        raise ConfigError("sigma estimation needs an image dataset")
    ds = cfg.dataset
    g_imgs = _load_images(_list_images(Path(ds.gallery_dir), True)[2])
    p_imgs = _load_images(_list_images(Path(ds.probe_dir), False)[2])
    _common_shape(g_imgs, "gallery")
    down = [bicubic_resample(im, 0.5) for im in g_imgs]
    p_up = upsample_probes(cfg, p_imgs, down[0].shape)
    g = cfg.preprocessing.sigma_grid
    return estimate_sigma(down, p_up, g.lo, g.hi, g.step)
