"""Command-line entry point: ``mfkl <verb> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, DataError, MfklError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


def _print_result(result, paths) -> None:
    if result.rank1 is None:
        print("probe labels unavailable; predictions written without scores")
    else:
        print(f"rank-1: {result.rank1:.4f}  AUC: {result.auc:.4f}")
    print(f"results: {paths['results.json']}")


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"config OK ({cfg.dataset.mode} mode, features: {', '.join(cfg.feature_names)}, "
          f"digest {cfg.digest()})")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import run_training

    cfg = load_config(args.config)
    bundle = run_training(cfg)
    out = Path(args.bundle or Path(cfg.output_dir) / "bundle.pkl")
    bundle.save(out)
    for f, spec, beta in bundle.pairing.pairs:
        print(f"{f}: {spec.label}  beta={beta:.4f}")
    print(f"bundle: {out}")
    return EXIT_OK


def cmd_test(args) -> int:
    from .pipeline import TrainedBundle, emit_results, run_testing

    cfg = load_config(args.config)
    bundle = TrainedBundle.load(args.bundle)
    result = run_testing(bundle, cfg)
    _print_result(result, emit_results(result, bundle, cfg))
    return EXIT_OK


def cmd_run(args) -> int:
    from .pipeline import run_experiment

    cfg = load_config(args.config)
    bundle, result, paths = run_experiment(cfg)
    bundle.save(Path(cfg.output_dir) / "bundle.pkl")
    _print_result(result, paths)
    return EXIT_OK


def cmd_sigma(args) -> int:
    from .pipeline import sigma_curve

    cfg = load_config(args.config)
    est = sigma_curve(cfg)
    out = Path(args.out or Path(cfg.output_dir) / "sigma_curve.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    est.write_csv(out)
    print(f"sigma_opt: {est.sigma_opt:g}")
    print(f"curve: {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import generate

    path = generate(args.preset, args.out or args.preset, args.seed)
    print(f"config: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .synth import PRESETS

    parser = argparse.ArgumentParser(prog="mfkl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("validate", help="check a config file and its dataset paths")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="select feature/kernel pairs and fit the adaptation")
    p.add_argument("config")
    p.add_argument("--bundle", help="where to write the trained bundle "
                   "(default: <output_dir>/bundle.pkl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("test", help="classify probes with a trained bundle and score them")
    p.add_argument("config")
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("run", help="train then test")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sigma", help="estimate the gallery blur and write the divergence curve")
    p.add_argument("config")
    p.add_argument("--out", help="CSV path (default: <output_dir>/sigma_curve.csv)")
    p.set_defaults(func=cmd_sigma)

    p = sub.add_parser("synth", help="generate a synthetic dataset with a ready config")
    p.add_argument("preset", choices=PRESETS)
    p.add_argument("--out", help="output directory (default: ./<preset>)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MfklError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
