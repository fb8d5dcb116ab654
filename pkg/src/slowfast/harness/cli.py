"""Command-line entry point: ``slowfast <subcommand> [--config PATH] [--seed U64] [--out DIR] [--threads N]``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigValidationError, InsufficientDataError, SlowFastError
from .config import EXPERIMENTS, ExperimentConfig, config_from_mapping, load_config, parse_value
from .run import run_experiment

log = logging.getLogger("slowfast")

HELP = {
    "check": "probe the dissipativity and nondegeneracy assumptions",
    "abar": "estimate the averaged drift at ergodic.x_points",
    "mixing": "fit the decay exponent of synchronously coupled frozen paths",
    "weak-rate": "weak errors over scale.epsilons and their log-log slope",
    "strong-rate": "strong errors over scale.epsilons and their log-log slope",
    "expansion": "first-order correction u1 and the remainder over expansion.epsilons",
    "run": "run every experiment listed in run.experiments",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slowfast", description="Slow/fast jump-diffusion averaging experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*EXPERIMENTS, "run"):
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", metavar="PATH", help="flat key=value or JSON config file")
        p.add_argument("--seed", metavar="U64", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
        p.add_argument("--threads", metavar="N", type=int, help="worker threads; affects speed only")
        p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                       help="override a single config key (repeatable)")
        p.add_argument("-q", "--quiet", action="store_true", help="only print errors")
    return parser


def config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigValidationError(item, "expected KEY=VALUE")
        overrides[key.strip()] = parse_value(value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output.dir"] = args.out
    if args.threads is not None:
        overrides["run.threads"] = args.threads
    if args.command != "run":
        overrides["run.experiments"] = [args.command]
    return config_from_mapping(overrides, cfg)


def _summary(manifest) -> str:
    lines = [f"status: {manifest.status}  backend: {manifest.backend}"]
    for name, fit in manifest.fits.items():
        if "slope" in fit:
            lines.append(f"{name}: slope {fit['slope']:.4f}  [{fit['ci_low']:.4f}, {fit['ci_high']:.4f}]"
                         f"  R^2 {fit['r_squared']:.4f}  excluded {len(fit['excluded_points'])}")
        else:
            lines.append(f"{name}: " + ", ".join(f"{k}={v}" for k, v in fit.items()))
    for f in manifest.files:
        lines.append(f"  {f['path']}  {f['sha256'][:16]}")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        manifest = run_experiment(cfg)
    except SlowFastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    if not args.quiet:
        print(_summary(manifest))
    if manifest.status == "insufficient_data":
        for f in manifest.failures:
            print(f"error: {f['experiment']}: {f['message']}", file=sys.stderr)
        return InsufficientDataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
