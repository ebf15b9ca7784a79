"""``otfs-isac`` command-line entry point."""
import argparse
import logging
import sys
from collections.abc import Sequence
from typing import Optional

from .. import __version__
from .config import SimConfig, load_config
from .experiments import EXPERIMENTS, run_experiment, train_detector
from .reporting import write_report
from .selftest import run_selftest

logger = logging.getLogger(__name__)

DESCRIPTIONS = {
    "chest-sweep": "channel-estimation NMSE versus pilot SNR or frame length",
    "ber-sweep": "IMFC and LMMSE bit error rate versus Eb/N0 or stopping threshold",
    "sensing-sweep": "range and velocity RMSE versus radar SNR",
    "detect-eval": "path-count estimates of the stopping criterion and the FNN",
    "fnn-train": "generate the training set, train and save the path-count FNN",
    "fnn-eval": "accuracy of a trained path-count FNN versus pilot SNR",
    "selftest": "run the operator and estimator oracle checks",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment file (defaults if omitted)")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", help="override run.out (CSV report path)")
    common.add_argument("--trials", type=int, help="override run.trials")
    common.add_argument("--threads", type=int, help="override run.threads")
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG"
    )
    common.add_argument("--progress", action="store_true", help="show progress bars")

    parser = argparse.ArgumentParser(
        prog="otfs-isac",
        description="Delay-Doppler ISAC link-level simulations",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in DESCRIPTIONS.items():
        subparsers.add_parser(
            name, parents=[common], help=help_text, description=help_text
        )
    return parser


def _configure_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load(args: argparse.Namespace) -> SimConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(
        seed=args.seed, out=args.out, trials=args.trials, threads=args.threads
    )


def _selftest() -> int:
    results = run_selftest()
    for result in results:
        status = "ok" if result.passed else "FAIL"
        print(f"{status:4}  {result.name}: {result.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed", file=sys.stderr)
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)

    try:
        if args.command == "selftest":
            return _selftest()
        cfg = _load(args)
        if args.command == "fnn-train":
            _, rows = train_detector(cfg, progress=args.progress)
        elif args.command in EXPERIMENTS:
            rows = run_experiment(args.command, cfg, progress=args.progress)
        else:
            raise ValueError(f"Unknown command {args.command}")
        path = write_report(rows, cfg.run.out)
        print(f"wrote {len(rows)} rows to {path}")
        return 0
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except Exception as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        logger.debug("Traceback", exc_info=True)
        print(f"otfs-isac {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
