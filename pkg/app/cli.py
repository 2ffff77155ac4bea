"""
Command-line entry point.

    demo-mpc train-demorl --config configs/pendulum.yaml --out results/pendulum
    demo-mpc regret-check --seed 3

Every sub-command reads the same sectioned YAML file; the sub-command name
replaces the file's `experiment.command`. Exit code is 0 on success and 1
when a run aborts.
"""

import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from .config import COMMANDS, ExperimentConfig, load_config
from .errors import DemoMpcError
from .experiments import run_campaign

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="demo-mpc", description="DMD-MPC, DeMoRL and DeMo Layer experiments")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        sub = subparsers.add_parser(command)
        sub.add_argument("--config", help="YAML experiment file (defaults apply when omitted)")
        sub.add_argument("--out", help="output directory (overrides experiment.output_dir)")
        sub.add_argument("--seed", type=int, action="append",
                         help="run this seed instead of experiment.seeds; repeatable")
        sub.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
        if command == "run-demolayer":
            sub.add_argument("--policy", help="saved linear policy (JSON); trained on the fly when omitted")
    return parser


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, force=True)


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    return replace(config, experiment=replace(config.experiment, command=args.command))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        config = resolve_config(args)
        written = run_campaign(config, out_dir=args.out, seeds=args.seed,
                               policy_path=getattr(args, "policy", None))
    except (DemoMpcError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    for name, path in written.items():
        logger.info(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
