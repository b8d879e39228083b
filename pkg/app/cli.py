"""
Command line: watch ida|analyze|simulate|report --config <path> --out <dir> [--seed N]
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from app.core.config import settings
from app.core.errors import ConfigError, WatchError
from app.schemas.plan import RunConfig
from app.schemas.scenario import ScenarioSpec
from app.services import pipeline

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="watch", description="Treatment effect heterogeneity workflow")
    parser.add_argument("--log-level", default=None, help="Override WATCH_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ida": "Initial data analysis report and figures",
        "analyze": "Pseudo-outcomes, global test, importance, displays and findings",
        "simulate": "Simulated trial with ground truth (config is a scenario file)",
        "report": "Re-render findings.md from findings.json and sensitivity reruns",
    }
    for name, text in helps.items():
        command = commands.add_parser(name, help=text)
        command.add_argument("--config", required=True, type=Path)
        command.add_argument("--out", type=Path, default=Path(settings.OUTPUT_DIR))
        command.add_argument("--seed", type=int, default=None, help="Override the configured seed")
    return parser


def _load_config(path: Path, seed: Optional[int]) -> RunConfig:
    config = RunConfig.from_file(path)
    return config.with_seed(seed) if seed is not None else config


def _load_scenario(path: Path, seed: Optional[int]) -> ScenarioSpec:
    spec = ScenarioSpec.from_file(path)
    if seed is None:
        return spec
    try:
        return ScenarioSpec.model_validate({**spec.model_dump(), "seed": seed})
    except ValueError as e:
        raise ConfigError(f"invalid seed override {seed}: {e}") from e


def run(args: argparse.Namespace) -> None:
    if args.command == "simulate":
        pipeline.run_simulate(_load_scenario(args.config, args.seed), args.out)
        return
    config = _load_config(args.config, args.seed)
    if args.command == "ida":
        pipeline.run_ida(config, args.out)
    elif args.command == "analyze":
        findings = pipeline.run_analyze(config, args.out)
        logger.info(f"Global test p = {findings.het_test.p_value:.4g} ({findings.het_test.verbal.value})")
    else:
        pipeline.run_report(config, args.out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(args.log_level or settings.LOG_LEVEL).upper(), format=settings.LOG_FORMAT)
    try:
        run(args)
    except WatchError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except ValueError as e:
        logger.error(f"Invalid input: {e}")
        return 1
    logger.info(f"watch {args.command} finished, outputs in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
