import argparse
import sys
from typing import List, Optional

from app.commands import detect, evaluate, localize, project, render
from app.commands.common import run_command
from app.core.config import configure_logging
from app.core.errors import ConfigParseError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="palletproj",
        description="Pallet position and yaw from a single 360-degree image",
    )
    parser.add_argument("--log-level", default=None, help="Logging level (default: PALLETPROJ_LOG_LEVEL or INFO)")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Subcommands
    render.register(subparsers)
    project.register(subparsers)
    detect.register(subparsers)
    localize.register(subparsers)
    evaluate.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse usage errors share the parse-error exit code
        return ConfigParseError.exit_code if e.code else 0
    configure_logging(args.log_level)
    return run_command(args.handler, args)


if __name__ == "__main__":
    sys.exit(main())
