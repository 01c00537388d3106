import argparse
import logging
from pathlib import Path

from app.commands.common import (
    EXIT_OK,
    add_debug_argument,
    add_threads_argument,
    debug_from,
    load_equirect,
    load_pose,
    workers_from,
)
from app.core.config import load_pipeline_config, save_model
from app.models.models import PoseRecord
from app.services.localization_service import LocalizationService

# Configure logging
logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("localize", help="Refine a pallet pose: yaw, then depth")
    parser.add_argument("image", type=Path, help="Equirectangular image")
    parser.add_argument("--init", type=Path, required=True, help="Initial pose JSON")
    parser.add_argument("--config", type=Path, default=None, help="Pipeline config JSON")
    parser.add_argument("--out", type=Path, required=True, help="Output pose JSON")
    add_threads_argument(parser)
    add_debug_argument(parser)
    parser.set_defaults(handler=cmd_localize)


def cmd_localize(args: argparse.Namespace) -> int:
    """
    Localize one pallet and write its pose record with stage timings.
    """
    config = load_pipeline_config(args.config)
    initial = load_pose(args.init)
    eq = load_equirect(args.image)

    localizer = LocalizationService(config, workers_from(args), debug_from(args))
    result = localizer.localize_pallet(eq, initial)
    save_model(args.out, PoseRecord.from_result(result))
    logger.info(f"Wrote pose to {args.out}")
    return EXIT_OK
