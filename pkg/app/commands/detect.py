import argparse
import logging
from pathlib import Path

from app.commands.common import (
    EXIT_OK,
    add_debug_argument,
    add_threads_argument,
    debug_from,
    load_equirect,
    workers_from,
)
from app.core.config import load_json_model, load_pipeline_config, save_model
from app.core.errors import InvalidArgumentError
from app.models.models import DetectionList, DetectionRecord, PlaneSpec
from app.services.detection_service import DetectionService

# Configure logging
logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("detect", help="Detect pallets on the shelf-front plane")
    parser.add_argument("image", type=Path, help="Equirectangular image")
    parser.add_argument("--config", type=Path, default=None, help="Pipeline config JSON")
    parser.add_argument("--shelf", type=Path, default=None, help="Shelf plane JSON (overrides the config's shelf)")
    parser.add_argument("--out", type=Path, required=True, help="Output detections JSON")
    add_threads_argument(parser)
    add_debug_argument(parser)
    parser.set_defaults(handler=cmd_detect)


def cmd_detect(args: argparse.Namespace) -> int:
    """
    Detect pallets and write them as a list, empty when nothing is found.
    """
    config = load_pipeline_config(args.config)
    shelf = load_json_model(args.shelf, PlaneSpec) if args.shelf else config.shelf
    if shelf is None:
        raise InvalidArgumentError("no shelf plane: pass --shelf or set 'shelf' in the config")
    eq = load_equirect(args.image)

    detector = DetectionService(config, workers_from(args), debug_from(args))
    detections = detector.detect_pallets(eq, shelf)
    records = [DetectionRecord.from_detection(d) for d in detections]
    save_model(args.out, DetectionList(count=len(records), detections=records))
    logger.info(f"Wrote {len(records)} detection(s) to {args.out}")
    return EXIT_OK
