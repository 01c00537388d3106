import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Optional

from pydantic import ValidationError

from app.core.errors import ConfigParseError, InvalidArgumentError, PalletProjError
from app.core.settings import settings
from app.models.models import DetectionRecord, PalletPose, PoseRecord
from app.models.raster import EquirectImage
from app.utils.debug_utils import DebugDump
from app.utils.image_io import read_image

# Configure logging
logger = logging.getLogger(__name__)

EXIT_OK = 0


def add_threads_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="Worker threads (default: PALLETPROJ_THREADS, 0 = one per CPU)",
    )


def add_debug_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--debug-dir",
        nargs="?",
        const="",
        default=None,
        help="Write intermediate projections and tables here (bare flag: PALLETPROJ_DEBUG_DIR)",
    )


def workers_from(args: argparse.Namespace) -> Optional[int]:
    threads = getattr(args, "threads", None)
    if threads is None:
        return None
    if threads < 0:
        raise InvalidArgumentError("--threads must be >= 0")
    return threads or settings.worker_count()


def debug_from(args: argparse.Namespace) -> DebugDump:
    value = getattr(args, "debug_dir", None)
    if value is None:
        return DebugDump(None)
    if value == "":
        if settings.DEBUG_DIR is None:
            raise InvalidArgumentError("--debug-dir given without a path and PALLETPROJ_DEBUG_DIR is unset")
        return DebugDump(settings.DEBUG_DIR)
    return DebugDump(Path(value))


def load_equirect(path: Path) -> EquirectImage:
    """Read a panorama and check its 2:1 shape."""
    image = read_image(path)
    try:
        return EquirectImage(image=image)
    except ValidationError as e:
        raise InvalidArgumentError(f"{path} is not an equirectangular image: {e.errors()[0]['msg']}")


def load_pose(path: Path) -> PalletPose:
    """
    Initial pose from a PalletPose file or from a pose/detection record.

    Records written by ``localize`` and the entries of a ``detect`` output use
    ``position_mm``; plain poses use ``position``.
    """
    if not path.exists():
        raise ConfigParseError(f"{path} not found")
    payload = path.read_bytes()
    try:
        return PalletPose.model_validate_json(payload)
    except ValidationError as pose_error:
        for record_type in (PoseRecord, DetectionRecord):
            try:
                record = record_type.model_validate_json(payload)
            except ValidationError:
                continue
            return PalletPose(position=record.position_mm, yaw_deg=record.yaw_deg)
        logger.error(f"Error loading pose from {path}: {str(pose_error)}")
        raise ConfigParseError(f"{path} holds neither a pose nor a pose record:\n{str(pose_error)}")


def run_command(handler: Callable[[argparse.Namespace], int], args: argparse.Namespace) -> int:
    """
    Run a subcommand handler and map pipeline errors to exit codes.

    Args:
        handler: Subcommand implementation
        args: Parsed arguments

    Returns:
        Process exit status
    """
    try:
        return handler(args)
    except PalletProjError as e:
        logger.error(f"{args.command} failed ({e.code}): {str(e)}")
        print(f"error [{e.code}]: {str(e)}", file=sys.stderr)
        return e.exit_code
