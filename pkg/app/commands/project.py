import argparse
import logging
from pathlib import Path

from app.commands.common import EXIT_OK, add_threads_argument, load_equirect, workers_from
from app.core.config import load_json_model, load_pipeline_config
from app.models.models import ChannelSelector, PlaneSpec
from app.services.projection_service import ProjectionService
from app.utils.image_io import write_image

# Configure logging
logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("project", help="Project a panorama onto a metric plane")
    parser.add_argument("image", type=Path, help="Equirectangular image")
    parser.add_argument("--plane", type=Path, required=True, help="Plane JSON")
    parser.add_argument("--out", type=Path, required=True, help="Output image (.png, .ppm or .pgm)")
    parser.add_argument("--config", type=Path, default=None, help="Pipeline config JSON")
    parser.add_argument(
        "--channel",
        choices=[c.value for c in ChannelSelector],
        default=None,
        help="Project one channel instead of the color image",
    )
    add_threads_argument(parser)
    parser.set_defaults(handler=cmd_project)


def cmd_project(args: argparse.Namespace) -> int:
    """
    Write the projection of a panorama onto a plane.
    """
    config = load_pipeline_config(args.config)
    plane = load_json_model(args.plane, PlaneSpec)
    eq = load_equirect(args.image)
    projection = ProjectionService(config, workers_from(args))
    if args.channel:
        eq = projection.channel_panorama(eq, ChannelSelector(args.channel))
    projected = projection.project_plane(eq, plane)
    write_image(args.out, projected)
    logger.info(f"Wrote {plane.cols}x{plane.rows} projection to {args.out}")
    return EXIT_OK
