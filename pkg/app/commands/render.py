import argparse
import logging
from pathlib import Path

from app.commands.common import EXIT_OK, add_threads_argument, workers_from
from app.core.config import dump_model, load_json_model
from app.models.models import GroundTruthFile, SceneModel
from app.services.render_service import RenderService
from app.utils.image_io import encode_image, write_files_atomic

# Configure logging
logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("render", help="Ray-cast a scene into an equirectangular image")
    parser.add_argument("scene", type=Path, help="Scene JSON")
    parser.add_argument("--out", type=Path, required=True, help="Output image (.png or .ppm)")
    parser.add_argument("--truth", type=Path, required=True, help="Output ground-truth JSON")
    parser.add_argument("--width", type=int, default=4096)
    parser.add_argument("--height", type=int, default=2048)
    add_threads_argument(parser)
    parser.set_defaults(handler=cmd_render)


def cmd_render(args: argparse.Namespace) -> int:
    """
    Render a scene and write the panorama with its ground-truth poses.
    """
    scene = load_json_model(args.scene, SceneModel)
    renderer = RenderService(workers_from(args))
    eq = renderer.render_equirect(scene, args.width, args.height)
    truth = GroundTruthFile(pallets=[renderer.ground_truth(scene, i) for i in range(len(scene.pallets))])

    # Image and truth land together or not at all
    write_files_atomic({args.out: encode_image(args.out, eq.image), args.truth: dump_model(truth)})
    logger.info(f"Wrote {args.out} and {args.truth}")
    return EXIT_OK
