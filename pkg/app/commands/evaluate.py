import argparse
import logging
from pathlib import Path

from app.commands.common import EXIT_OK, add_threads_argument, workers_from
from app.core.config import load_json_model, load_pipeline_config, save_model
from app.models.models import SceneModel
from app.services.experiment_service import (
    DEFAULT_DEPTH_OFFSETS,
    DEFAULT_TRAJECTORY,
    DEFAULT_YAW_OFFSETS,
    ExperimentService,
)

# Configure logging
logger = logging.getLogger(__name__)


def _floats(text: str):
    return tuple(float(part) for part in text.split(",") if part.strip())


def register(subparsers) -> None:
    parser = subparsers.add_parser("evaluate", help="Run a perturbation grid or a camera trajectory on a scene")
    parser.add_argument("scene", type=Path, help="Scene JSON")
    parser.add_argument("--mode", choices=["grid", "trajectory"], default="grid")
    parser.add_argument("--index", type=int, default=0, help="Pallet to localize")
    parser.add_argument("--config", type=Path, default=None, help="Pipeline config JSON")
    parser.add_argument("--out", type=Path, required=True, help="Output report JSON")
    parser.add_argument("--width", type=int, default=4096)
    parser.add_argument("--height", type=int, default=2048)
    parser.add_argument("--yaw-offsets", type=_floats, default=DEFAULT_YAW_OFFSETS, help="Comma-separated degrees")
    parser.add_argument("--depth-offsets", type=_floats, default=DEFAULT_DEPTH_OFFSETS, help="Comma-separated mm")
    parser.add_argument("--camera-offsets", type=_floats, default=DEFAULT_TRAJECTORY, help="Comma-separated mm")
    add_threads_argument(parser)
    parser.set_defaults(handler=cmd_evaluate)


def cmd_evaluate(args: argparse.Namespace) -> int:
    """
    Evaluate localization on a rendered scene and write the report.
    """
    config = load_pipeline_config(args.config)
    scene = load_json_model(args.scene, SceneModel)
    experiments = ExperimentService(config, workers_from(args))

    if args.mode == "trajectory":
        report = experiments.trajectory(scene, args.index, args.camera_offsets, args.width, args.height)
    else:
        truth = experiments.renderer.ground_truth(scene, args.index)
        eq = experiments.renderer.render_equirect(scene, args.width, args.height)
        report = experiments.perturbation_grid(
            eq, truth.pose, args.yaw_offsets, args.depth_offsets, scene.pallets[args.index].spec
        )
    save_model(args.out, report)
    logger.info(f"Wrote {args.mode} report to {args.out}")
    return EXIT_OK
