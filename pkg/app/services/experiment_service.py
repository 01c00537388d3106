import logging
from typing import Optional, Sequence

import numpy as np

from app.core.errors import PalletProjError
from app.models.models import (
    GridReport,
    PalletPose,
    PalletSpec,
    PipelineConfig,
    SceneModel,
    TrajectoryFrame,
    TrajectoryReport,
    TrialResult,
)
from app.models.raster import EquirectImage
from app.services.localization_service import LocalizationService
from app.services.render_service import RenderService
from app.utils.geometry_utils import perturb_pose

# Configure logging
logger = logging.getLogger(__name__)

DEFAULT_YAW_OFFSETS = (-5.0, -2.5, 0.0, 2.5, 5.0)
DEFAULT_DEPTH_OFFSETS = (-100.0, 0.0, 150.0, 300.0, 500.0)
# Approach from 4.7 m to 1.4 m in 100 mm steps
DEFAULT_TRAJECTORY = tuple(100.0 * k for k in range(34))


def pose_errors(estimate: PalletPose, truth: PalletPose):
    """(absolute yaw error in degrees, Euclidean position error in mm)."""
    yaw_error = abs(estimate.yaw_deg - truth.yaw_deg)
    position_error = float(np.linalg.norm(estimate.position_array - truth.position_array))
    return yaw_error, position_error


def trajectory_summary(frames: Sequence[TrajectoryFrame]) -> TrajectoryReport:
    """
    Aggregate per-frame results of a camera approach.

    Frames without an estimate are counted as failed. Yaw jumps are only taken
    between neighbouring frames that were both localized.
    """
    failed = sum(f.pose is None for f in frames)
    yaw_errors = [f.yaw_error_deg for f in frames if f.yaw_error_deg is not None]
    jumps = [
        abs(b.pose.yaw_deg - a.pose.yaw_deg)
        for a, b in zip(frames, frames[1:])
        if a.pose is not None and b.pose is not None
    ]
    return TrajectoryReport(
        frames=list(frames),
        failed_frames=failed,
        all_localized=failed == 0,
        max_yaw_error_deg=max(yaw_errors) if yaw_errors else None,
        max_yaw_jump_deg=max(jumps) if jumps else None,
    )


class ExperimentService:
    def __init__(
        self,
        config: Optional[PipelineConfig] = None,
        workers: Optional[int] = None,
        yaw_tol_deg: float = 1.0,
        position_tol_mm: float = 20.0,
    ):
        self.config = config or PipelineConfig()
        self.localizer = LocalizationService(self.config, workers)
        self.renderer = RenderService(workers)
        self.yaw_tol_deg = yaw_tol_deg
        self.position_tol_mm = position_tol_mm

        logger.info(
            f"Experiment service initialized (tolerances {yaw_tol_deg} deg, {position_tol_mm} mm)"
        )

    def run_trial(
        self,
        eq: EquirectImage,
        truth: PalletPose,
        yaw_offset_deg: float,
        depth_offset_mm: float,
        spec: Optional[PalletSpec] = None,
    ) -> TrialResult:
        """
        Localize from one perturbed initial pose.

        Args:
            eq: Rendered panorama
            truth: True pose of the pallet
            yaw_offset_deg: Yaw error added to the initial pose
            depth_offset_mm: Initial pose error along the viewing ray, positive toward the camera
            spec: Pallet geometry, defaults to the configured one

        Returns:
            Trial outcome; pipeline errors are recorded, not raised
        """
        try:
            initial = perturb_pose(truth, yaw_offset_deg, depth_offset_mm)
            result = self.localizer.localize_pallet(eq, initial, spec)
        except PalletProjError as e:
            logger.warning(f"Trial ({yaw_offset_deg:+.1f} deg, {depth_offset_mm:+.0f} mm) failed: {str(e)}")
            return TrialResult(yaw_offset_deg=yaw_offset_deg, depth_offset_mm=depth_offset_mm, error_code=e.code)

        yaw_error, position_error = pose_errors(result.pose, truth)
        return TrialResult(
            yaw_offset_deg=yaw_offset_deg,
            depth_offset_mm=depth_offset_mm,
            pose=result.pose,
            yaw_error_deg=yaw_error,
            position_error_mm=position_error,
            converged=yaw_error <= self.yaw_tol_deg and position_error <= self.position_tol_mm,
            timings_ms=result.timings_ms,
        )

    def perturbation_grid(
        self,
        eq: EquirectImage,
        truth: PalletPose,
        yaw_offsets: Sequence[float] = DEFAULT_YAW_OFFSETS,
        depth_offsets: Sequence[float] = DEFAULT_DEPTH_OFFSETS,
        spec: Optional[PalletSpec] = None,
    ) -> GridReport:
        """
        Localize from every combination of yaw and depth errors.

        Args:
            eq: Rendered panorama
            truth: True pose of the pallet
            yaw_offsets: Initial yaw errors in degrees
            depth_offsets: Initial errors along the viewing ray in mm
            spec: Pallet geometry, defaults to the configured one

        Returns:
            Per-trial results with the worst errors
        """
        trials = [
            self.run_trial(eq, truth, yaw, depth, spec)
            for yaw in yaw_offsets
            for depth in depth_offsets
        ]
        yaw_errors = [t.yaw_error_deg for t in trials if t.yaw_error_deg is not None]
        position_errors = [t.position_error_mm for t in trials if t.position_error_mm is not None]
        report = GridReport(
            trials=trials,
            max_yaw_error_deg=max(yaw_errors) if yaw_errors else None,
            max_position_error_mm=max(position_errors) if position_errors else None,
            all_converged=all(t.converged for t in trials),
        )
        logger.info(
            f"Perturbation grid: {sum(t.converged for t in trials)}/{len(trials)} converged, "
            f"max errors {report.max_yaw_error_deg} deg / {report.max_position_error_mm} mm"
        )
        return report

    def trajectory(
        self,
        base: SceneModel,
        pallet_index: int = 0,
        offsets_mm: Sequence[float] = DEFAULT_TRAJECTORY,
        width: int = 3840,
        height: int = 1920,
        yaw_offset_deg: float = 2.5,
        depth_offset_mm: float = 150.0,
    ) -> TrajectoryReport:
        """
        Localize one pallet in every frame of a camera approach.

        Args:
            base: Scene at the first camera position
            pallet_index: Pallet to follow
            offsets_mm: Camera positions along +x
            width: Panorama width
            height: Panorama height
            yaw_offset_deg: Yaw error of each frame's initial pose
            depth_offset_mm: Along-ray error of each frame's initial pose

        Returns:
            Per-frame estimates with failure count, largest yaw error and largest yaw jump
        """
        frames = []
        for offset, scene in zip(offsets_mm, self.renderer.trajectory_scenes(base, offsets_mm)):
            truth = self.renderer.ground_truth(scene, pallet_index)
            eq = self.renderer.render_equirect(scene, width, height)
            trial = self.run_trial(eq, truth.pose, yaw_offset_deg, depth_offset_mm, scene.pallets[pallet_index].spec)
            frames.append(TrajectoryFrame(
                camera_offset_mm=offset,
                true_pose=truth.pose,
                pose=trial.pose,
                yaw_error_deg=trial.yaw_error_deg,
                position_error_mm=trial.position_error_mm,
                error_code=trial.error_code,
            ))

        report = trajectory_summary(frames)
        log = logger.warning if report.failed_frames else logger.info
        log(
            f"Trajectory over {len(frames)} frames ({report.failed_frames} failed): "
            f"max yaw error {report.max_yaw_error_deg} deg, "
            f"max jump {report.max_yaw_jump_deg} deg"
        )
        return report
