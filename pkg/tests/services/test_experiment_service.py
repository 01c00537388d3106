from typing import Optional

import pytest

from app.models.models import PalletPose, TrajectoryFrame
from app.services.experiment_service import (
    DEFAULT_DEPTH_OFFSETS,
    DEFAULT_YAW_OFFSETS,
    ExperimentService,
    pose_errors,
    trajectory_summary,
)
from app.services.render_service import make_warehouse_scene
from tests.conftest import REFERENCE_POSE

# Start of the approach along the aisle
DISTANT_POSE = PalletPose(position=(4700.0, -1521.0, -760.0), yaw_deg=0.0)


@pytest.fixture(scope="module")
def experiments():
    return ExperimentService()


def frame(offset: float, yaw: Optional[float] = None) -> TrajectoryFrame:
    truth = PalletPose(position=(2000.0 - offset, -1500.0, -760.0))
    if yaw is None:
        return TrajectoryFrame(camera_offset_mm=offset, true_pose=truth, error_code="no_pallet_at_depth")
    return TrajectoryFrame(
        camera_offset_mm=offset,
        true_pose=truth,
        pose=PalletPose(position=truth.position, yaw_deg=yaw),
        yaw_error_deg=abs(yaw),
        position_error_mm=0.0,
    )


def test_pose_errors():
    estimate = PalletPose(position=(2030.0, -1525.0, -760.0), yaw_deg=0.4)
    yaw_error, position_error = pose_errors(estimate, REFERENCE_POSE)
    assert yaw_error == pytest.approx(0.4)
    assert position_error == pytest.approx(5.0)


class TestTrajectorySummary:
    def test_all_frames_localized(self):
        report = trajectory_summary([frame(0.0, 0.2), frame(100.0, -0.3), frame(200.0, 0.1)])
        assert report.all_localized
        assert report.failed_frames == 0
        assert report.max_yaw_error_deg == pytest.approx(0.3)
        assert report.max_yaw_jump_deg == pytest.approx(0.5)

    def test_failed_frame_is_reported(self):
        report = trajectory_summary([frame(0.0, 0.2), frame(100.0, 0.4), frame(200.0), frame(300.0, -0.6)])
        assert not report.all_localized
        assert report.failed_frames == 1
        assert report.frames[2].error_code == "no_pallet_at_depth"
        # No jump is taken across the failed frame
        assert report.max_yaw_jump_deg == pytest.approx(0.2)
        assert report.max_yaw_error_deg == pytest.approx(0.6)

    def test_nothing_localized(self):
        report = trajectory_summary([frame(0.0), frame(100.0)])
        assert report.failed_frames == 2
        assert not report.all_localized
        assert report.max_yaw_error_deg is None
        assert report.max_yaw_jump_deg is None


def test_trial_converges(experiments, reference_eq):
    trial = experiments.run_trial(reference_eq, REFERENCE_POSE, 2.5, 150.0)
    assert trial.converged
    assert trial.error_code is None
    assert trial.yaw_error_deg <= 1.0
    assert trial.position_error_mm <= 20.0
    assert "total" in trial.timings_ms


def test_failed_trial_is_recorded(experiments, small_eq):
    trial = experiments.run_trial(small_eq, PalletPose(position=(2000.0, -300.0, 20.0)), 0.0, 0.0)
    assert not trial.converged
    assert trial.error_code == "same_height"
    assert trial.pose is None


def test_offset_through_the_camera_is_recorded(experiments, small_eq):
    trial = experiments.run_trial(small_eq, PalletPose(position=(300.0, 0.0, -200.0)), 0.0, 500.0)
    assert trial.error_code == "invalid_argument"
    assert not trial.converged


def test_small_grid(experiments, reference_eq):
    report = experiments.perturbation_grid(reference_eq, REFERENCE_POSE, yaw_offsets=(0.0, -2.5), depth_offsets=(0.0, 300.0))
    assert len(report.trials) == 4
    assert [(t.yaw_offset_deg, t.depth_offset_mm) for t in report.trials] == [
        (0.0, 0.0), (0.0, 300.0), (-2.5, 0.0), (-2.5, 300.0)
    ]
    assert report.all_converged
    assert report.max_yaw_error_deg == max(t.yaw_error_deg for t in report.trials)


@pytest.mark.slow
def test_convergence_basin(experiments, reference_eq):
    report = experiments.perturbation_grid(reference_eq, REFERENCE_POSE)
    assert len(report.trials) == len(DEFAULT_YAW_OFFSETS) * len(DEFAULT_DEPTH_OFFSETS)
    failed = [(t.yaw_offset_deg, t.depth_offset_mm, t.error_code) for t in report.trials if not t.converged]
    assert report.all_converged, failed
    assert report.max_yaw_error_deg <= 1.0
    assert report.max_position_error_mm <= 20.0

    # 800 mm short lies outside the depth sweep
    outside = experiments.run_trial(reference_eq, REFERENCE_POSE, 0.0, 800.0)
    assert not outside.converged


@pytest.mark.slow
def test_trajectory_with_a_lost_frame(experiments, reference_scene):
    # At 2100 mm the camera has passed the pallet face
    report = experiments.trajectory(reference_scene, 0, offsets_mm=(0.0, 200.0, 2100.0, 400.0), width=4096, height=2048)
    assert len(report.frames) == 4
    assert [f.true_pose.position[0] for f in report.frames] == pytest.approx([2027.0, 1827.0, -73.0, 1627.0])
    assert report.failed_frames == 1
    assert not report.all_localized
    assert report.frames[2].pose is None
    assert report.frames[2].error_code == "no_pallet_evidence"
    first, second = report.frames[0].pose, report.frames[1].pose
    assert report.max_yaw_jump_deg == pytest.approx(abs(second.yaw_deg - first.yaw_deg))
    assert report.max_yaw_error_deg <= 1.0


@pytest.mark.slow
def test_approach_from_distance(experiments):
    report = experiments.trajectory(make_warehouse_scene([DISTANT_POSE]), 0)
    assert len(report.frames) == 34
    assert report.frames[0].true_pose.position[0] == pytest.approx(4700.0)
    assert report.frames[-1].true_pose.position[0] == pytest.approx(1400.0)
    lost = [(f.camera_offset_mm, f.error_code) for f in report.frames if f.pose is None]
    assert report.all_localized, lost
    assert report.max_yaw_error_deg <= 1.0
    assert report.max_yaw_jump_deg <= 1.0
