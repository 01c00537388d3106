import logging
import os

import numpy as np
import pytest

from app.core.errors import (
    InvalidArgumentError,
    LowContrastError,
    NoLineError,
    NoPalletAtDepthError,
    NoPalletEvidenceError,
    SameHeightError,
)
from app.models.models import BoundaryMethod, PalletPose, PipelineConfig, PlaneHeight
from app.models.raster import EquirectImage, RasterImage
from app.services.localization_service import LocalizationService
from app.services.render_service import BEAM_COLOR, make_warehouse_scene
from app.services.experiment_service import pose_errors
from app.utils.debug_utils import DebugDump
from app.utils.geometry_utils import perturb_pose
from tests.conftest import REFERENCE_INIT, REFERENCE_POSE, gray, tilted_step

# Far end of the aisle, seen at 3840 x 1920
DISTANT_POSE = PalletPose(position=(4700.0, -1521.0, -760.0), yaw_deg=0.0)
# Pallet on the shelf level above the camera
ABOVE_POSE = PalletPose(position=(2027.0, -1521.0, 700.0), yaw_deg=0.0)


@pytest.fixture
def localizer(config) -> LocalizationService:
    return LocalizationService(config)


@pytest.fixture(scope="module")
def wide_eq(renderer, reference_scene) -> EquirectImage:
    return renderer.render_equirect(reference_scene, 3840, 1920)


def with_yaw(pose: PalletPose, yaw: float) -> PalletPose:
    return PalletPose(position=pose.position, yaw_deg=yaw)


class TestPlaneSelection:
    def test_below_uses_bottom(self, localizer):
        assert localizer.select_plane_height(REFERENCE_POSE) is PlaneHeight.BOTTOM

    def test_above_uses_top(self, localizer):
        assert localizer.select_plane_height(PalletPose(position=(2000.0, 0.0, 760.0))) is PlaneHeight.TOP
        assert localizer.select_plane_height(PalletPose(position=(2000.0, 0.0, 150.0))) is PlaneHeight.TOP

    def test_hole_preference(self):
        localizer = LocalizationService(PipelineConfig(prefer_hole_boundary=True))
        assert localizer.select_plane_height(REFERENCE_POSE) is PlaneHeight.HOLE_TOP

    def test_low_contrast_switches_to_holes(self, localizer):
        assert localizer.select_plane_height(REFERENCE_POSE, low_contrast=True) is PlaneHeight.HOLE_TOP

    def test_same_height(self, localizer):
        with pytest.raises(SameHeightError):
            localizer.select_plane_height(PalletPose(position=(2000.0, 0.0, 0.0)))

    def test_hole_rows(self, localizer, spec):
        plane = localizer.horizontal_plane(REFERENCE_POSE, spec, PlaneHeight.HOLE_TOP)
        rows, center_row = localizer.boundary_rows(plane, spec, PlaneHeight.HOLE_TOP)
        assert center_row == pytest.approx(35.0)
        assert rows.tolist() == list(range(7, 64)) + list(range(157, 214))


class TestFlankExtraction:
    def test_step_on_the_center_column(self, localizer):
        extraction = localizer.extract_boundary_flank(tilted_step())
        us = np.array([u for u, _ in extraction.candidates])
        assert len(us) == 220
        assert np.all(np.abs(us - 50) <= 0.5)
        assert extraction.threshold == pytest.approx(0.5)
        assert extraction.delta_yaw_deg == pytest.approx(0.0, abs=0.05)

    def test_tilted_step(self, localizer):
        extraction = localizer.extract_boundary_flank(tilted_step(tilt_deg=2.8))
        assert extraction.method is BoundaryMethod.FLANK_THRESHOLD
        assert extraction.delta_yaw_deg == pytest.approx(2.8, abs=0.2)

    def test_pallet_on_the_left(self, localizer):
        mirrored = gray(tilted_step(tilt_deg=2.8).data[:, ::-1])
        extraction = localizer.extract_boundary_flank(mirrored, pallet_side="left")
        assert extraction.delta_yaw_deg == pytest.approx(-2.8, abs=0.2)

    def test_bright_pallet(self, localizer):
        extraction = localizer.extract_boundary_flank(tilted_step(tilt_deg=-1.5, left=0.1, right=0.7))
        assert extraction.delta_yaw_deg == pytest.approx(-1.5, abs=0.2)

    def test_uniform_image_has_no_contrast(self, localizer):
        with pytest.raises(LowContrastError):
            localizer.extract_boundary_flank(gray(np.full((220, 100), 0.4)))

    def test_weak_step_has_no_contrast(self, localizer):
        with pytest.raises(LowContrastError):
            localizer.extract_boundary_flank(tilted_step(left=0.51, right=0.48))

    def test_flanks_must_fit(self, localizer):
        with pytest.raises(InvalidArgumentError):
            localizer.extract_boundary_flank(tilted_step(width=30))

    def test_unknown_side(self, localizer):
        with pytest.raises(InvalidArgumentError):
            localizer.extract_boundary_flank(tilted_step(), pallet_side="up")


class TestEdgeExtraction:
    def test_tilted_step_agrees_with_flank(self, localizer):
        img = tilted_step(tilt_deg=2.8)
        edge = localizer.extract_boundary_edge(img)
        flank = localizer.extract_boundary_flank(img)
        assert edge.method is BoundaryMethod.EDGE_HOUGH
        assert edge.delta_yaw_deg == pytest.approx(2.8, abs=0.2)
        assert abs(edge.delta_yaw_deg - flank.delta_yaw_deg) <= 0.3

    def test_picks_the_strong_line_nearest_the_center(self, localizer):
        data = np.full((220, 100), 0.8)
        data[:, 40:70] = 0.2
        edge = localizer.extract_boundary_edge(gray(data))
        assert edge.line.theta == pytest.approx(0.0, abs=0.05)
        assert edge.line.rho == pytest.approx(39.5, abs=0.5)

    def test_uniform_image_has_no_line(self, localizer):
        with pytest.raises(NoLineError):
            localizer.extract_boundary_edge(gray(np.full((220, 100), 0.4)))


class TestYawEstimation:
    def test_true_yaw_needs_no_correction(self, localizer, reference_eq):
        corrected, extraction, residual = localizer.estimate_yaw(reference_eq, REFERENCE_POSE)
        assert extraction.plane_height is PlaneHeight.BOTTOM
        assert corrected.yaw_deg == pytest.approx(0.0, abs=0.2)
        assert abs(residual) < 0.5

    @pytest.mark.parametrize("yaw", [-5.0, -2.5, 2.5, 5.0])
    def test_wrong_yaw_is_corrected(self, localizer, reference_eq, yaw):
        corrected, _, residual = localizer.estimate_yaw(reference_eq, with_yaw(REFERENCE_POSE, yaw))
        assert abs(corrected.yaw_deg) <= 1.0
        assert abs(residual) < 0.5

    def test_correction_is_idempotent(self, localizer, reference_eq):
        once, _, _ = localizer.estimate_yaw(reference_eq, with_yaw(REFERENCE_POSE, 4.0))
        twice, extraction, _ = localizer.estimate_yaw(reference_eq, once)
        assert abs(extraction.delta_yaw_deg) < 0.5
        assert twice.yaw_deg == pytest.approx(once.yaw_deg, abs=0.5)

    def test_depth_error_does_not_change_the_correction(self, localizer, reference_eq):
        truth = with_yaw(REFERENCE_POSE, 3.0)
        yaws = [
            localizer.estimate_yaw(reference_eq, perturb_pose(truth, 0.0, depth))[0].yaw_deg
            for depth in (-100.0, 0.0, 150.0, 300.0, 500.0)
        ]
        assert max(yaws) - min(yaws) < 0.5

    def test_hole_boundary(self, reference_eq):
        localizer = LocalizationService(PipelineConfig(prefer_hole_boundary=True))
        corrected, extraction, _ = localizer.estimate_yaw(reference_eq, with_yaw(REFERENCE_POSE, 3.0))
        assert extraction.plane_height is PlaneHeight.HOLE_TOP
        assert abs(corrected.yaw_deg) <= 1.0

    def test_edge_method(self, reference_eq):
        localizer = LocalizationService(PipelineConfig(boundary_method=BoundaryMethod.EDGE_HOUGH))
        corrected, extraction, _ = localizer.estimate_yaw(reference_eq, with_yaw(REFERENCE_POSE, -3.0))
        assert extraction.method is BoundaryMethod.EDGE_HOUGH
        assert abs(corrected.yaw_deg) <= 1.0

    def test_low_contrast_falls_back_to_hole_top(self, renderer, localizer, caplog):
        # Face painted like the beam it rests on
        scene = make_warehouse_scene([REFERENCE_POSE], face_color=BEAM_COLOR)
        eq = renderer.render_equirect(scene, 4096, 2048)
        with caplog.at_level(logging.WARNING):
            corrected, extraction, _ = localizer.estimate_yaw(eq, with_yaw(REFERENCE_POSE, 2.5))
        assert extraction.plane_height is PlaneHeight.HOLE_TOP
        assert abs(corrected.yaw_deg) <= 1.0
        assert "hole-top" in caplog.text

    def test_low_contrast_without_fallback(self, renderer):
        scene = make_warehouse_scene([REFERENCE_POSE], face_color=BEAM_COLOR)
        eq = renderer.render_equirect(scene, 2048, 1024)
        localizer = LocalizationService(PipelineConfig(hole_fallback=False))
        with pytest.raises(LowContrastError):
            localizer.estimate_yaw(eq, REFERENCE_POSE)

    @pytest.mark.slow
    def test_correction_holds_along_the_aisle(self, renderer, reference_scene):
        localizer = LocalizationService(PipelineConfig())
        for scene in renderer.trajectory_scenes(reference_scene, [-400.0, 0.0, 400.0, 800.0]):
            truth = renderer.ground_truth(scene, 0).pose
            eq = renderer.render_equirect(scene, 4096, 2048)
            corrected, _, _ = localizer.estimate_yaw(eq, with_yaw(truth, 3.0))
            assert abs(corrected.yaw_deg) <= 0.5


class TestDepthSearch:
    def test_exact_pose_stays_put(self, localizer, reference_eq):
        pose, profile = localizer.search_depth(reference_eq, REFERENCE_POSE)
        assert abs(profile.best_offset_mm) <= localizer.config.fine_step_mm
        assert profile.best_score >= localizer.config.theta_detect
        assert np.linalg.norm(pose.position_array - REFERENCE_POSE.position_array) < 20.0

    def test_recovers_depth_along_the_ray(self, localizer, reference_eq):
        initial = perturb_pose(REFERENCE_POSE, 0.0, 300.0)
        pose, profile = localizer.search_depth(reference_eq, initial)
        assert profile.best_offset_mm == pytest.approx(300.0 * 2027.0 / np.linalg.norm(REFERENCE_POSE.position), abs=15.0)
        assert np.linalg.norm(pose.position_array - REFERENCE_POSE.position_array) < 20.0

    def test_profile_is_sorted_and_contains_the_coarse_grid(self, localizer, reference_eq):
        _, profile = localizer.search_depth(reference_eq, REFERENCE_POSE)
        assert profile.offsets_mm == sorted(profile.offsets_mm)
        assert {-140.0, 0.0, 540.0} <= set(profile.offsets_mm)
        assert profile.best_score == max(profile.scores)

    def test_range_must_contain_zero(self, localizer, small_eq):
        with pytest.raises(InvalidArgumentError):
            localizer.search_depth(small_eq, REFERENCE_POSE, range_mm=(50.0, 400.0))

    def test_no_pallet_at_any_depth(self, localizer, renderer, reference_scene):
        empty = renderer.render_equirect(reference_scene.model_copy(update={"pallets": []}), 2048, 1024)
        with pytest.raises(NoPalletAtDepthError):
            localizer.search_depth(empty, REFERENCE_POSE)

    def test_sweep_resolution_follows_the_source_footprint(self, localizer, spec, reference_eq, small_eq):
        # 0.4 of a 5.3 mm footprint on the reference face
        assert localizer.sweep_resolution(reference_eq, REFERENCE_POSE, spec) == pytest.approx(2.12)
        wide = EquirectImage(image=RasterImage(data=np.zeros((1920, 3840), dtype=np.float32)))
        assert localizer.sweep_resolution(wide, DISTANT_POSE, spec) == pytest.approx(3.48)
        # Close faces keep the configured floor, far ones stop at a tenth of the face height
        near = PalletPose(position=(1000.0, 0.0, -700.0))
        assert localizer.sweep_resolution(reference_eq, near, spec) == localizer.config.depth_res_mm
        far = PalletPose(position=(20000.0, 0.0, -700.0))
        assert localizer.sweep_resolution(small_eq, far, spec) == pytest.approx(spec.height_mm / 10)

    @pytest.mark.slow
    def test_distant_pallet_is_found(self, localizer, renderer):
        eq = renderer.render_equirect(make_warehouse_scene([DISTANT_POSE]), 3840, 1920)
        result = localizer.localize_pallet(eq, perturb_pose(DISTANT_POSE, 2.5, 150.0))
        yaw_error, position_error = pose_errors(result.pose, DISTANT_POSE)
        assert result.profile.best_score >= localizer.config.theta_detect
        assert yaw_error <= 1.0
        assert position_error <= 50.0


class TestLocalizePallet:
    def test_from_a_shelf_plane_estimate(self, localizer, reference_eq):
        result = localizer.localize_pallet(reference_eq, REFERENCE_INIT)
        yaw_error, position_error = pose_errors(result.pose, REFERENCE_POSE)
        assert yaw_error <= 1.0
        assert position_error <= 20.0
        assert set(result.timings_ms) == {"channel", "yaw", "position", "total"}
        assert result.boundary.plane_height is PlaneHeight.BOTTOM

    def test_worker_count_does_not_change_the_result(self, config, reference_eq):
        one = LocalizationService(config, workers=1).localize_pallet(reference_eq, REFERENCE_INIT)
        many = LocalizationService(config, workers=4).localize_pallet(reference_eq, REFERENCE_INIT)
        assert one.pose == many.pose
        assert one.profile == many.profile

    def test_face_turned_away(self, localizer, small_eq):
        with pytest.raises(NoPalletEvidenceError):
            localizer.localize_pallet(small_eq, PalletPose(position=(-2000.0, 0.0, -760.0), yaw_deg=0.0))

    def test_same_height_names_the_stage(self, localizer, small_eq):
        with pytest.raises(SameHeightError) as info:
            localizer.localize_pallet(small_eq, PalletPose(position=(2000.0, -300.0, 10.0), yaw_deg=0.0))
        assert info.value.stage == "yaw"
        assert info.value.exit_code == 2

    def test_debug_dump(self, config, reference_eq, tmp_path):
        LocalizationService(config, debug=DebugDump(tmp_path)).localize_pallet(reference_eq, REFERENCE_INIT)
        names = {p.name for p in tmp_path.iterdir()}
        assert {
            "yaw_bottom_projection.png",
            "yaw_bottom_boundary.png",
            "verify_bottom_projection.png",
            "position_projection.png",
            "position_edges.png",
            "position_template.png",
            "depth_profile.csv",
        } <= names
        assert (tmp_path / "depth_profile.csv").read_text().startswith("offset_mm,score\n")

    @pytest.mark.slow
    def test_perturbation_grid_converges(self, localizer, reference_eq):
        for yaw in (-5.0, -2.5, 0.0, 2.5, 5.0):
            for depth in (-100.0, 0.0, 150.0, 300.0, 500.0):
                initial = perturb_pose(REFERENCE_POSE, yaw, depth)
                result = localizer.localize_pallet(reference_eq, initial)
                yaw_error, position_error = pose_errors(result.pose, REFERENCE_POSE)
                assert yaw_error <= 1.0, (yaw, depth)
                assert position_error <= 20.0, (yaw, depth)

    @pytest.mark.slow
    def test_runtime_on_one_thread(self, config, wide_eq):
        service = LocalizationService(config, workers=1)
        runs = [service.localize_pallet(wide_eq, REFERENCE_INIT).timings_ms for _ in range(2)]
        assert min(r["yaw"] for r in runs) <= 500.0
        assert min(r["position"] for r in runs) <= 3000.0

    @pytest.mark.slow
    @pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="needs at least 4 CPUs")
    def test_threads_speed_up_the_depth_sweep(self, config, wide_eq):
        def position_ms(workers: int) -> float:
            service = LocalizationService(config, workers=workers)
            return min(service.localize_pallet(wide_eq, REFERENCE_INIT).timings_ms["position"] for _ in range(2))

        assert position_ms(4) < position_ms(1)


class TestAboveCamera:
    @pytest.fixture(scope="class")
    def above_eq(self, renderer):
        return renderer.render_equirect(make_warehouse_scene([ABOVE_POSE]), 4096, 2048)

    def test_yaw_from_the_top_plane(self, localizer, above_eq):
        corrected, extraction, residual = localizer.estimate_yaw(above_eq, with_yaw(ABOVE_POSE, 3.0))
        assert extraction.plane_height is PlaneHeight.TOP
        assert abs(corrected.yaw_deg) <= 1.0
        assert abs(residual) < 0.5

    def test_localize_from_the_top_plane(self, localizer, above_eq):
        result = localizer.localize_pallet(above_eq, perturb_pose(ABOVE_POSE, 2.5, 150.0))
        yaw_error, position_error = pose_errors(result.pose, ABOVE_POSE)
        assert result.boundary.plane_height is PlaneHeight.TOP
        assert yaw_error <= 1.0
        assert position_error <= 20.0

    def test_localize_from_the_hole_tops(self, above_eq):
        localizer = LocalizationService(PipelineConfig(prefer_hole_boundary=True))
        result = localizer.localize_pallet(above_eq, perturb_pose(ABOVE_POSE, -2.5, 150.0))
        yaw_error, position_error = pose_errors(result.pose, ABOVE_POSE)
        assert result.boundary.plane_height is PlaneHeight.HOLE_TOP
        assert yaw_error <= 1.0
        assert position_error <= 20.0
