import logging
import math
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import (
    BoundaryError,
    DegenerateGeometryError,
    InvalidArgumentError,
    LowContrastError,
    NoLineError,
    NoPalletAtDepthError,
    NoPalletEvidenceError,
    PalletProjError,
    SameHeightError,
)
from app.models.models import (
    BoundaryExtraction,
    BoundaryMethod,
    DepthProfile,
    LineHypothesis,
    LocalizationResult,
    PalletPose,
    PalletSpec,
    PipelineConfig,
    PlaneHeight,
    PlaneSpec,
)
from app.models.raster import EquirectImage, RasterImage
from app.services.projection_service import ProjectionService
from app.services.template_service import TemplateService, best_local_offset
from app.utils.debug_utils import DebugDump, draw_boundary_overlay, draw_template_overlay
from app.utils.geometry_utils import face_axis, face_is_visible, face_normal, plane_pixel_to_world, ray_anchor
from app.utils.hough_utils import hough_lines, refine_line
from app.utils.image_utils import sobel_magnitude
from app.utils.parallel import parallel_map

# Configure logging
logger = logging.getLogger(__name__)

# The boundary tilts by -delta when the true yaw exceeds the estimate by delta
YAW_SIGN = -1.0
# Hole rows stay this many pixels clear of the hole sides
HOLE_ROW_INSET_PX = 2
# Offsets are compared after rounding to this many decimals
OFFSET_DECIMALS = 6
# Swept-plane resolutions are rounded so templates can be reused
RES_DECIMALS = 2
# Floor on the cosine between a viewing ray and the face normal
MIN_INCIDENCE = 0.2


def _line_center_distance(line: LineHypothesis, center: Tuple[float, float]) -> float:
    rad = math.radians(line.theta)
    return abs(line.rho - (center[0] * math.cos(rad) + center[1] * math.sin(rad)))


def _plateau_center(offsets: Sequence[float], scores: Sequence[float], tol: float = 1e-12) -> float:
    """Median offset among those tied for the best score."""
    top = max(scores)
    tied = sorted(o for o, s in zip(offsets, scores) if s >= top - tol)
    return tied[(len(tied) - 1) // 2]


def _run_centroids(row: np.ndarray, mask: np.ndarray) -> List[float]:
    """Magnitude-weighted centroid of every run of edge pixels in one row."""
    padded = np.concatenate([[False], mask, [False]])
    change = np.flatnonzero(padded[1:] != padded[:-1])
    centroids = []
    for start, stop in zip(change[::2], change[1::2]):
        weights = row[start:stop]
        cols = np.arange(start, stop)
        centroids.append(float((cols * weights).sum() / weights.sum()))
    return centroids


class LocalizationService:
    def __init__(
        self,
        config: Optional[PipelineConfig] = None,
        workers: Optional[int] = None,
        debug: Optional[DebugDump] = None,
    ):
        self.config = config or PipelineConfig()
        self.workers = workers
        self.projection = ProjectionService(self.config, workers)
        # Depth offsets fan out; each projection inside runs inline
        self.sweep_projection = ProjectionService(self.config, workers=1)
        self.templates = TemplateService(self.config, workers)
        self.debug = debug or DebugDump(None)

        logger.info(
            f"Localization service initialized (boundary={self.config.boundary_method.value}, "
            f"channel={self.config.channel.value}, depth range={self.config.depth_range_mm} mm)"
        )

    # Yaw from the horizontal plane

    def select_plane_height(
        self, pose: PalletPose, spec: Optional[PalletSpec] = None, low_contrast: bool = False
    ) -> PlaneHeight:
        """
        Choose the horizontal plane used to measure yaw.

        Args:
            pose: Current pose estimate
            spec: Pallet geometry, defaults to the configured one
            low_contrast: The face boundary was found to lack contrast

        Returns:
            bottom for pallets below the camera, top for pallets above it, or
            hole_top when holes are preferred or the face boundary is unusable
        """
        spec = spec or self.config.pallet
        h_min = self.config.h_min_mm
        z_bottom = self.projection.plane_height_z(pose, spec, PlaneHeight.BOTTOM)
        z_top = self.projection.plane_height_z(pose, spec, PlaneHeight.TOP)
        z_hole = self.projection.plane_height_z(pose, spec, PlaneHeight.HOLE_TOP)

        if (self.config.prefer_hole_boundary or low_contrast) and abs(z_hole) >= h_min:
            return PlaneHeight.HOLE_TOP
        if z_bottom <= -h_min:
            return PlaneHeight.BOTTOM
        if z_top >= h_min:
            return PlaneHeight.TOP
        if abs(z_hole) >= h_min:
            return PlaneHeight.HOLE_TOP
        raise SameHeightError(
            f"pallet at z={pose.position[2]:.0f} mm spans the camera height "
            f"(bottom {z_bottom:.0f}, top {z_top:.0f}, h_min {h_min} mm)"
        )

    def horizontal_plane(self, pose: PalletPose, spec: PalletSpec, which: PlaneHeight) -> PlaneSpec:
        return self.projection.make_horizontal_plane(
            pose,
            spec,
            which,
            width_mm=self.config.horizontal_depth_mm,
            height_mm=spec.width_mm * self.config.horizontal_span_ratio,
            res=self.config.horizontal_res_mm,
        )

    def boundary_rows(self, plane: PlaneSpec, spec: PalletSpec, which: PlaneHeight) -> Tuple[np.ndarray, float]:
        """
        Rows of a horizontal projection that cross the boundary, and the row the flanks center on.

        Every row of a bottom or top plane crosses the face edge; on the hole-top
        plane only rows inside a hole do, and the flanks sit on the first hole.
        """
        rows = np.arange(plane.rows)
        if which is not PlaneHeight.HOLE_TOP:
            return rows, (plane.rows - 1) / 2
        lateral = (rows - plane.rows / 2) * plane.res
        half = spec.hole_width_mm / 2 - HOLE_ROW_INSET_PX * plane.res
        inside = np.zeros(plane.rows, dtype=bool)
        for center in spec.hole_centers_mm:
            inside |= np.abs(lateral - center) <= half
        return rows[inside], plane.rows / 2 + spec.hole_centers_mm[0] / plane.res

    def _select_line(self, points: np.ndarray, center: Tuple[float, float]) -> LineHypothesis:
        hough = self.config.hough
        lines = hough_lines(
            points,
            theta_window=hough.theta_window_deg,
            theta_step=hough.theta_step_deg,
            rho_step=hough.rho_step_px,
            center=center,
            max_lines=self.config.max_lines,
        )
        # Strong lines only; among them the one nearest the center line
        floor = self.config.line_vote_ratio * lines[0].votes
        eligible = [line for line in lines if line.votes >= floor]
        chosen = min(eligible, key=lambda line: _line_center_distance(line, center))
        refined = refine_line(points, chosen, inlier_px=self.config.line_inlier_px)
        if abs(refined.theta) > hough.theta_window_deg:
            return chosen
        return refined

    def extract_boundary_flank(
        self,
        img: RasterImage,
        flank_width_px: Optional[int] = None,
        flank_height_px: Optional[int] = None,
        rows: Optional[Sequence[int]] = None,
        flank_center_row: Optional[float] = None,
        pallet_side: str = "right",
    ) -> BoundaryExtraction:
        """
        Threshold-scan boundary extraction around the center column.

        Two flank regions sandwich the center column; the midpoint of their
        mean intensities is the threshold. Each row is scanned from the pallet
        side toward the background side and the first pallet-to-background
        crossing, interpolated to sub-pixel precision, is a candidate.

        Args:
            img: Gray horizontal-plane projection
            flank_width_px: Width of each flank region
            flank_height_px: Height of the flank regions
            rows: Rows to scan, defaults to all
            flank_center_row: Row the flank regions center on, defaults to the middle of ``rows``
            pallet_side: "right" when the pallet lies toward +u, "left" otherwise

        Returns:
            Boundary extraction with the refined line
        """
        if not img.is_gray:
            raise InvalidArgumentError("boundary extraction needs a gray image")
        if pallet_side not in ("right", "left"):
            raise InvalidArgumentError(f"pallet_side must be 'right' or 'left', got {pallet_side!r}")
        fw = flank_width_px or self.config.flank_width_px
        fh = flank_height_px or self.config.flank_height_px
        c = int(round(img.width / 2))
        if c - fw < 0 or c + fw > img.width:
            raise InvalidArgumentError(f"image width {img.width} cannot hold two {fw}-px flanks")

        rows = np.arange(img.height) if rows is None else np.asarray(rows, dtype=int)
        if len(rows) == 0:
            raise NoLineError("no rows to scan")
        if flank_center_row is None:
            flank_center_row = (rows.min() + rows.max()) / 2
        flank_rows = rows[np.abs(rows - flank_center_row) <= fh / 2]
        if len(flank_rows) == 0:
            flank_rows = rows

        data = img.data.astype(np.float64)
        left_mean = float(data[flank_rows, c - fw:c].mean())
        right_mean = float(data[flank_rows, c:c + fw].mean())
        if abs(left_mean - right_mean) < self.config.contrast_min:
            raise LowContrastError(
                f"flank means {left_mean:.3f} and {right_mean:.3f} differ by less than {self.config.contrast_min}"
            )
        threshold = (left_mean + right_mean) / 2
        pallet_mean = right_mean if pallet_side == "right" else left_mean
        sign = 1.0 if pallet_mean > threshold else -1.0

        # Canonical orientation: pallet toward the end of the window
        window = data[rows, c - fw:c + fw]
        if pallet_side == "left":
            window = window[:, ::-1]
        on_pallet = (window - threshold) * sign > 0
        crossing = ~on_pallet[:, :-1] & on_pallet[:, 1:]
        has_crossing = crossing.any(axis=1)
        # Last crossing in window order is the first one met scanning from the pallet side
        last = crossing.shape[1] - 1 - np.argmax(crossing[:, ::-1], axis=1)

        candidates = []
        for i in np.flatnonzero(has_crossing):
            j = last[i]
            a, b = window[i, j], window[i, j + 1]
            pos = j + (threshold - a) / (b - a)
            if pallet_side == "left":
                pos = 2 * fw - 1 - pos
            candidates.append((float(c - fw + pos), float(rows[i])))
        if len(candidates) < 2:
            raise NoLineError(f"only {len(candidates)} boundary candidates found")

        points = np.asarray(candidates)
        line = self._select_line(points, (float(c), float(flank_center_row)))
        return BoundaryExtraction(
            method=BoundaryMethod.FLANK_THRESHOLD,
            candidates=candidates,
            line=line,
            delta_yaw_deg=line.theta,
            threshold=threshold,
        )

    def extract_boundary_edge(self, img: RasterImage, rows: Optional[Sequence[int]] = None) -> BoundaryExtraction:
        """
        Edge-and-Hough boundary extraction.

        Args:
            img: Gray horizontal-plane projection, at least 3x3
            rows: Rows to take candidates from, defaults to all

        Returns:
            Boundary extraction whose line is the strong line nearest the center column
        """
        edges = sobel_magnitude(img).data.astype(np.float64)
        mask = edges >= self.config.tau_edge
        rows = np.arange(img.height) if rows is None else np.asarray(rows, dtype=int)

        candidates = [
            (u, float(r))
            for r in rows
            for u in _run_centroids(edges[r], mask[r])
        ]
        if len(candidates) < 2:
            raise NoLineError(f"only {len(candidates)} edge candidates above {self.config.tau_edge}")

        points = np.asarray(candidates)
        center = (float(round(img.width / 2)), float((rows.min() + rows.max()) / 2))
        line = self._select_line(points, center)
        return BoundaryExtraction(
            method=BoundaryMethod.EDGE_HOUGH,
            candidates=candidates,
            line=line,
            delta_yaw_deg=line.theta,
        )

    def measure_boundary(
        self, eq: EquirectImage, pose: PalletPose, spec: PalletSpec, which: PlaneHeight, tag: str = "yaw"
    ) -> BoundaryExtraction:
        """Project the horizontal plane for a pose and extract its boundary with the configured method."""
        gray = self.projection.channel_panorama(eq)
        plane = self.horizontal_plane(pose, spec, which)
        img = self.projection.project_plane(gray, plane)
        rows, center_row = self.boundary_rows(plane, spec, which)

        if self.config.boundary_method is BoundaryMethod.EDGE_HOUGH:
            extraction = self.extract_boundary_edge(img, rows=rows)
        else:
            extraction = self.extract_boundary_flank(img, rows=rows, flank_center_row=center_row)
        extraction = extraction.model_copy(update={"plane_height": which})

        self.debug.image(f"{tag}_{which.value}_projection", img)
        if self.debug.enabled:
            self.debug.image(f"{tag}_{which.value}_boundary", draw_boundary_overlay(img, extraction))
        return extraction

    def estimate_yaw(
        self, eq: EquirectImage, pose: PalletPose, spec: Optional[PalletSpec] = None
    ) -> Tuple[PalletPose, BoundaryExtraction, Optional[float]]:
        """
        Correct the yaw of a pose from the boundary tilt on a horizontal plane.

        Args:
            eq: Source panorama
            pose: Initial pose
            spec: Pallet geometry, defaults to the configured one

        Returns:
            (pose with corrected yaw, boundary extraction, residual tilt after
            correction or None when verification is off or failed)
        """
        spec = spec or self.config.pallet
        gray = self.projection.channel_panorama(eq)
        which = self.select_plane_height(pose, spec)
        try:
            extraction = self.measure_boundary(gray, pose, spec, which)
        except LowContrastError as e:
            if not self.config.hole_fallback or which is PlaneHeight.HOLE_TOP:
                raise
            fallback = self.select_plane_height(pose, spec, low_contrast=True)
            if fallback is not PlaneHeight.HOLE_TOP:
                raise
            logger.warning(f"Falling back to the hole-top boundary: {str(e)}")
            extraction = self.measure_boundary(gray, pose, spec, fallback)

        yaw = pose.yaw_deg + YAW_SIGN * extraction.delta_yaw_deg
        if not -90.0 < yaw < 90.0:
            raise DegenerateGeometryError(f"corrected yaw {yaw:.2f} deg leaves (-90, 90)")
        corrected = PalletPose(position=pose.position, yaw_deg=yaw)
        logger.info(
            f"Yaw {pose.yaw_deg:.2f} -> {yaw:.2f} deg from the {extraction.plane_height.value} boundary "
            f"(tilt {extraction.delta_yaw_deg:+.2f} deg, {len(extraction.candidates)} candidates)"
        )

        residual = None
        if self.config.verify_yaw:
            try:
                check = self.measure_boundary(gray, corrected, spec, extraction.plane_height, tag="verify")
                residual = check.delta_yaw_deg
                if abs(residual) > self.config.residual_tol_deg:
                    logger.warning(
                        f"Residual tilt {residual:+.2f} deg after correction exceeds "
                        f"{self.config.residual_tol_deg} deg"
                    )
            except BoundaryError as e:
                logger.warning(f"Could not verify the yaw correction: {str(e)}")
        return corrected, extraction, residual

    # Position from the depth sweep

    def sweep_resolution(self, eq: EquirectImage, pose: PalletPose, spec: PalletSpec) -> float:
        """
        Millimetres per pixel of the swept planes for a pose.

        One source pixel covers distance * 2pi / width millimetres across the
        viewing ray, stretched by the obliquity of the face. Resampling much
        finer than that spreads each face edge over several plane pixels and
        its gradient falls below tau_edge.
        """
        position = pose.position_array
        distance = float(np.linalg.norm(position))
        incidence = max(MIN_INCIDENCE, abs(float(position @ face_normal(pose.yaw_deg))) / distance)
        footprint = distance * 2 * math.pi / eq.width / incidence
        res = max(self.config.depth_res_mm, self.config.depth_footprint_ratio * footprint)
        return round(min(res, min(spec.width_mm, spec.height_mm) / 10), RES_DECIMALS)

    def _sweep_plane(self, pose: PalletPose, spec: PalletSpec, offset_mm: float, res: float) -> PlaneSpec:
        normal = face_normal(pose.yaw_deg)
        anchor = ray_anchor(pose.position_array, normal, offset_mm)
        margin = self.config.depth_margin_mm
        return PlaneSpec(
            origin=tuple(float(c) for c in anchor),
            ex=tuple(float(c) for c in face_axis(pose.yaw_deg)),
            ey=(0.0, 0.0, -1.0),
            width_mm=spec.width_mm + 2 * margin,
            height_mm=spec.height_mm + 2 * margin,
            res=res,
        )

    def _score_depth(
        self, gray: EquirectImage, pose: PalletPose, spec: PalletSpec, offset_mm: float, res: float
    ) -> Tuple[float, Tuple[float, float]]:
        plane = self._sweep_plane(pose, spec, offset_mm, res)
        _, edges = self.sweep_projection.edge_projection(gray, plane)
        tmpl = self.templates.template(spec, plane.res)
        offset, score = best_local_offset(
            edges, tmpl, plane.center_px, self.config.search_px, self.config.tau_edge, stride=2
        )
        return score, offset

    def search_depth(
        self,
        eq: EquirectImage,
        pose: PalletPose,
        spec: Optional[PalletSpec] = None,
        range_mm: Optional[Tuple[float, float]] = None,
        coarse_step: Optional[float] = None,
        fine_step: Optional[float] = None,
    ) -> Tuple[PalletPose, DepthProfile]:
        """
        Sweep the yaw-corrected vertical plane along the face normal and keep the best template fit.

        Each swept plane is anchored where the viewing ray through the pose
        meets it; positive offsets move away from the camera.

        Args:
            eq: Source panorama
            pose: Pose with corrected yaw
            spec: Pallet geometry, defaults to the configured one
            range_mm: (lo, hi) offsets, must contain 0
            coarse_step: Coarse sweep step in mm
            fine_step: Fine sweep step in mm around the coarse maximum

        Returns:
            (pose moved to the best plane with the in-plane offset folded in, depth profile)
        """
        spec = spec or self.config.pallet
        lo, hi = range_mm or self.config.depth_range_mm
        coarse_step = coarse_step or self.config.coarse_step_mm
        fine_step = fine_step or self.config.fine_step_mm
        if not lo <= 0.0 <= hi:
            raise InvalidArgumentError(f"depth range ({lo}, {hi}) must contain 0")
        if coarse_step <= 0 or fine_step <= 0:
            raise InvalidArgumentError("depth steps must be positive")

        gray = self.projection.channel_panorama(eq)
        res = self.sweep_resolution(eq, pose, spec)
        scored: Dict[float, Tuple[float, Tuple[float, float]]] = {}

        def sweep(offsets: List[float]) -> None:
            fresh = [o for o in offsets if round(o, OFFSET_DECIMALS) not in scored]
            results = parallel_map(lambda o: self._score_depth(gray, pose, spec, o, res), fresh, self.workers)
            for o, result in zip(fresh, results):
                scored[round(o, OFFSET_DECIMALS)] = result

        coarse = [k * coarse_step for k in range(math.ceil(lo / coarse_step), math.floor(hi / coarse_step) + 1)]
        sweep(coarse)
        best_coarse = _plateau_center(coarse, [scored[round(o, OFFSET_DECIMALS)][0] for o in coarse])
        reach = int(math.floor(coarse_step / fine_step + 1e-9))
        fine = [best_coarse + j * fine_step for j in range(-reach, reach + 1)]
        sweep([o for o in fine if lo <= o <= hi])

        offsets = sorted(scored)
        scores = [scored[o][0] for o in offsets]
        best = _plateau_center(offsets, scores)
        best_score, best_offset_px = scored[round(best, OFFSET_DECIMALS)]
        if best_score < self.config.theta_detect:
            raise NoPalletAtDepthError(
                f"best template score {best_score:.3f} over {len(offsets)} depths is below {self.config.theta_detect}"
            )

        plane = self._sweep_plane(pose, spec, best, res)
        position = plane_pixel_to_world(plane, best_offset_px[0], best_offset_px[1])
        cu, cv_ = plane.center_px
        profile = DepthProfile(
            offsets_mm=offsets,
            scores=scores,
            best_offset_mm=best,
            best_score=best_score,
            best_in_plane_px=(int(round(best_offset_px[0] - cu)), int(round(best_offset_px[1] - cv_))),
        )
        if self.debug.enabled:
            projected, edges = self.projection.edge_projection(gray, plane)
            tmpl = self.templates.template(spec, plane.res)
            self.debug.image("position_projection", projected)
            self.debug.image("position_edges", edges)
            self.debug.image("position_template", draw_template_overlay(projected, tmpl, [best_offset_px]))
            self.debug.profile("depth_profile", profile)

        logger.info(
            f"Depth sweep: best offset {best:+.1f} mm (score {best_score:.3f}), "
            f"in-plane shift {profile.best_in_plane_px} px at {res} mm/px over {len(offsets)} depths"
        )
        return PalletPose(position=tuple(float(c) for c in position), yaw_deg=pose.yaw_deg), profile

    # Full pipeline

    def localize_pallet(
        self, eq: EquirectImage, initial: PalletPose, spec: Optional[PalletSpec] = None
    ) -> LocalizationResult:
        """
        Refine an initial pose: yaw from the horizontal plane, then position from the depth sweep.

        Args:
            eq: Source panorama
            initial: Initial pose, typically from shelf-plane detection
            spec: Pallet geometry, defaults to the configured one

        Returns:
            Final pose with the boundary extraction, depth profile and per-stage timings
        """
        spec = spec or self.config.pallet
        if not face_is_visible(initial):
            raise NoPalletEvidenceError(
                f"front face of the pose at {initial.position} (yaw {initial.yaw_deg} deg) does not face the camera"
            )

        start = time.perf_counter()
        gray = self.projection.channel_panorama(eq)
        timings = {"channel": (time.perf_counter() - start) * 1000}

        stage_start = time.perf_counter()
        try:
            corrected, extraction, residual = self.estimate_yaw(gray, initial, spec)
        except PalletProjError as e:
            logger.error(f"Error estimating yaw: {str(e)}")
            raise e.with_stage("yaw")
        timings["yaw"] = (time.perf_counter() - stage_start) * 1000

        stage_start = time.perf_counter()
        try:
            pose, profile = self.search_depth(gray, corrected, spec)
        except PalletProjError as e:
            logger.error(f"Error searching depth: {str(e)}")
            raise e.with_stage("position")
        timings["position"] = (time.perf_counter() - stage_start) * 1000
        timings["total"] = (time.perf_counter() - start) * 1000

        logger.info(
            f"Localized pallet at ({pose.position[0]:.0f}, {pose.position[1]:.0f}, {pose.position[2]:.0f}) mm, "
            f"yaw {pose.yaw_deg:.2f} deg in {timings['total']:.0f} ms"
        )
        return LocalizationResult(
            pose=pose,
            boundary=extraction,
            residual_yaw_deg=residual,
            profile=profile,
            timings_ms=timings,
        )
