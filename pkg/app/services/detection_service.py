import logging
import math
from typing import List, Optional

import numpy as np

from app.core.errors import InvalidArgumentError, PalletProjError
from app.models.models import Detection, PalletPose, PalletSpec, PipelineConfig, PlaneSpec
from app.models.raster import EquirectImage
from app.services.projection_service import ProjectionService
from app.services.template_service import TemplateService
from app.utils.debug_utils import DebugDump, draw_template_overlay
from app.utils.geometry_utils import plane_pixel_to_world, plane_yaw_deg, world_to_plane_pixel

# Configure logging
logger = logging.getLogger(__name__)

# Pixels kept around the template when a detection is re-scored
RESCORE_MARGIN_PX = 4


class DetectionService:
    def __init__(
        self,
        config: Optional[PipelineConfig] = None,
        workers: Optional[int] = None,
        debug: Optional[DebugDump] = None,
    ):
        self.config = config or PipelineConfig()
        self.projection = ProjectionService(self.config, workers)
        self.templates = TemplateService(self.config, workers)
        self.debug = debug or DebugDump(None)

        logger.info(
            f"Detection service initialized (channel={self.config.channel.value}, "
            f"stride={self.config.detect_stride_px} px, theta_detect={self.config.theta_detect})"
        )

    @staticmethod
    def _check_shelf(shelf: PlaneSpec) -> None:
        if not np.allclose(shelf.ey, (0.0, 0.0, -1.0), atol=1e-9):
            raise InvalidArgumentError("shelf plane must be vertical with image rows pointing down (ey = -z)")

    def detect_pallets(
        self, eq: EquirectImage, shelf: PlaneSpec, spec: Optional[PalletSpec] = None
    ) -> List[Detection]:
        """
        Detect full-scale pallet fronts on the shelf-front plane.

        Args:
            eq: Source panorama
            shelf: Vertical shelf-front plane
            spec: Pallet geometry, defaults to the configured one

        Returns:
            Detections sorted by score, best first
        """
        spec = spec or self.config.pallet
        self._check_shelf(shelf)
        try:
            gray = self.projection.channel_panorama(eq)
            projected, edges = self.projection.edge_projection(gray, shelf)
            tmpl = self.templates.template(spec, shelf.res)
            maxima = self.templates.template_search(edges, tmpl)
        except PalletProjError as e:
            logger.error(f"Error detecting pallets: {str(e)}")
            raise

        yaw = plane_yaw_deg(shelf)
        detections = []
        for offset, score in maxima:
            position = plane_pixel_to_world(shelf, offset[0], offset[1])
            detections.append(Detection(
                pose=PalletPose(position=tuple(float(c) for c in position), yaw_deg=yaw),
                score=score,
                plane=shelf,
                offset_px=offset,
            ))

        self.debug.image("shelf_projection", projected)
        self.debug.image("shelf_edges", edges)
        if self.debug.enabled:
            self.debug.image("shelf_detections", draw_template_overlay(projected, tmpl, [d.offset_px for d in detections]))
        logger.info(f"Detected {len(detections)} pallet(s) on the shelf plane")
        return detections

    def detection_to_initial_pose(self, detection: Detection) -> PalletPose:
        """
        Initial pose handed to localization.

        The pose lies on the shelf plane along the viewing ray of the detected
        face center, so its depth is only as good as the shelf plane's fit to
        the pallet front; localization corrects yaw and depth.
        """
        return detection.pose

    def rescore_detection(
        self, eq: EquirectImage, detection: Detection, spec: Optional[PalletSpec] = None
    ) -> float:
        """
        Re-project a plane centered on a detection and score the template there.

        The local plane keeps the detection plane's axes and resolution and an
        even pixel size, so its grid is an integer shift of the original one.

        Args:
            eq: Source panorama
            detection: Detection to verify
            spec: Pallet geometry, defaults to the configured one

        Returns:
            Match score at the detected pose
        """
        spec = spec or self.config.pallet
        plane = detection.plane
        tmpl = self.templates.template(spec, plane.res)
        half_w, half_h = tmpl.half_size_px
        cols = 2 * (math.ceil(half_w) + RESCORE_MARGIN_PX)
        rows = 2 * (math.ceil(half_h) + RESCORE_MARGIN_PX)

        # Snap to the detection plane's pixel grid
        u, v = world_to_plane_pixel(plane, detection.pose.position_array)
        origin = plane_pixel_to_world(plane, round(u), round(v))
        local = PlaneSpec(
            origin=tuple(float(c) for c in origin),
            ex=plane.ex,
            ey=plane.ey,
            width_mm=cols * plane.res,
            height_mm=rows * plane.res,
            res=plane.res,
        )
        gray = self.projection.channel_panorama(eq)
        _, edges = self.projection.edge_projection(gray, local)
        return self.templates.score(edges, tmpl, local.center_px)
