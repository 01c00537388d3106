import logging
from typing import Optional, Tuple

import numpy as np

from app.core.errors import DegenerateGeometryError, InvalidArgumentError, SameHeightError
from app.models.models import ChannelSelector, PalletPose, PalletSpec, PipelineConfig, PlaneHeight, PlaneSpec
from app.models.raster import EquirectImage, RasterImage
from app.utils.geometry_utils import (
    Z_UP,
    dir_to_pixel,
    face_axis,
    face_normal,
    plane_distance,
    plane_pixel_to_world,
)
from app.utils.image_utils import extract_channel, sample_bilinear, sobel_magnitude
from app.utils.parallel import parallel_map

# Configure logging
logger = logging.getLogger(__name__)

# Rows per parallel work item
ROW_BLOCK = 64


class ProjectionService:
    def __init__(self, config: Optional[PipelineConfig] = None, workers: Optional[int] = None):
        self.config = config or PipelineConfig()
        self.workers = workers
        self.rotation = np.asarray(self.config.camera_rotation, dtype=np.float64)
        self._level = bool(np.allclose(self.rotation, np.eye(3)))

        logger.debug(
            f"Projection service initialized (eps_plane={self.config.eps_plane_mm} mm, "
            f"h_min={self.config.h_min_mm} mm)"
        )

    def make_shelf_plane(
        self,
        origin: Tuple[float, float, float],
        normal: Tuple[float, float, float],
        width_mm: float,
        height_mm: float,
        res: float,
    ) -> PlaneSpec:
        """
        Build the vertical shelf-front plane.

        Args:
            origin: Point on the shelf front mapped to the image center
            normal: Horizontal unit normal pointing out of the shelf toward the aisle
            width_mm: Horizontal extent
            height_mm: Vertical extent
            res: Millimetres per pixel

        Returns:
            Plane with ex = z_up x normal (left-to-right as seen from the camera) and ey = -z
        """
        n = np.asarray(normal, dtype=np.float64)
        if abs(n[2]) > 1e-9 or abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise InvalidArgumentError(f"shelf normal {tuple(normal)} must be horizontal and unit length")
        ex = np.cross(Z_UP, n)
        return PlaneSpec(
            origin=tuple(float(c) for c in origin),
            ex=tuple(float(c) for c in ex),
            ey=(0.0, 0.0, -1.0),
            width_mm=width_mm,
            height_mm=height_mm,
            res=res,
        )

    def plane_height_z(self, pose: PalletPose, spec: PalletSpec, which: PlaneHeight) -> float:
        """Height of the bottom face, top face or hole top edge for a pose."""
        bottom = pose.position[2] - spec.height_mm / 2
        if which is PlaneHeight.BOTTOM:
            return bottom
        if which is PlaneHeight.TOP:
            return pose.position[2] + spec.height_mm / 2
        return bottom + spec.hole_top_above_bottom_mm

    def make_horizontal_plane(
        self,
        pose: PalletPose,
        spec: PalletSpec,
        which: PlaneHeight,
        width_mm: float,
        height_mm: float,
        res: float,
    ) -> PlaneSpec:
        """
        Build the horizontal plane through a front-face boundary.

        The image's center column lies on the front edge at the chosen height;
        columns (ex) run away from the camera, rows (ey) run along the edge.

        Args:
            pose: Current pose estimate
            spec: Pallet geometry
            which: Boundary height to use
            width_mm: Extent across the edge
            height_mm: Extent along the edge
            res: Millimetres per pixel

        Returns:
            Horizontal plane spec
        """
        which = PlaneHeight(which)
        z_p = self.plane_height_z(pose, spec, which)
        if abs(z_p) < self.config.h_min_mm:
            raise SameHeightError(
                f"{which.value} plane at z={z_p:.1f} mm is within {self.config.h_min_mm} mm of the camera; "
                "the horizontal plane image cannot be obtained"
            )
        ex = -face_normal(pose.yaw_deg)
        ey = face_axis(pose.yaw_deg)
        origin = (pose.position[0], pose.position[1], z_p)
        return PlaneSpec(
            origin=tuple(float(c) for c in origin),
            ex=tuple(float(c) for c in ex),
            ey=tuple(float(c) for c in ey),
            width_mm=width_mm,
            height_mm=height_mm,
            res=res,
        )

    def channel_panorama(self, eq: EquirectImage, channel: Optional[ChannelSelector] = None) -> EquirectImage:
        """Gray panorama of the configured channel; gray input passes through."""
        if eq.image.is_gray:
            return eq
        return EquirectImage(image=extract_channel(eq.image, channel or self.config.channel))

    def edge_projection(self, gray: EquirectImage, plane: PlaneSpec) -> Tuple[RasterImage, RasterImage]:
        """Project a gray panorama onto a plane and take its gradient magnitude."""
        projected = self.project_plane(gray, plane)
        return projected, sobel_magnitude(projected)

    def plane_directions(self, plane: PlaneSpec, rows: slice) -> np.ndarray:
        """
        Camera-frame ray directions through a block of plane pixels.

        Planes are given in the level frame (z along gravity). A mounted camera
        sees a level direction d along R @ d, with R = config.camera_rotation.
        """
        u = np.arange(plane.cols, dtype=np.float64)
        v = np.arange(plane.rows, dtype=np.float64)[rows]
        uu, vv = np.meshgrid(u, v)
        world = plane_pixel_to_world(plane, uu, vv)
        if not self._level:
            world = world @ self.rotation.T
        return world

    def project_plane(self, eq: EquirectImage, plane: PlaneSpec) -> RasterImage:
        """
        Resample the panorama onto a metric plane grid.

        Args:
            eq: Source panorama (any channel count)
            plane: Target plane grid

        Returns:
            Image of plane.rows x plane.cols pixels
        """
        distance = plane_distance(plane)
        if distance <= self.config.eps_plane_mm:
            raise DegenerateGeometryError(
                f"camera lies {distance:.1f} mm from the projection plane (limit {self.config.eps_plane_mm} mm)"
            )

        def project_block(start: int) -> np.ndarray:
            dirs = self.plane_directions(plane, slice(start, start + ROW_BLOCK))
            u, v = dir_to_pixel(dirs, eq.width, eq.height)
            return sample_bilinear(eq.image, u, v, wrap=True)

        blocks = parallel_map(project_block, range(0, plane.rows, ROW_BLOCK), self.workers)
        return RasterImage(data=np.concatenate(blocks, axis=0))
