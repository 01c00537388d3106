import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from app.core.errors import InvalidArgumentError
from app.models.models import (
    AxisBox,
    Color,
    Floor,
    GroundTruth,
    HeightClass,
    PalletPlacement,
    PalletPose,
    PalletSpec,
    SceneModel,
)
from app.models.raster import EquirectImage, RasterImage
from app.utils.geometry_utils import face_axis, face_normal, pixel_to_dir
from app.utils.parallel import parallel_map

# Configure logging
logger = logging.getLogger(__name__)

# Rows per parallel work item
ROW_BLOCK = 32
MIN_HEIGHT = 256
# Painted stripes win depth ties against the surface they lie on
STRIPE_DEPTH_SLACK = 1e-6
BEAM_COLOR: Color = (0.9, 0.45, 0.1)
UPRIGHT_COLOR: Color = (0.25, 0.35, 0.6)


def _dot(vectors: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-wise dot product computed elementwise, so a ray's result never depends on its batch."""
    return vectors[:, 0] * v[0] + vectors[:, 1] * v[1] + vectors[:, 2] * v[2]


def _slab_hits(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """
    Ray/box entry distance and entry axis for rays from ``origin``.

    Returns:
        (t_near, axis, entered_low) with t_near = inf for misses; ``entered_low``
        tells whether the ray entered through the face at ``lo`` on that axis
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    # Rays parallel to a slab either always or never lie inside it
    parallel = dirs == 0
    inside = (origin >= lo) & (origin <= hi)
    t1 = np.where(parallel, np.where(inside, -np.inf, np.inf), t1)
    t2 = np.where(parallel, np.where(inside, np.inf, -np.inf), t2)

    t_min = np.minimum(t1, t2)
    t_max = np.maximum(t1, t2)
    axis = np.argmax(t_min, axis=-1)
    t_near = np.take_along_axis(t_min, axis[..., None], axis=-1)[..., 0]
    t_far = t_max.min(axis=-1)
    hit = (t_near <= t_far) & (t_near > 0)
    entered_low = np.take_along_axis(t1 <= t2, axis[..., None], axis=-1)[..., 0]
    return np.where(hit, t_near, np.inf), axis, entered_low


class RenderService:
    def __init__(self, workers: Optional[int] = None):
        self.workers = workers

        logger.info("Render service initialized")

    def _shade_block(self, scene: SceneModel, dirs: np.ndarray) -> np.ndarray:
        n = dirs.shape[0]
        depth = np.full(n, np.inf)
        color = np.tile(np.asarray(scene.background_color, dtype=np.float64), (n, 1))

        def paint(t: np.ndarray, rgb) -> None:
            # rgb is one color or one color per ray
            closer = t < depth
            depth[closer] = t[closer]
            rgb = np.asarray(rgb, dtype=np.float64)
            color[closer] = rgb[closer] if rgb.ndim == 2 else rgb

        if scene.floor is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(dirs[:, 2] < 0, scene.floor.z_mm / dirs[:, 2], np.inf)
            paint(np.where(t > 0, t, np.inf), scene.floor.color)

        origin = np.zeros(3)
        for box in scene.boxes:
            t, _, _ = _slab_hits(origin, dirs, np.asarray(box.min_mm), np.asarray(box.max_mm))
            paint(t, box.color)

        for pallet in scene.pallets:
            self._shade_pallet(pallet, dirs, paint)

        for stripe in scene.stripes:
            center = np.asarray(stripe.center_mm)
            u_axis, v_axis = np.asarray(stripe.axis_u), np.asarray(stripe.axis_v)
            normal = np.cross(u_axis, v_axis)
            denom = _dot(dirs, normal)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(np.abs(denom) > 1e-12, (center @ normal) / denom, np.inf)
            t = np.where(t > 0, t, np.inf)
            rel = dirs * np.where(np.isfinite(t), t, 0.0)[:, None] - center
            inside = (np.abs(_dot(rel, u_axis)) <= stripe.half_length_mm) & (np.abs(_dot(rel, v_axis)) <= stripe.half_width_mm)
            t = np.where(inside & np.isfinite(t), t * (1.0 - STRIPE_DEPTH_SLACK), np.inf)
            paint(t, stripe.color)
        return color

    @staticmethod
    def _shade_pallet(pallet: PalletPlacement, dirs: np.ndarray, paint) -> None:
        """Box in the pallet frame: s along the face axis, h up, e behind the front face."""
        spec, pose = pallet.spec, pallet.pose
        position = pose.position_array
        axis = face_axis(pose.yaw_deg)
        back = -face_normal(pose.yaw_deg)
        basis = np.stack([axis, np.array([0.0, 0.0, 1.0]), back], axis=1)

        local_dirs = np.stack([_dot(dirs, basis[:, k]) for k in range(3)], axis=1)
        local_origin = -position @ basis
        lo = np.array([-spec.width_mm / 2, -spec.height_mm / 2, 0.0])
        hi = np.array([spec.width_mm / 2, spec.height_mm / 2, pallet.depth_mm])
        t, hit_axis, entered_low = _slab_hits(local_origin, local_dirs, lo, hi)

        front = (hit_axis == 2) & entered_low & np.isfinite(t)
        point = local_origin + local_dirs * np.where(np.isfinite(t), t, 0.0)[:, None]
        s, h = point[:, 0], point[:, 1]
        hole_lo = -spec.height_mm / 2 + spec.hole_bottom_mm
        in_hole = np.zeros(len(t), dtype=bool)
        for center in spec.hole_centers_mm:
            in_hole |= (np.abs(s - center) <= spec.hole_width_mm / 2) & (h >= hole_lo) & (h <= hole_lo + spec.hole_height_mm)

        rgb = np.where(front[:, None], np.asarray(pallet.face_color), np.asarray(pallet.side_color))
        rgb = np.where((front & in_hole)[:, None], np.asarray(pallet.hole_color), rgb)
        paint(t, rgb)

    def render_equirect(self, scene: SceneModel, width: int, height: int) -> EquirectImage:
        """
        Ray-cast a scene from the camera origin into a panorama.

        Args:
            scene: Scene in the camera frame
            width: Panorama width, twice the height
            height: Panorama height, at least 256

        Returns:
            Flat-shaded color panorama
        """
        if width != 2 * height:
            raise InvalidArgumentError(f"panorama must be 2:1, got {width}x{height}")
        if height < MIN_HEIGHT:
            raise InvalidArgumentError(f"panorama height {height} is below {MIN_HEIGHT}")

        cols = np.arange(width, dtype=np.float64)

        def render_rows(start: int) -> np.ndarray:
            rows = np.arange(start, min(start + ROW_BLOCK, height), dtype=np.float64)
            uu, vv = np.meshgrid(cols, rows)
            dirs = pixel_to_dir(uu, vv, width, height).reshape(-1, 3)
            return self._shade_block(scene, dirs).reshape(len(rows), width, 3)

        data = np.concatenate(parallel_map(render_rows, range(0, height, ROW_BLOCK), self.workers), axis=0)
        if scene.noise_amplitude > 0:
            rng = np.random.default_rng(scene.noise_seed)
            data = data + rng.uniform(-scene.noise_amplitude, scene.noise_amplitude, size=data.shape)
        data = np.clip(data, 0.0, 1.0)

        logger.info(
            f"Rendered {width}x{height} panorama ({len(scene.pallets)} pallets, "
            f"{len(scene.boxes)} boxes, {len(scene.stripes)} stripes)"
        )
        return EquirectImage(image=RasterImage(data=data))

    def ground_truth(self, scene: SceneModel, pallet_index: int) -> GroundTruth:
        """Exact pose of one scene pallet and whether it sits below or above the camera."""
        if not 0 <= pallet_index < len(scene.pallets):
            raise InvalidArgumentError(f"pallet index {pallet_index} out of range for {len(scene.pallets)} pallets")
        pose = scene.pallets[pallet_index].pose
        height_class = HeightClass.BELOW if pose.position[2] < 0 else HeightClass.ABOVE
        return GroundTruth(index=pallet_index, pose=pose, height_class=height_class)

    def trajectory_scenes(self, base: SceneModel, offsets_mm: Sequence[float]) -> List[SceneModel]:
        """
        The base scene seen from a camera moved forward by each offset.

        The camera stays at the origin, so the world shifts by -offset along x.
        """
        if not all(math.isfinite(o) for o in offsets_mm):
            raise InvalidArgumentError("trajectory offsets must be finite")
        return [self._shift_x(base, -float(o)) for o in offsets_mm]

    @staticmethod
    def _shift_x(scene: SceneModel, dx: float) -> SceneModel:
        if dx == 0:
            return scene

        def moved(p):
            return (p[0] + dx, p[1], p[2])

        return scene.model_copy(update={
            "boxes": [b.model_copy(update={"min_mm": moved(b.min_mm), "max_mm": moved(b.max_mm)}) for b in scene.boxes],
            "pallets": [
                p.model_copy(update={"pose": PalletPose(position=moved(p.pose.position), yaw_deg=p.pose.yaw_deg)})
                for p in scene.pallets
            ],
            "stripes": [s.model_copy(update={"center_mm": moved(s.center_mm)}) for s in scene.stripes],
        })


def make_warehouse_scene(
    poses: Sequence[PalletPose],
    spec: Optional[PalletSpec] = None,
    floor_z_mm: float = -1500.0,
    beam_height_mm: float = 80.0,
    beam_setback_mm: float = 30.0,
    uprights: bool = True,
    noise_amplitude: float = 0.0,
    noise_seed: int = 0,
    **pallet_colors,
) -> SceneModel:
    """
    Shelf bay scene: each pallet rests on a beam set back behind its front face,
    flanked by two uprights, above a floor.

    Args:
        poses: Pallet front-face poses in the camera frame
        spec: Pallet geometry shared by every pallet
        floor_z_mm: Floor height
        beam_height_mm: Height of the beam under each pallet
        beam_setback_mm: Distance of the beam front behind the pallet front
        uprights: Add an upright on both sides of each pallet
        noise_amplitude: Uniform noise amplitude of the render
        noise_seed: Noise seed
        **pallet_colors: face_color / hole_color / side_color overrides

    Returns:
        Scene model
    """
    spec = spec or PalletSpec()
    boxes: List[AxisBox] = []
    pallets: List[PalletPlacement] = []
    for i, pose in enumerate(poses):
        x, y, z = pose.position
        bottom = z - spec.height_mm / 2
        reach = spec.width_mm / 2 + 300.0
        boxes.append(AxisBox(
            name=f"beam_{i}",
            min_mm=(x + beam_setback_mm, y - reach, bottom - beam_height_mm),
            max_mm=(x + beam_setback_mm + spec.width_mm, y + reach, bottom),
            color=BEAM_COLOR,
        ))
        if uprights:
            for side in (-1, 1):
                post_y = y + side * (reach + 50.0)
                boxes.append(AxisBox(
                    name=f"upright_{i}_{'left' if side > 0 else 'right'}",
                    min_mm=(x + beam_setback_mm, post_y - 50.0, floor_z_mm),
                    max_mm=(x + beam_setback_mm + 100.0, post_y + 50.0, bottom + 1200.0),
                    color=UPRIGHT_COLOR,
                ))
        pallets.append(PalletPlacement(spec=spec, pose=pose, **pallet_colors))
    return SceneModel(
        floor=Floor(z_mm=floor_z_mm),
        boxes=boxes,
        pallets=pallets,
        noise_amplitude=noise_amplitude,
        noise_seed=noise_seed,
    )


render_service = RenderService()
