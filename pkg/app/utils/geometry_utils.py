"""
Camera-frame geometry.

All coordinates are in the camera frame: x forward along the aisle, y left,
z up, origin at the optical center, millimetres. A pallet pose with yaw psi
has its front-face normal at (-cos psi, -sin psi, 0), so yaw 0 faces a camera
looking down +x, and its in-face horizontal axis at z_up x normal, which reads
left-to-right as seen from the camera.
"""

import math
from typing import Tuple

import numpy as np

from app.core.errors import DegenerateGeometryError, InvalidArgumentError
from app.models.models import PalletPose, PlaneSpec

Z_UP = np.array([0.0, 0.0, 1.0])


def dir_to_pixel(d: np.ndarray, width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Map ray directions to equirectangular pixel coordinates.

    Longitude lambda = atan2(d_y, d_x) runs over [-pi, pi) left to right and
    latitude phi = asin(d_z) runs top (+pi/2) to bottom.

    Args:
        d: Direction(s), shape (..., 3); normalized here
        width: Equirectangular width in pixels
        height: Equirectangular height in pixels

    Returns:
        (u, v) sub-pixel coordinates
    """
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise InvalidArgumentError("ray direction must be a nonzero finite vector")
    d = d / norm[..., None]
    lam = np.arctan2(d[..., 1], d[..., 0])
    phi = np.arcsin(np.clip(d[..., 2], -1.0, 1.0))
    u = np.mod((lam + math.pi) / (2 * math.pi) * width, width)
    v = (math.pi / 2 - phi) / math.pi * height
    return u, v


def pixel_to_dir(u, v, width: int, height: int) -> np.ndarray:
    """Unit ray direction(s) of equirectangular pixel coordinate(s), shape (..., 3)."""
    lam = np.asarray(u, dtype=np.float64) / width * 2 * math.pi - math.pi
    phi = math.pi / 2 - np.asarray(v, dtype=np.float64) / height * math.pi
    cos_phi = np.cos(phi)
    return np.stack([cos_phi * np.cos(lam), cos_phi * np.sin(lam), np.sin(phi)], axis=-1)


def plane_pixel_to_world(plane: PlaneSpec, u, v) -> np.ndarray:
    """origin + (u - cols/2)*res*ex + (v - rows/2)*res*ey, shape (..., 3)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    du = (u - plane.cols / 2) * plane.res
    dv = (v - plane.rows / 2) * plane.res
    return (
        np.asarray(plane.origin)
        + du[..., None] * np.asarray(plane.ex)
        + dv[..., None] * np.asarray(plane.ey)
    )


def world_to_plane_pixel(plane: PlaneSpec, x: np.ndarray) -> Tuple[float, float]:
    """Inverse of plane_pixel_to_world for a point on the plane."""
    rel = np.asarray(x, dtype=np.float64) - np.asarray(plane.origin)
    u = rel @ np.asarray(plane.ex) / plane.res + plane.cols / 2
    v = rel @ np.asarray(plane.ey) / plane.res + plane.rows / 2
    return float(u), float(v)


def plane_distance(plane: PlaneSpec) -> float:
    """Distance from the camera center to the plane."""
    return abs(float(np.asarray(plane.origin) @ plane.normal))


def face_normal(yaw_deg: float) -> np.ndarray:
    """Outward front-face normal (toward the aisle / camera side)."""
    psi = math.radians(yaw_deg)
    return np.array([-math.cos(psi), -math.sin(psi), 0.0])


def face_axis(yaw_deg: float) -> np.ndarray:
    """Horizontal in-face axis, z_up x normal."""
    psi = math.radians(yaw_deg)
    return np.array([math.sin(psi), -math.cos(psi), 0.0])


def normal_to_yaw(normal: np.ndarray) -> float:
    """Yaw of a horizontal outward normal."""
    yaw = math.degrees(math.atan2(-normal[1], -normal[0]))
    if not -90.0 < yaw < 90.0:
        raise DegenerateGeometryError(f"face normal {tuple(normal)} faces away from the camera axis")
    return yaw


def plane_yaw_deg(plane: PlaneSpec) -> float:
    """Yaw of a vertical plane built with ex = z_up x normal."""
    ex = np.asarray(plane.ex)
    return normal_to_yaw(np.array([ex[1], -ex[0], 0.0]))


def ray_anchor(position: np.ndarray, normal: np.ndarray, offset_mm: float) -> np.ndarray:
    """
    Where the viewing ray through ``position`` pierces the face plane moved
    ``offset_mm`` along -normal (away from the camera).
    """
    position = np.asarray(position, dtype=np.float64)
    dist = np.linalg.norm(position)
    if dist == 0:
        raise DegenerateGeometryError("pose coincides with the camera center")
    ray = position / dist
    away = -np.asarray(normal, dtype=np.float64)
    denom = float(ray @ away)
    if denom <= 1e-6:
        raise DegenerateGeometryError("viewing ray is parallel to the face plane")
    t = (offset_mm + float(position @ away)) / denom
    return t * ray


def face_is_visible(pose: PalletPose) -> bool:
    """True when the front face looks toward the camera."""
    return float(pose.position_array @ face_normal(pose.yaw_deg)) < 0.0


def perturb_pose(pose: PalletPose, yaw_offset_deg: float, depth_offset_mm: float) -> PalletPose:
    """
    Shift a pose along its viewing ray (positive = toward the camera) and add a yaw error.

    This reproduces the error a shelf-plane detection makes: the face center is
    recovered on the correct ray at the wrong distance.
    """
    position = pose.position_array
    dist = np.linalg.norm(position)
    if dist <= depth_offset_mm:
        raise InvalidArgumentError("depth offset moves the pose through the camera")
    moved = position * (1.0 - depth_offset_mm / dist)
    return PalletPose(position=tuple(float(c) for c in moved), yaw_deg=pose.yaw_deg + yaw_offset_deg)
