from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

# Values this far outside [0, 1] are rounding noise and get clipped; anything
# beyond is rejected.
RANGE_SLACK = 1e-6


class RasterImage(BaseModel):
    """
    Row-major image with intensities normalized to [0, 1].

    ``data`` has shape (height, width) for gray images and (height, width, 3)
    for color images and is stored as float32.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def _normalize(cls, value) -> np.ndarray:
        arr = np.asarray(value, dtype=np.float32)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ValueError(f"unsupported image shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image samples must be finite")
        if arr.min() < -RANGE_SLACK or arr.max() > 1 + RANGE_SLACK:
            raise ValueError("image samples must lie in [0, 1]")
        arr = np.ascontiguousarray(np.clip(arr, 0.0, 1.0))
        arr.setflags(write=False)
        return arr

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    @property
    def is_gray(self) -> bool:
        return self.channels == 1


class EquirectImage(BaseModel):
    """Full-sphere panorama: longitude spans columns, latitude spans rows."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    image: RasterImage

    @model_validator(mode="after")
    def _check_aspect(self) -> "EquirectImage":
        if self.image.width != 2 * self.image.height:
            raise ValueError(
                f"equirectangular image must be 2:1, got {self.image.width}x{self.image.height}"
            )
        return self

    @property
    def width(self) -> int:
        return self.image.width

    @property
    def height(self) -> int:
        return self.image.height


class EdgeTemplate(BaseModel):
    """Expected contour pixels of a full-scale pallet front, relative to the face center."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    res: float
    points: np.ndarray
    half_size_px: Tuple[float, float]

    @field_validator("points", mode="before")
    @classmethod
    def _points(cls, value) -> np.ndarray:
        pts = np.asarray(value, dtype=np.float64).reshape(-1, 2)
        if len(pts) == 0:
            raise ValueError("edge template has no points")
        pts.setflags(write=False)
        return pts

    @property
    def count(self) -> int:
        return int(self.points.shape[0])
