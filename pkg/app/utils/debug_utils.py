import csv
import io
import logging
import math
from pathlib import Path
from typing import Iterable, Optional, Tuple

import cv2
import numpy as np

from app.models.models import BoundaryExtraction, DepthProfile, LineHypothesis
from app.models.raster import EdgeTemplate, RasterImage
from app.utils.image_io import to_uint8, write_bytes_atomic, write_image
from app.utils.image_utils import to_color

# Configure logging
logger = logging.getLogger(__name__)

# Overlay colors, RGB in [0, 1]
CANDIDATE_COLOR = (1.0, 0.1, 0.1)
LINE_COLOR = (0.1, 0.4, 1.0)
CENTER_COLOR = (0.1, 0.9, 0.2)
TEMPLATE_COLOR = (1.0, 0.1, 0.1)


def _canvas(img: RasterImage) -> np.ndarray:
    return to_uint8(RasterImage(data=to_color(img))).copy()


def _rgb255(color: Tuple[float, float, float]) -> Tuple[int, int, int]:
    r, g, b = (int(round(c * 255)) for c in color)
    return (r, g, b)


def _line_endpoints(line: LineHypothesis, height: int) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    rad = math.radians(line.theta)
    ends = []
    for v in (0.0, float(height - 1)):
        u = (line.rho - v * math.sin(rad)) / math.cos(rad)
        ends.append((int(round(u)), int(round(v))))
    return ends[0], ends[1]


def draw_boundary_overlay(img: RasterImage, extraction: BoundaryExtraction) -> RasterImage:
    """Candidates, the selected boundary line and the image's center column."""
    canvas = _canvas(img)
    center = int(round(img.width / 2))
    cv2.line(canvas, (center, 0), (center, img.height - 1), _rgb255(CENTER_COLOR), 1)
    for u, v in extraction.candidates:
        cv2.circle(canvas, (int(round(u)), int(round(v))), 1, _rgb255(CANDIDATE_COLOR), -1)
    start, end = _line_endpoints(extraction.line, img.height)
    cv2.line(canvas, start, end, _rgb255(LINE_COLOR), 1)
    return RasterImage(data=canvas.astype(np.float32) / 255.0)


def draw_template_overlay(
    img: RasterImage, tmpl: EdgeTemplate, offsets: Iterable[Tuple[float, float]]
) -> RasterImage:
    """Template contour points placed at each offset."""
    canvas = _canvas(img)
    color = np.array(_rgb255(TEMPLATE_COLOR), dtype=np.uint8)
    for ou, ov in offsets:
        u = np.rint(tmpl.points[:, 0] + ou).astype(int)
        v = np.rint(tmpl.points[:, 1] + ov).astype(int)
        inside = (u >= 0) & (u < img.width) & (v >= 0) & (v < img.height)
        canvas[v[inside], u[inside]] = color
    return RasterImage(data=canvas.astype(np.float32) / 255.0)


def profile_csv(profile: DepthProfile) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["offset_mm", "score"])
    for offset, score in zip(profile.offsets_mm, profile.scores):
        writer.writerow([f"{offset:.3f}", f"{score:.6f}"])
    return buffer.getvalue().encode("ascii")


class DebugDump:
    """Writes intermediate images and tables under one directory; a no-op without a directory."""

    def __init__(self, directory: Optional[Path]):
        self.directory = Path(directory) if directory else None
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
            logger.info(f"Debug dumps go to {self.directory}")

    @property
    def enabled(self) -> bool:
        return self.directory is not None

    def image(self, name: str, img: RasterImage) -> None:
        if self.directory:
            write_image(self.directory / f"{name}.png", img)

    def profile(self, name: str, profile: DepthProfile) -> None:
        if self.directory:
            write_bytes_atomic(self.directory / f"{name}.csv", profile_csv(profile))
