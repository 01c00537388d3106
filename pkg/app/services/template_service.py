import logging
from typing import List, Optional, Tuple

import cv2
import numpy as np

from app.core.errors import InvalidArgumentError
from app.models.models import PalletSpec, PipelineConfig
from app.models.raster import EdgeTemplate, RasterImage
from app.utils.image_utils import sample_bilinear
from app.utils.parallel import parallel_map

# Configure logging
logger = logging.getLogger(__name__)

# Offsets scored per vectorized batch
OFFSET_BATCH = 256
# Grid maxima refined per search
MAX_REFINED = 64

Offset = Tuple[float, float]


def _segment(x0: float, y0: float, x1: float, y1: float, spacing: float) -> np.ndarray:
    """
    Points on a segment at ~spacing, endpoints included.

    Coordinates are built as mid + half * (2k - n) / n so that a segment and its
    mirror image produce exactly negated coordinates.
    """
    length = float(np.hypot(x1 - x0, y1 - y0))
    n = max(1, int(round(length / spacing)))
    k = np.arange(n + 1)
    t = (2 * k - n) / n
    mx, my = (x0 + x1) / 2, (y0 + y1) / 2
    hx, hy = (x1 - x0) / 2, (y1 - y0) / 2
    return np.stack([mx + hx * t, my + hy * t], axis=1)


def _rectangle(cx: float, cy: float, half_w: float, half_h: float, spacing: float) -> np.ndarray:
    left, right = cx - half_w, cx + half_w
    top, bottom = cy - half_h, cy + half_h
    return np.concatenate([
        _segment(left, top, right, top, spacing),
        _segment(left, bottom, right, bottom, spacing),
        _segment(left, top, left, bottom, spacing),
        _segment(right, top, right, bottom, spacing),
    ])


def _unique_points(points: np.ndarray) -> np.ndarray:
    # Corners appear on two sides
    keys = np.round(points, 9)
    _, index = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(index)]


def build_edge_template(spec: PalletSpec, res: float, spacing_px: float = 1.0) -> EdgeTemplate:
    """
    Sample the full-scale front-face contour at ``res`` mm per pixel.

    The outer rectangle and both hole rectangles are sampled at ~spacing_px;
    outer-rectangle points closer than the corner radius to an outer corner are
    dropped because rounded corners never produce a sharp edge there. Image
    rows grow downward, so the face bottom sits at +half height.

    Args:
        spec: Pallet geometry
        res: Millimetres per pixel
        spacing_px: Contour sampling step in pixels

    Returns:
        Edge template relative to the face center
    """
    min_dim = min(spec.width_mm, spec.height_mm)
    if res <= 0 or res > min_dim / 10:
        raise InvalidArgumentError(f"template resolution {res} mm/px must lie in (0, {min_dim / 10}]")
    if spacing_px <= 0:
        raise InvalidArgumentError("template spacing must be positive")

    half_w = spec.width_mm / 2 / res
    half_h = spec.height_mm / 2 / res
    outer = _rectangle(0.0, 0.0, half_w, half_h, spacing_px)

    radius = spec.corner_radius_mm / res
    if radius > 0:
        corners = np.array([[sx * half_w, sy * half_h] for sx in (-1, 1) for sy in (-1, 1)])
        dist = np.linalg.norm(outer[:, None, :] - corners[None, :, :], axis=2).min(axis=1)
        outer = outer[dist >= radius]

    hole_half_w = spec.hole_width_mm / 2 / res
    hole_half_h = spec.hole_height_mm / 2 / res
    hole_cy = half_h - (spec.hole_bottom_mm + spec.hole_height_mm / 2) / res
    holes = [
        _rectangle(center / res, hole_cy, hole_half_w, hole_half_h, spacing_px)
        for center in spec.hole_centers_mm
    ]

    points = _unique_points(np.concatenate([outer, *holes]))
    return EdgeTemplate(res=res, points=points, half_size_px=(half_w, half_h))


def match_scores(
    edges: RasterImage, tmpl: EdgeTemplate, offsets: np.ndarray, tau_edge: float = 0.2
) -> np.ndarray:
    """
    Vectorized match_score for many offsets, shape (n_offsets,).

    Each template point contributes min(1, edge / tau_edge) with the edge value
    sampled bilinearly; points falling outside the image contribute 0.
    """
    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 2)
    scores = np.empty(len(offsets), dtype=np.float64)
    for start in range(0, len(offsets), OFFSET_BATCH):
        batch = offsets[start:start + OFFSET_BATCH]
        u = tmpl.points[None, :, 0] + batch[:, 0:1]
        v = tmpl.points[None, :, 1] + batch[:, 1:2]
        inside = (u >= 0) & (u <= edges.width - 1) & (v >= 0) & (v <= edges.height - 1)
        support = np.minimum(1.0, sample_bilinear(edges, u, v) / tau_edge)
        scores[start:start + len(batch)] = np.where(inside, support, 0.0).sum(axis=1) / tmpl.count
    return scores


def match_score(edges: RasterImage, tmpl: EdgeTemplate, offset: Offset, tau_edge: float = 0.2) -> float:
    """
    Edge-support average of a template placed with its center at ``offset``.

    Args:
        edges: Gradient-magnitude image
        tmpl: Edge template
        offset: (u, v) pixel position of the face center
        tau_edge: Edge strength at which a point counts as fully supported

    Returns:
        Score in [0, 1]
    """
    return float(match_scores(edges, tmpl, np.array([offset]), tau_edge)[0])


Bounds = Tuple[float, float, float, float]


def _within(offsets: np.ndarray, bounds: Optional[Bounds]) -> np.ndarray:
    if bounds is None:
        return offsets
    u_lo, u_hi, v_lo, v_hi = bounds
    keep = (offsets[:, 0] >= u_lo) & (offsets[:, 0] <= u_hi) & (offsets[:, 1] >= v_lo) & (offsets[:, 1] <= v_hi)
    return offsets[keep]


def best_local_offset(
    edges: RasterImage,
    tmpl: EdgeTemplate,
    center: Offset,
    radius_px: int,
    tau_edge: float,
    stride: int = 2,
    bounds: Optional[Bounds] = None,
) -> Tuple[Offset, float]:
    """
    Best integer offset within +-radius_px of ``center``: a strided scan, then stride-1 refinement.

    Offsets outside ``bounds`` (u_min, u_max, v_min, v_max) are never scored;
    ``center`` itself must lie inside them. Ties resolve to the middle of the tied set.
    """
    cu, cv_ = center
    steps = np.arange(-radius_px, radius_px + 1, max(1, stride))
    if radius_px > 0 and steps[-1] != radius_px:
        steps = np.append(steps, radius_px)
    grid = _within(np.array([(cu + du, cv_ + dv) for dv in steps for du in steps], dtype=np.float64), bounds)
    best_offset, best_score = central_best(grid, match_scores(edges, tmpl, grid, tau_edge))
    if stride > 1:
        local = _within(np.array([
            (best_offset[0] + du, best_offset[1] + dv)
            for dv in range(-stride + 1, stride)
            for du in range(-stride + 1, stride)
            if abs(best_offset[0] + du - cu) <= radius_px and abs(best_offset[1] + dv - cv_) <= radius_px
        ], dtype=np.float64), bounds)
        best_offset, best_score = central_best(local, match_scores(edges, tmpl, local, tau_edge))
    return (float(best_offset[0]), float(best_offset[1])), best_score


def central_best(offsets: np.ndarray, scores: np.ndarray, tol: float = 1e-12) -> Tuple[Offset, float]:
    """Highest-scoring offset; among tied maxima, the one nearest their centroid."""
    top = float(scores.max())
    tied = offsets[scores >= top - tol]
    centroid = tied.mean(axis=0)
    i = int(np.argmin(np.linalg.norm(tied - centroid, axis=1)))
    return (float(tied[i][0]), float(tied[i][1])), top


class TemplateService:
    def __init__(self, config: Optional[PipelineConfig] = None, workers: Optional[int] = None):
        self.config = config or PipelineConfig()
        self.workers = workers
        self._templates = {}

        logger.debug(
            f"Template service initialized (tau_edge={self.config.tau_edge}, "
            f"theta_detect={self.config.theta_detect})"
        )

    def template(self, spec: PalletSpec, res: float) -> EdgeTemplate:
        """Edge template for a spec and resolution, built once per service."""
        key = (spec, res)
        if key not in self._templates:
            self._templates[key] = build_edge_template(spec, res)
        return self._templates[key]

    def score(self, edges: RasterImage, tmpl: EdgeTemplate, offset: Offset) -> float:
        return match_score(edges, tmpl, offset, self.config.tau_edge)

    def _refine(
        self, edges: RasterImage, tmpl: EdgeTemplate, start: Offset, stride: int, bounds: Bounds
    ) -> Tuple[Offset, float]:
        """Stride-1 hill climb inside the grid cell around a coarse maximum."""
        tau = self.config.tau_edge
        offset, score = best_local_offset(edges, tmpl, start, stride, tau, stride=1, bounds=bounds)
        for _ in range(10):
            moved, moved_score = best_local_offset(edges, tmpl, offset, 1, tau, stride=1, bounds=bounds)
            if moved_score <= score:
                break
            offset, score = moved, moved_score
        return offset, score

    def template_search(
        self,
        edges: RasterImage,
        tmpl: EdgeTemplate,
        stride: Optional[int] = None,
        threshold: Optional[float] = None,
    ) -> List[Tuple[Offset, float]]:
        """
        Find every template placement scoring above the detection threshold.

        Args:
            edges: Gradient-magnitude image
            tmpl: Edge template
            stride: Coarse scan stride in pixels
            threshold: Minimum score of a reported maximum

        Returns:
            Non-overlapping (offset, score) maxima sorted by score descending
        """
        stride = stride or self.config.detect_stride_px
        threshold = self.config.theta_detect if threshold is None else threshold
        half_w, half_h = tmpl.half_size_px
        margin_u, margin_v = int(np.ceil(half_w)), int(np.ceil(half_h))
        if edges.width <= 2 * margin_u or edges.height <= 2 * margin_v:
            raise InvalidArgumentError(
                f"image {edges.width}x{edges.height} is smaller than the template "
                f"({2 * margin_u}x{2 * margin_v} px)"
            )

        us = np.arange(margin_u, edges.width - margin_u, stride)
        vs = np.arange(margin_v, edges.height - margin_v, stride)
        grid = np.array([(u, v) for v in vs for u in us], dtype=np.float64)
        chunks = np.array_split(grid, max(1, len(grid) // OFFSET_BATCH))
        coarse = np.concatenate(parallel_map(
            lambda chunk: match_scores(edges, tmpl, chunk, self.config.tau_edge), chunks, self.workers
        )).reshape(len(vs), len(us))

        # Grid local maxima worth refining; the coarse grid can sit a few pixels off a peak
        dilated = cv2.dilate(coarse.astype(np.float32), np.ones((3, 3), np.uint8))
        peaks = np.argwhere((coarse.astype(np.float32) >= dilated) & (coarse >= 0.5 * threshold))
        peaks = sorted(peaks.tolist(), key=lambda rc: -coarse[rc[0], rc[1]])[:MAX_REFINED]

        # Refined maxima keep the whole template inside the image
        bounds = (margin_u, edges.width - 1 - margin_u, margin_v, edges.height - 1 - margin_v)
        refined = parallel_map(
            lambda rc: self._refine(edges, tmpl, (float(us[rc[1]]), float(vs[rc[0]])), stride, bounds),
            peaks,
            self.workers,
        )
        maxima = sorted(
            ((offset, score) for offset, score in refined if score >= threshold),
            key=lambda item: (-item[1], item[0][1], item[0][0]),
        )

        kept: List[Tuple[Offset, float]] = []
        for offset, score in maxima:
            if all(not boxes_overlap(offset, other, (half_w, half_h)) for other, _ in kept):
                kept.append((offset, score))
        logger.info(f"Template search: {len(peaks)} coarse peaks, {len(kept)} maxima above {threshold}")
        return kept


def boxes_overlap(a: Offset, b: Offset, half_size: Tuple[float, float]) -> bool:
    """Whether two template bounding boxes of the same size intersect."""
    return abs(a[0] - b[0]) < 2 * half_size[0] and abs(a[1] - b[1]) < 2 * half_size[1]
