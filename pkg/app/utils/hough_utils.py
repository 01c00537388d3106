import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import InvalidArgumentError, NoLineError
from app.models.models import LineHypothesis

# Configure logging
logger = logging.getLogger(__name__)


def theta_grid(theta_window: float, theta_step: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Accumulator angles, symmetric about zero.

    Returns:
        (signed step indices, angles in degrees); angle k is exactly ``k * theta_step``
    """
    half = int(math.floor(theta_window / theta_step + 1e-9))
    steps = np.arange(-half, half + 1)
    return steps, steps * theta_step


def rho_bins(points: np.ndarray, thetas_deg: np.ndarray, rho_step: float) -> np.ndarray:
    """Quantized rho of every point for every angle, shape (n_points, n_thetas)."""
    rad = np.deg2rad(thetas_deg)
    rho = points[:, 0:1] * np.cos(rad)[None, :] + points[:, 1:2] * np.sin(rad)[None, :]
    return np.floor(rho / rho_step + 0.5).astype(np.int64)


def hough_lines(
    points: Sequence[Tuple[float, float]],
    theta_window: float = 15.0,
    theta_step: float = 0.1,
    rho_step: float = 1.0,
    center: Optional[Tuple[float, float]] = None,
    max_lines: int = 16,
) -> List[LineHypothesis]:
    """
    Hough accumulator restricted to near-vertical lines.

    theta is the tilt of the line from the image's vertical axis (equivalently
    the angle of its normal from +u), so rho = u*cos(theta) + v*sin(theta).
    Cells are ranked by votes, then by smaller |theta|, then by the smaller
    distance between the line and ``center``.

    Args:
        points: (u, v) pixel coordinates
        theta_window: Half-width of the angular search window in degrees
        theta_step: Angular bin size in degrees
        rho_step: Rho bin size in pixels
        center: Reference point for the center-line tie-break; defaults to the
            middle of the points' bounding box
        max_lines: Number of ranked cells to return

    Returns:
        Ranked list of line hypotheses
    """
    if theta_step <= 0 or rho_step <= 0 or theta_window < 0:
        raise InvalidArgumentError("hough steps must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        raise NoLineError(f"need at least 2 points for a line, got {len(pts)}")

    # Without a reference point, rank by distance to the bounding-box middle
    if center is None:
        center = tuple((pts.min(axis=0) + pts.max(axis=0)) / 2)
    steps, thetas = theta_grid(theta_window, theta_step)
    bins = rho_bins(pts, thetas, rho_step)

    # Votes merge associatively, so one bincount over all (point, angle) pairs suffices
    b_min = int(bins.min())
    n_rho = int(bins.max()) - b_min + 1
    theta_idx = np.broadcast_to(np.arange(len(thetas))[None, :], bins.shape)
    flat = (theta_idx * n_rho + (bins - b_min)).ravel()
    acc = np.bincount(flat, minlength=len(thetas) * n_rho)

    cells = np.flatnonzero(acc)
    votes = acc[cells]
    t_i = cells // n_rho
    r_b = cells % n_rho + b_min

    rad = np.deg2rad(thetas[t_i])
    rho = r_b * rho_step
    center_rho = center[0] * np.cos(rad) + center[1] * np.sin(rad)
    center_dist = np.abs(rho - center_rho)

    # np.lexsort sorts by the last key first
    order = np.lexsort((r_b, steps[t_i], center_dist, np.abs(steps[t_i]), -votes))
    order = order[:max_lines]
    return [
        LineHypothesis(rho=float(rho[i]), theta=float(thetas[t_i[i]]), votes=int(votes[i]))
        for i in order
    ]


def point_line_distance(points: np.ndarray, line: LineHypothesis) -> np.ndarray:
    rad = math.radians(line.theta)
    return np.abs(points[:, 0] * math.cos(rad) + points[:, 1] * math.sin(rad) - line.rho)


def refine_line(
    points: Sequence[Tuple[float, float]],
    line: LineHypothesis,
    inlier_px: float = 2.0,
    iterations: int = 2,
) -> LineHypothesis:
    """
    Total least-squares fit over the inliers of a Hough line.

    The Hough cell pins down which line; the fit recovers the sub-bin angle and
    offset. The normal keeps a positive u component so theta stays the tilt
    from vertical.

    Args:
        points: Candidate points
        line: Hough hypothesis to refine
        inlier_px: Distance below which a point supports the line
        iterations: Inlier re-selection rounds

    Returns:
        Refined hypothesis whose votes count the final inliers
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    refined = line
    for _ in range(iterations):
        inliers = pts[point_line_distance(pts, refined) <= inlier_px]
        if len(inliers) < 2:
            break
        mean = inliers.mean(axis=0)
        _, _, vt = np.linalg.svd(inliers - mean, full_matrices=False)
        normal = vt[-1]
        if normal[0] < 0:
            normal = -normal
        theta = math.degrees(math.atan2(normal[1], normal[0]))
        refined = LineHypothesis(rho=float(normal @ mean), theta=theta, votes=len(inliers))
    return refined
