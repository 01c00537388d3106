import math
from enum import Enum
from typing import Annotated, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Vec3 = Tuple[float, float, float]
Color = Tuple[
    Annotated[float, Field(ge=0.0, le=1.0)],
    Annotated[float, Field(ge=0.0, le=1.0)],
    Annotated[float, Field(ge=0.0, le=1.0)],
]
MatchScore = Annotated[float, Field(ge=0.0, le=1.0)]

UNIT_TOL = 1e-6


class Record(BaseModel):
    """Base for every immutable record: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid", frozen=True)


class ChannelSelector(str, Enum):
    R = "r"
    G = "g"
    B = "b"
    LUMINANCE = "luminance"


class PlaneHeight(str, Enum):
    BOTTOM = "bottom"
    TOP = "top"
    HOLE_TOP = "hole_top"


class BoundaryMethod(str, Enum):
    EDGE_HOUGH = "edge_hough"
    FLANK_THRESHOLD = "flank_threshold"


class HeightClass(str, Enum):
    BELOW = "below"
    ABOVE = "above"


class PalletSpec(Record):
    width_mm: float = Field(1100.0, gt=0)
    height_mm: float = Field(144.0, gt=0)
    hole_width_mm: float = Field(240.0, gt=0)
    hole_height_mm: float = Field(100.0, gt=0)
    hole_offset_mm: float = Field(600.0, gt=0)
    hole_bottom_mm: float = Field(22.0, gt=0)
    corner_radius_mm: float = Field(40.0, ge=0)

    @model_validator(mode="after")
    def _check_layout(self) -> "PalletSpec":
        half_offset = self.hole_offset_mm / 2
        if half_offset - self.hole_width_mm / 2 <= 0:
            raise ValueError("fork holes overlap the vertical centerline")
        if half_offset + self.hole_width_mm / 2 >= self.width_mm / 2:
            raise ValueError("fork holes extend past the face sides")
        if self.hole_bottom_mm + self.hole_height_mm >= self.height_mm:
            raise ValueError("fork holes extend past the face top")
        if self.corner_radius_mm >= min(self.width_mm, self.height_mm) / 2:
            raise ValueError("corner radius must be below half the smaller face dimension")
        return self

    @property
    def hole_centers_mm(self) -> Tuple[float, float]:
        """Lateral hole centers relative to the face centerline."""
        return (-self.hole_offset_mm / 2, self.hole_offset_mm / 2)

    @property
    def hole_top_above_bottom_mm(self) -> float:
        return self.hole_bottom_mm + self.hole_height_mm


class PalletPose(Record):
    """Center of the pallet front face (mm, camera frame) and its yaw."""

    position: Vec3
    yaw_deg: float = 0.0

    @field_validator("position")
    @classmethod
    def _finite_position(cls, value: Vec3) -> Vec3:
        if not all(math.isfinite(c) for c in value):
            raise ValueError("pose position must be finite")
        return value

    @field_validator("yaw_deg")
    @classmethod
    def _yaw_range(cls, value: float) -> float:
        if not math.isfinite(value) or not -90.0 < value < 90.0:
            raise ValueError(f"yaw_deg must lie in (-90, 90), got {value}")
        return value

    @property
    def position_array(self) -> np.ndarray:
        return np.asarray(self.position, dtype=np.float64)


class PlaneSpec(Record):
    """Metric sampling grid on a 3D plane; origin maps to the image's center pixel."""

    origin: Vec3
    ex: Vec3
    ey: Vec3
    width_mm: float = Field(gt=0)
    height_mm: float = Field(gt=0)
    res: float = Field(gt=0)

    @model_validator(mode="after")
    def _check_axes(self) -> "PlaneSpec":
        ex, ey = np.asarray(self.ex), np.asarray(self.ey)
        if abs(np.linalg.norm(ex) - 1) > UNIT_TOL or abs(np.linalg.norm(ey) - 1) > UNIT_TOL:
            raise ValueError("plane axes must be unit vectors")
        if abs(float(ex @ ey)) > UNIT_TOL:
            raise ValueError("plane axes must be orthogonal")
        if self.cols < 1 or self.rows < 1:
            raise ValueError("plane extent is smaller than one pixel")
        return self

    @property
    def cols(self) -> int:
        return int(round(self.width_mm / self.res))

    @property
    def rows(self) -> int:
        return int(round(self.height_mm / self.res))

    @property
    def center_px(self) -> Tuple[float, float]:
        return (self.cols / 2, self.rows / 2)

    @property
    def normal(self) -> np.ndarray:
        """Viewing direction of the projected image (ex x ey)."""
        return np.cross(np.asarray(self.ex), np.asarray(self.ey))


class LineHypothesis(Record):
    rho: float
    theta: float
    votes: int = Field(ge=0)


class Detection(Record):
    pose: PalletPose
    score: MatchScore
    plane: PlaneSpec
    offset_px: Tuple[float, float]


class BoundaryExtraction(Record):
    method: BoundaryMethod
    candidates: List[Tuple[float, float]]
    line: LineHypothesis
    delta_yaw_deg: float
    threshold: Optional[float] = None
    plane_height: Optional[PlaneHeight] = None


class DepthProfile(Record):
    offsets_mm: List[float]
    scores: List[float]
    best_offset_mm: float
    best_score: float
    best_in_plane_px: Tuple[int, int] = (0, 0)

    @model_validator(mode="after")
    def _check_profile(self) -> "DepthProfile":
        if len(self.offsets_mm) != len(self.scores):
            raise ValueError("offsets and scores differ in length")
        if any(b <= a for a, b in zip(self.offsets_mm, self.offsets_mm[1:])):
            raise ValueError("depth offsets must be strictly increasing")
        return self


class LocalizationResult(Record):
    pose: PalletPose
    boundary: BoundaryExtraction
    residual_yaw_deg: Optional[float] = None
    profile: DepthProfile
    timings_ms: Dict[str, float] = {}


class HoughConfig(Record):
    theta_window_deg: float = Field(15.0, gt=0, le=45)
    theta_step_deg: float = Field(0.1, gt=0, le=5)
    rho_step_px: float = Field(1.0, gt=0, le=10)


def _identity() -> List[List[float]]:
    return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]


class PipelineConfig(Record):
    channel: ChannelSelector = ChannelSelector.LUMINANCE
    hough: HoughConfig = HoughConfig()
    flank_width_px: int = Field(20, ge=2, le=500)
    flank_height_px: int = Field(100, ge=2, le=2000)
    contrast_min: float = Field(0.05, ge=0, le=1)
    tau_edge: float = Field(0.2, gt=0, le=1)
    theta_detect: float = Field(0.6, gt=0, le=1)
    detect_stride_px: int = Field(4, ge=1, le=64)
    depth_range_mm: Tuple[float, float] = (-150.0, 550.0)
    coarse_step_mm: float = Field(20.0, gt=0)
    fine_step_mm: float = Field(2.0, gt=0)
    search_px: int = Field(10, ge=0, le=200)
    depth_res_mm: float = Field(2.0, gt=0, le=20)
    # Swept-plane pixel size as a fraction of one source pixel's footprint on the face
    depth_footprint_ratio: float = Field(0.4, gt=0, le=2)
    depth_margin_mm: float = Field(60.0, ge=0)
    h_min_mm: float = Field(100.0, gt=0)
    eps_plane_mm: float = Field(50.0, gt=0)
    residual_tol_deg: float = Field(0.5, gt=0, le=10)
    boundary_method: BoundaryMethod = BoundaryMethod.FLANK_THRESHOLD
    prefer_hole_boundary: bool = False
    hole_fallback: bool = True
    verify_yaw: bool = True
    horizontal_res_mm: float = Field(4.0, gt=0, le=50)
    horizontal_depth_mm: float = Field(400.0, gt=0)
    horizontal_span_ratio: float = Field(0.8, gt=0, le=1.5)
    line_vote_ratio: float = Field(0.5, gt=0, le=1)
    line_inlier_px: float = Field(2.0, gt=0)
    max_lines: int = Field(16, ge=1)
    # Level-to-camera rotation: a level-frame direction d appears along camera_rotation @ d in the image
    camera_rotation: List[List[float]] = Field(default_factory=_identity)
    pallet: PalletSpec = PalletSpec()
    shelf: Optional[PlaneSpec] = None

    @field_validator("depth_range_mm")
    @classmethod
    def _range_contains_zero(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if not lo <= 0.0 <= hi or lo == hi:
            raise ValueError("depth_range_mm must contain 0 and be non-empty")
        return value

    @field_validator("camera_rotation")
    @classmethod
    def _rotation(cls, value: List[List[float]]) -> List[List[float]]:
        rot = np.asarray(value, dtype=np.float64)
        if rot.shape != (3, 3):
            raise ValueError("camera_rotation must be 3x3")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or np.linalg.det(rot) < 0:
            raise ValueError("camera_rotation must be a proper rotation")
        return value

    @model_validator(mode="after")
    def _check_steps(self) -> "PipelineConfig":
        if self.fine_step_mm > self.coarse_step_mm:
            raise ValueError("fine_step_mm must not exceed coarse_step_mm")
        return self


class PoseDiagnostics(Record):
    timings_ms: Dict[str, float] = {}
    delta_yaw_deg: Optional[float] = None
    residual_yaw_deg: Optional[float] = None
    plane_height: Optional[PlaneHeight] = None
    best_offset_mm: Optional[float] = None


class PoseRecord(Record):
    position_mm: Vec3
    yaw_deg: float
    frame: Literal["camera"] = "camera"
    score: Optional[float] = None
    diagnostics: PoseDiagnostics = PoseDiagnostics()

    @field_validator("yaw_deg")
    @classmethod
    def _yaw_range(cls, value: float) -> float:
        if not -90.0 < value < 90.0:
            raise ValueError(f"yaw_deg must lie in (-90, 90), got {value}")
        return value

    def to_pose(self) -> PalletPose:
        return PalletPose(position=self.position_mm, yaw_deg=self.yaw_deg)

    @classmethod
    def from_result(cls, result: LocalizationResult) -> "PoseRecord":
        return cls(
            position_mm=result.pose.position,
            yaw_deg=result.pose.yaw_deg,
            score=result.profile.best_score,
            diagnostics=PoseDiagnostics(
                timings_ms=result.timings_ms,
                delta_yaw_deg=result.boundary.delta_yaw_deg,
                residual_yaw_deg=result.residual_yaw_deg,
                plane_height=result.boundary.plane_height,
                best_offset_mm=result.profile.best_offset_mm,
            ),
        )


class DetectionRecord(Record):
    position_mm: Vec3
    yaw_deg: float
    frame: Literal["camera"] = "camera"
    score: float
    offset_px: Tuple[float, float]

    @classmethod
    def from_detection(cls, detection: Detection) -> "DetectionRecord":
        return cls(
            position_mm=detection.pose.position,
            yaw_deg=detection.pose.yaw_deg,
            score=detection.score,
            offset_px=detection.offset_px,
        )


class DetectionList(Record):
    count: int
    detections: List[DetectionRecord] = []


# Synthetic scene description


class Floor(Record):
    z_mm: float
    color: Color = (0.45, 0.45, 0.45)


class AxisBox(Record):
    name: str = "slab"
    min_mm: Vec3
    max_mm: Vec3
    color: Color

    @model_validator(mode="after")
    def _non_degenerate(self) -> "AxisBox":
        if any(hi <= lo for lo, hi in zip(self.min_mm, self.max_mm)):
            raise ValueError(f"box {self.name} is degenerate")
        return self


class PalletPlacement(Record):
    spec: PalletSpec = PalletSpec()
    pose: PalletPose
    face_color: Color = (0.1, 0.3, 0.95)
    hole_color: Color = (0.03, 0.03, 0.05)
    side_color: Color = (0.6, 0.65, 0.8)
    depth_mm: float = Field(1100.0, gt=0)


class Stripe(Record):
    """Painted rectangle lying on an arbitrary plane."""

    center_mm: Vec3
    axis_u: Vec3
    axis_v: Vec3
    half_length_mm: float = Field(gt=0)
    half_width_mm: float = Field(gt=0)
    color: Color

    @model_validator(mode="after")
    def _check_axes(self) -> "Stripe":
        u, v = np.asarray(self.axis_u), np.asarray(self.axis_v)
        if abs(np.linalg.norm(u) - 1) > UNIT_TOL or abs(np.linalg.norm(v) - 1) > UNIT_TOL:
            raise ValueError("stripe axes must be unit vectors")
        if abs(float(u @ v)) > UNIT_TOL:
            raise ValueError("stripe axes must be orthogonal")
        return self


class SceneModel(Record):
    background_color: Color = (0.85, 0.6, 0.2)
    floor: Optional[Floor] = None
    boxes: List[AxisBox] = []
    pallets: List[PalletPlacement] = []
    stripes: List[Stripe] = []
    noise_amplitude: float = Field(0.0, ge=0, le=0.5)
    noise_seed: int = 0


class GroundTruth(Record):
    index: int = Field(ge=0)
    pose: PalletPose
    height_class: HeightClass


class GroundTruthFile(Record):
    pallets: List[GroundTruth] = []


# Evaluation runs


class TrialResult(Record):
    yaw_offset_deg: float
    depth_offset_mm: float
    pose: Optional[PalletPose] = None
    yaw_error_deg: Optional[float] = None
    position_error_mm: Optional[float] = None
    converged: bool = False
    error_code: Optional[str] = None
    timings_ms: Dict[str, float] = {}


class GridReport(Record):
    trials: List[TrialResult]
    max_yaw_error_deg: Optional[float] = None
    max_position_error_mm: Optional[float] = None
    all_converged: bool


class TrajectoryFrame(Record):
    camera_offset_mm: float
    true_pose: PalletPose
    pose: Optional[PalletPose] = None
    yaw_error_deg: Optional[float] = None
    position_error_mm: Optional[float] = None
    error_code: Optional[str] = None


class TrajectoryReport(Record):
    frames: List[TrajectoryFrame]
    failed_frames: int = Field(0, ge=0)
    all_localized: bool
    max_yaw_error_deg: Optional[float] = None
    # Between consecutive frames that were both localized
    max_yaw_jump_deg: Optional[float] = None
