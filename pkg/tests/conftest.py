import numpy as np
import pytest

from app.models.models import PalletPose, PalletSpec, PipelineConfig, SceneModel
from app.models.raster import EquirectImage, RasterImage
from app.services.render_service import RenderService, make_warehouse_scene

# Pallet below the camera used across the end-to-end tests
REFERENCE_POSE = PalletPose(position=(2027.0, -1521.0, -760.0), yaw_deg=0.0)
# Shelf-plane estimate of the same pallet: right ray, ~15% short, 5 deg off
REFERENCE_INIT = PalletPose(position=(1718.0, -1280.0, -642.0), yaw_deg=5.0)


@pytest.fixture
def spec() -> PalletSpec:
    return PalletSpec()


@pytest.fixture
def config() -> PipelineConfig:
    return PipelineConfig()


@pytest.fixture(scope="session")
def renderer() -> RenderService:
    return RenderService()


@pytest.fixture(scope="session")
def reference_scene() -> SceneModel:
    return make_warehouse_scene([REFERENCE_POSE])


@pytest.fixture(scope="session")
def reference_eq(renderer, reference_scene) -> EquirectImage:
    return renderer.render_equirect(reference_scene, 4096, 2048)


@pytest.fixture(scope="session")
def small_eq(renderer, reference_scene) -> EquirectImage:
    return renderer.render_equirect(reference_scene, 1024, 512)


def gray(data) -> RasterImage:
    return RasterImage(data=np.asarray(data, dtype=np.float64))


def tilted_step(
    width: int = 100,
    height: int = 220,
    tilt_deg: float = 0.0,
    left: float = 0.8,
    right: float = 0.2,
) -> RasterImage:
    """
    Anti-aliased vertical step through the middle column, tilted so the top
    leans toward +u by ``tilt_deg``.

    The boundary passes through (width / 2 - 0.5, (height - 1) / 2).
    """
    cols = np.arange(width, dtype=np.float64)[None, :]
    rows = np.arange(height, dtype=np.float64)[:, None]
    boundary = width / 2 - 0.5 - np.tan(np.radians(tilt_deg)) * (rows - (height - 1) / 2)
    coverage = np.clip(boundary - cols + 0.5, 0.0, 1.0)
    return gray(right + (left - right) * coverage)
