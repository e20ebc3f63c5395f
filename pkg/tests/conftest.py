"""Shared fixtures: small synthetic scenes and isolated settings."""

import pytest

from syndist.config import get_settings
from syndist.core.synth import GroundTruth, make_scene
from syndist.experiment import default_camera, moving_object
from syndist.schemas import CameraConfig, PlaneSpec, SceneSpec


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Point artifacts at a temporary directory and re-read the environment."""
    monkeypatch.setenv("SYNDIST_OUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("SYNDIST_THREADS", "2")
    get_settings.cache_clear()
    yield get_settings()
    get_settings.cache_clear()


@pytest.fixture
def camera_config() -> CameraConfig:
    return default_camera()


@pytest.fixture(scope="session")
def plane_scene() -> GroundTruth:
    """Textured plane at z = 5 seen by a camera translating 0.3 m along x."""
    return make_scene(SceneSpec(camera=default_camera(), planes=[PlaneSpec(offset=5.0)]))


@pytest.fixture(scope="session")
def moving_scene() -> GroundTruth:
    """Building facade with a car keeping pace with the camera."""
    return make_scene(moving_object().scene)
