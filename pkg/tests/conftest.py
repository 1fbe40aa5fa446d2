# tests/conftest.py
# Escenas chicas compartidas por los tests (16³, imágenes 24×24)

from pathlib import Path

import numpy as np
import pytest

from generators.synth_scene import synth_scene
from parsers.scene_spec import SceneSpec
from utils.camera import Camera, PosedImage, look_at
from utils.field_grid import DensityGrid

ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = ROOT / "config"


def room_spec(checker: bool = True, count: int = 30, dims: int = 16) -> SceneSpec:
    """Habitación cerrada (paredes de 3 vóxeles) vista desde adentro."""
    pared = {"kind": "box", "center": [0, 0, 0], "size": [2, 2, 2], "density": 40.0,
             "color": [0.65, 0.55, 0.4]}
    if checker:
        pared["checker"] = {"period": 0.5, "color2": [0.3, 0.4, 0.6]}
    return SceneSpec.model_validate({
        "name": "habitacion_test",
        "dims": [dims] * 3,
        "primitives": [pared, {"kind": "box", "center": [0, 0, 0], "size": [1.2, 1.2, 1.2],
                               "density": 0.0}],
        "cameras": {"count": count, "layout": "sphere", "radius": 0.35,
                    "width": 24, "height": 24, "fov_deg": 75.0},
        "seed": 0,
    })


def ablation_spec() -> SceneSpec:
    """Piso con tablero + caja que lo ocluye, cámaras en el hemisferio superior."""
    return SceneSpec.model_validate({
        "name": "oclusion_test",
        "dims": [16, 16, 16],
        "primitives": [
            {"kind": "box", "center": [0, 0, -0.75], "size": [2, 2, 0.5], "density": 40.0,
             "color": [0.75, 0.7, 0.5], "checker": {"period": 0.5, "color2": [0.2, 0.35, 0.3]}},
            {"kind": "box", "center": [0.2, 0, -0.1], "size": [0.5, 0.75, 0.8], "density": 40.0,
             "color": [0.8, 0.25, 0.2]},
        ],
        "cameras": {"count": 40, "layout": "hemisphere", "radius": 3.0,
                    "width": 24, "height": 24, "fov_deg": 45.0},
        "seed": 1,
    })


@pytest.fixture(scope="session")
def room_scene():
    return synth_scene(room_spec(checker=True))


@pytest.fixture(scope="session")
def uniform_room_scene():
    return synth_scene(room_spec(checker=False))


@pytest.fixture(scope="session")
def ablation_scene():
    return synth_scene(ablation_spec())


@pytest.fixture
def empty_density():
    return DensityGrid.create((16, 16, 16), [-1, -1, -1], [1, 1, 1])


@pytest.fixture
def axis_camera():
    """Cámara en (0, 0, -3) mirando al origen, 32×32, f = 40."""
    return Camera(40.0, 40.0, 16.0, 16.0, 32, 32, look_at([0.0, 0.0, -3.0], [0.0, 0.0, 0.0]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def constant_image(camera: Camera, rgb) -> PosedImage:
    pixels = np.broadcast_to(np.asarray(rgb, dtype=np.float64), (camera.height, camera.width, 3))
    return PosedImage(camera, pixels.copy())
