import numpy as np
import pytest

from perimkit.config import SynthConfig
from perimkit.models import CameraFrame, Intrinsics, RigidPose
from perimkit.synthgen import rasterize_walls, skeleton_from_dims


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def intrinsics():
    return Intrinsics(fx=32.0, fy=32.0, cx=32.0, cy=24.0, width=64, height=48)


@pytest.fixture
def rectangle():
    """5 x 4 m room, 2.5 m high, axis aligned."""
    return skeleton_from_dims("Rectangle", (5.0, 4.0), 2.5)


@pytest.fixture
def clean_config():
    return SynthConfig(noise_sigma=0.0, hole_count_range=(0, 0), global_rotation=False)


@pytest.fixture
def clean_rectangle_scene(rectangle, clean_config):
    return rasterize_walls(rectangle, clean_config, np.random.default_rng(7))


@pytest.fixture
def make_frame(intrinsics):
    def build(pose=None, image=None, depth=None, wall_mask=None):
        shape = (intrinsics.height, intrinsics.width)
        return CameraFrame(intrinsics=intrinsics, pose=pose or RigidPose.identity(),
                           image=np.zeros(shape) if image is None else image, depth=depth, wall_mask=wall_mask)
    return build
