import math

import numpy as np
import pytest

from camarray.core import Frame
from camarray.scenegen import ExposureDistortion, Scenario, SceneObject
from camarray.world3d import CameraModel


def make_frame(pixels, camera_id=0, frame_index=0, timestamp_ms=0):
    return Frame(camera_id, frame_index, timestamp_ms,
                 np.asarray(pixels, dtype=np.uint8))


def gray_frame(width, height, value, camera_id=0, frame_index=0):
    px = np.full((height, width, 3), value, dtype=np.uint8)
    return make_frame(px, camera_id, frame_index)


def fan_cameras(n, width=320, height=240, hfov=math.pi / 3,
                position=(0.0, 0.0, 50.0), yaw0=0.0):
    return [
        CameraModel(camera_id=k, position=position, yaw=yaw0 + k * hfov,
                    pitch=0.0, roll=0.0, hfov=hfov, width=width, height=height)
        for k in range(n)
    ]


def two_camera_scenario(seed=7, width=320, height=240, duration=60,
                        distortion=None, objects=(), tick_rate=30.0,
                        terrain=None):
    cams = fan_cameras(2, width=width, height=height)
    distortions = {}
    if distortion is not None:
        distortions[1] = distortion
    return Scenario(seed=seed, tick_rate=tick_rate, duration=duration,
                    cameras=cams, terrain=terrain, distortions=distortions,
                    objects=list(objects))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
