import numpy as np
import pytest

from active_mocap.config import preset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk_cfg():
    cfg = preset("desk")
    cfg.n_cameras = 3
    cfg.n_humans = 3
    return cfg


def random_camera(rng, target=None):
    """A pose/intrinsics pair looking roughly at `target` (default origin)."""
    from active_mocap.geometry import CameraIntrinsics, CameraPose

    target = np.zeros(3) if target is None else np.asarray(target, dtype=float)
    r = rng.uniform(3.0, 6.0)
    ang = rng.uniform(0, 2 * np.pi)
    z = rng.uniform(1.0, 3.0)
    pos = target + np.array([r * np.cos(ang), r * np.sin(ang), z])
    d = target - pos
    yaw = np.arctan2(d[1], d[0])
    pitch = np.arctan2(d[2], np.hypot(d[0], d[1]))
    return CameraPose(pos, pitch, yaw), CameraIntrinsics()
