import numpy as np
import pytest

from active_mocap.safety import (
    JOINT_COMBOS,
    action_mask,
    action_noise,
    ema_smooth,
    joint_translation_mask,
    min_camera_human_distance,
    nearest_obstacle,
    oca_filter,
    sample_masked_joint,
)
from active_mocap.world import AgentAction, WorldConfig, make_world


@pytest.fixture
def world():
    w = make_world(WorldConfig(), seed=2, n_cameras=2, n_humans=2)
    cam = w.cameras[0]
    cam.pose.position[:] = (0.0, 0.0, 1.0)
    cam.pose.yaw = 0.0
    # move everything else far away as a clean slate
    w.cameras[1].pose.position[:] = (8.0, 8.0, 3.0)
    for h in w.humans:
        h.position[:2] = (-8.0, -8.0)
    return w


class TestOcaFilter:
    def test_out_of_range_unchanged(self, world):
        world.humans[0].position[:2] = (5.0, 0.0)
        act = AgentAction([1, 1, 0, 0, 0])
        out = oca_filter(act, world.cameras[0], world, safety_range=1.0)
        assert np.array_equal(out.levels, act.levels)

    def test_obstacle_ahead_reverses_x(self, world):
        world.humans[0].position[:] = (0.5, 0.0, 0.0)
        world.humans[0].height = 2.0
        act = AgentAction([1, 0, 0, 0, 0])
        out = oca_filter(act, world.cameras[0], world, safety_range=1.0)
        assert out.levels[0] == -1

    def test_diagonal_obstacle_reverses_both(self, world):
        world.humans[0].position[:] = (0.3, 0.3, 0.0)
        world.humans[0].height = 2.0
        act = AgentAction([1, -1, 0, 0, 0])
        out = oca_filter(act, world.cameras[0], world, safety_range=1.0)
        assert out.levels[0] == -1 and out.levels[1] == -1

    def test_idempotent_when_safe(self, world):
        act = AgentAction([1, 0, -1, 0, 0])
        once = oca_filter(act, world.cameras[0], world, safety_range=1.0)
        twice = oca_filter(once, world.cameras[0], world, safety_range=1.0)
        assert np.array_equal(once.levels, twice.levels)


class TestActionMask:
    def test_no_obstacles_unchanged(self, world):
        probs = np.full((3, 3), 1.0 / 3.0)
        out = action_mask(probs, world.cameras[0], world, 0.8, 0.25)
        assert np.allclose(out, probs)

    def test_masked_joint_renormalizes(self, world):
        world.humans[0].position[:] = (0.55, 0.0, 0.0)
        world.humans[0].height = 2.0
        probs = np.full((3, 3), 1.0 / 3.0)
        safe = joint_translation_mask(world.cameras[0], world, 0.8, 0.25)
        assert not safe.all() and safe.any()
        out = action_mask(probs, world.cameras[0], world, 0.8, 0.25)
        assert np.allclose(out.sum(axis=1), 1.0)
        # moving toward the obstacle (+x) must lose probability mass
        assert out[0, 2] < probs[0, 2]

    def test_surrounded_forces_down(self):
        # peers ring the camera just inside range, plus one overhead; the
        # only safe translations go straight down
        w = make_world(WorldConfig(), seed=2, n_cameras=6, n_humans=1)
        w.humans[0].position[:2] = (-8.0, -8.0)
        cam = w.cameras[0]
        cam.pose.position[:] = (0.0, 0.0, 2.5)
        cam.pose.yaw = 0.0
        ring = [(0.78, 0.0), (-0.78, 0.0), (0.0, 0.78), (0.0, -0.78)]
        for peer, (x, y) in zip(w.cameras[1:5], ring):
            peer.pose.position[:] = (x, y, 2.5)
        w.cameras[5].pose.position[:] = (0.0, 0.0, 3.28)
        safe = joint_translation_mask(cam, w, 0.8, 0.25)
        assert safe.any()
        assert np.all(np.asarray(JOINT_COMBOS)[safe][:, 2] == -1)

    def test_sample_masked_joint_respects_mask(self, world, rng):
        probs = np.full((3, 3), 1.0 / 3.0)
        safe = np.zeros(27, dtype=bool)
        safe[13] = True  # only the all-zero combination
        for _ in range(20):
            levels = sample_masked_joint(probs, safe, rng)
            assert np.array_equal(levels, (0, 0, 0))


class TestSmoothingAndNoise:
    def test_ema_eta_one_identity(self, rng):
        prev = np.zeros(3)
        for _ in range(10):
            cur = rng.normal(size=3)
            prev = ema_smooth(prev, cur, 1.0)
            assert np.array_equal(prev, cur)

    def test_ema_half_step(self):
        assert np.allclose(ema_smooth(np.zeros(1), np.ones(1), 0.5), [0.5])

    def test_ema_geometric_convergence(self):
        out = np.zeros(1)
        c = np.ones(1)
        for k in range(1, 8):
            out = ema_smooth(out, c, 0.3)
            assert np.isclose(1.0 - out[0], 0.7 ** k)

    def test_noise_zero_action(self, rng):
        assert np.array_equal(action_noise(np.zeros(3), rng), np.zeros(3))

    def test_noise_degenerate_band_identity(self, rng):
        cmd = rng.normal(size=5)
        assert np.allclose(action_noise(cmd, rng, 1.0, 1.0), cmd)

    def test_noise_mean_factor(self):
        rng = np.random.default_rng(0)
        ones = np.ones(100_000)
        out = action_noise(ones, rng, 0.80, 1.20)
        assert 0.995 < out.mean() < 1.005
        assert np.all(out >= 0.80) and np.all(out < 1.20)


def test_nearest_obstacle_includes_peer_cameras(world):
    world.cameras[1].pose.position[:] = (0.6, 0.0, 1.0)
    dist, _ = nearest_obstacle(world.cameras[0], world)
    assert np.isclose(dist, 0.6)


@pytest.mark.slow
def test_masking_distance_bound_random_policy(desk_cfg):
    # 10^4 random-policy steps with masking may never dip below
    # safety_range - delta*sqrt(3)
    desk_cfg.safety.mode = "mask"
    from active_mocap.env import TrackingEnv

    env = TrackingEnv(desk_cfg, 0)
    rng = np.random.default_rng(1)
    bound = desk_cfg.safety.range - desk_cfg.world.delta * np.sqrt(3)
    env.reset()
    worst = np.inf
    steps = 0
    while steps < 10_000:
        masks = env.translation_masks()
        levels = []
        for i in range(desk_cfg.n_cameras):
            probs = np.full((3, 3), 1.0 / 3.0)
            lv = sample_masked_joint(probs, masks[i], rng)
            levels.append(lv)
        _, done, info = env.step(np.array(levels))
        worst = min(worst, info["min_cam_human_dist"])
        steps += 1
        if done:
            env.reset()
    assert worst >= bound
