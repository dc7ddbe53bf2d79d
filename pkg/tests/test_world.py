import numpy as np
import pytest

from active_mocap.world import (
    AgentAction,
    WorldConfig,
    make_world,
    occluded,
    skeleton_of,
    step_humans,
    step_world,
)


@pytest.fixture
def world():
    return make_world(WorldConfig(), seed=7, n_cameras=3, n_humans=4)


class TestStepWorld:
    def test_null_action_keeps_cameras(self, world):
        before_cams = [c.pose.position.copy() for c in world.cameras]
        before_humans = [h.position.copy() for h in world.humans]
        step_world(world, [AgentAction() for _ in world.cameras])
        for cam, prev in zip(world.cameras, before_cams):
            assert np.array_equal(cam.pose.position, prev)
        moved = [not np.array_equal(h.position, prev)
                 for h, prev in zip(world.humans, before_humans)]
        assert any(moved)

    def test_altitude_clamp(self, world):
        cam = world.cameras[0]
        cam.pose.position[2] = world.config.z_range[1]
        act = [AgentAction() for _ in world.cameras]
        act[0] = AgentAction([0, 0, 1, 0, 0])
        step_world(world, act)
        assert cam.pose.position[2] == world.config.z_range[1]

    def test_forward_translation_is_egocentric(self, world):
        cam = world.cameras[0]
        cam.pose.position[:] = (0.0, 0.0, 2.0)
        cam.pose.yaw = 0.0
        act = [AgentAction() for _ in world.cameras]
        act[0] = AgentAction([1, 0, 0, 0, 0])
        step_world(world, act)
        assert np.allclose(cam.pose.position, (0.25, 0.0, 2.0))

    def test_action_count_mismatch(self, world):
        from active_mocap.world import ActionCountMismatch

        with pytest.raises(ActionCountMismatch):
            step_world(world, [AgentAction()])

    def test_determinism(self):
        def trajectory():
            w = make_world(WorldConfig(), seed=11, n_cameras=2, n_humans=3)
            acts = np.random.default_rng(5).integers(-1, 2, size=(50, 2, 5))
            out = []
            for step in acts:
                step_world(w, [AgentAction(a) for a in step])
                out.append(np.concatenate([h.position for h in w.humans]
                                          + [c.pose.position for c in w.cameras]))
            return np.stack(out)

        assert np.array_equal(trajectory(), trajectory())

    def test_containment_and_target_uniqueness(self, world):
        rng = np.random.default_rng(0)
        cfg = world.config
        margin = cfg.half + cfg.flight_margin
        for _ in range(2000):
            acts = [AgentAction(a) for a in rng.integers(-1, 2, size=(3, 5))]
            step_world(world, acts)
            if world.step_index >= cfg.episode_length:
                world.step_index = 0
            for h in world.humans:
                assert np.all(np.abs(h.position[:2]) <= cfg.half + 1e-9)
            for c in world.cameras:
                assert np.all(np.abs(c.pose.position[:2]) <= margin + 1e-9)
                assert cfg.z_range[0] <= c.pose.position[2] <= cfg.z_range[1]
            assert sum(h.is_target for h in world.humans) == 1


class TestStepHumans:
    def test_waypoint_resample_inside_arena(self, world):
        h = world.humans[0]
        h.position[:2] = h.waypoint
        step_humans(world)
        assert np.linalg.norm(h.position[:2] - h.waypoint) > world.config.waypoint_radius or \
            np.all(np.abs(h.waypoint) <= world.config.half)
        assert np.all(np.abs(h.waypoint) <= world.config.half)

    def test_head_on_separation(self, world):
        a, b = world.humans[0], world.humans[1]
        a.position[:2] = (-0.3, 0.0)
        b.position[:2] = (0.3, 0.0)
        a.waypoint[:] = (5.0, 0.0)
        b.waypoint[:] = (-5.0, 0.0)
        a.heading, b.heading = 0.0, np.pi
        a.speed = b.speed = 1.5
        for _ in range(10):
            step_humans(world)
            gap = np.linalg.norm(a.position[:2] - b.position[:2])
            assert gap >= a.capsule_radius + b.capsule_radius - 1e-9

    def test_speed_band_after_resample(self, world):
        cfg = world.config
        for _ in range(200):
            step_humans(world)
            for h in world.humans:
                assert cfg.speed_range[0] <= h.speed <= cfg.speed_range[1]


class TestSkeleton:
    def test_gait_phase_mirror(self, world):
        h = world.humans[0]
        h.heading = 0.0
        h.gait_phase = 0.0
        front = skeleton_of(h)
        h.gait_phase = np.pi
        back = skeleton_of(h)
        left_ankle, right_ankle = 15, 16
        assert np.isclose(front[left_ankle, 0] - h.position[0],
                          back[right_ankle, 0] - h.position[0], atol=1e-9)

    def test_head_height_golden(self, world):
        h = world.humans[0]
        h.gait_phase = 0.0
        skel = skeleton_of(h)
        assert np.isclose(skel[0, 2], h.position[2] + 1.62)

    def test_heading_rotation_equivariance(self, world):
        h = world.humans[0]
        h.heading = 0.3
        a = skeleton_of(h) - h.position
        h.heading = 0.3 + np.pi
        b = skeleton_of(h) - h.position
        assert np.allclose(a[:, :2], -b[:, :2], atol=1e-9)
        assert np.allclose(a[:, 2], b[:, 2], atol=1e-9)


class TestOcclusion:
    def setup_method(self):
        self.world = make_world(WorldConfig(), seed=1, n_cameras=1, n_humans=2)
        cam = self.world.cameras[0]
        cam.pose.position[:] = (-4.0, 0.0, 1.0)
        cam.pose.yaw = 0.0
        cam.pose.pitch = 0.0
        self.joint = np.array([4.0, 0.0, 1.0])
        self.occluder = self.world.humans[1]
        self.world.humans = self.world.humans[:2]

    def test_clear_line_of_sight(self):
        self.occluder.position[:2] = (0.0, 5.0)
        assert not occluded(self.world.cameras[0], self.joint, self.world.humans,
                            exclude_id=self.world.humans[0].id)

    def test_midpoint_occluder_blocks(self):
        self.occluder.position[:] = (0.0, 0.0, 0.0)
        assert occluded(self.world.cameras[0], self.joint, self.world.humans,
                        exclude_id=self.world.humans[0].id)

    def test_lateral_miss_by_epsilon(self):
        self.occluder.position[:] = (0.0, self.occluder.capsule_radius + 1e-3, 0.0)
        assert not occluded(self.world.cameras[0], self.joint, self.world.humans,
                            exclude_id=self.world.humans[0].id)


def test_episode_terminates_at_length(desk_cfg):
    from active_mocap.env import TrackingEnv

    desk_cfg.world.episode_length = 30
    env = TrackingEnv(desk_cfg, 0)
    env.reset()
    steps = 0
    done = False
    while not done:
        _, done, _ = env.step(np.zeros((desk_cfg.n_cameras, 3), dtype=int))
        steps += 1
    assert steps == 30
