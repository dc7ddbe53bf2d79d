import itertools
import math

import numpy as np
import pytest

from active_mocap.baselines import (
    LEVELS,
    TemporalSmoother,
    UnsupportedCount,
    fixed_formation,
    formation_vertices,
    rule_based_formation,
)
from active_mocap.geometry import CameraPose, wrap_angle
from active_mocap.world import WorldConfig


class TestFixedFormation:
    def test_triangle_geometry(self):
        poses = fixed_formation(3, arena_size=10.0)
        assert len(poses) == 3
        for k, p in enumerate(poses):
            ang = math.pi / 2 + 2 * math.pi * k / 3
            assert np.allclose(p.position[:2],
                               [5.0 * math.cos(ang), 5.0 * math.sin(ang)],
                               atol=1e-12)
            assert p.position[2] == 3.0
            assert math.isclose(p.pitch, math.radians(-35.0))

    def test_pentagon_radii_and_spacing(self):
        poses = fixed_formation(5, arena_size=8.0)
        xy = np.array([p.position[:2] for p in poses])
        assert np.allclose(np.linalg.norm(xy, axis=1), 4.0, atol=1e-12)
        angles = np.unwrap([math.atan2(y, x) for x, y in xy])
        gaps = np.diff(angles)
        assert np.allclose(gaps, 2 * math.pi / 5, atol=1e-12)

    def test_pair_quarter_circle(self):
        a, b = fixed_formation(2, arena_size=10.0)
        ang_a = math.atan2(a.position[1], a.position[0])
        ang_b = math.atan2(b.position[1], b.position[0])
        assert math.isclose(abs(wrap_angle(ang_b - ang_a)), math.pi / 2,
                            abs_tol=1e-12)

    def test_yaw_faces_center(self):
        for n in (2, 3, 4, 5, 6):
            for p in fixed_formation(n):
                to_center = -p.position[:2]
                yaw_err = wrap_angle(math.atan2(to_center[1], to_center[0]) - p.yaw)
                assert abs(yaw_err) < 1e-9

    def test_unsupported_counts(self):
        for n in (0, 1, 7):
            with pytest.raises(UnsupportedCount):
                fixed_formation(n)


class TestRuleBased:
    def test_vertices_translation_equivariant(self):
        base = formation_vertices((0.0, 0.0), 3)
        shifted = formation_vertices((1.3, -2.7), 3)
        for v0, v1 in zip(base, shifted):
            assert np.allclose(v1 - v0, [1.3, -2.7, 0.0], atol=1e-12)

    @staticmethod
    def _cams(positions, yaws):
        class _Cam:
            def __init__(self, pos, yaw):
                self.pose = CameraPose(np.array(pos, dtype=float), pitch=0.0,
                                       yaw=yaw)
        return [_Cam(p, y) for p, y in zip(positions, yaws)]

    def test_equilibrium_zero_action(self):
        target = (0.4, -0.8)
        verts = formation_vertices(target, 3)
        cams = self._cams([v.copy() for v in verts], [0.1, -2.0, 1.5])
        actions = rule_based_formation(cams, (target[0], target[1], 0.0), 0.2)
        for act in actions:
            assert np.array_equal(act.levels[:3], (0, 0, 0))

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            pos = rng.uniform([-4, -4, 1.5], [4, 4, 3.5])
            yaw = rng.uniform(-math.pi, math.pi)
            target = rng.uniform(-3, 3, size=2)
            cams = self._cams([pos], [yaw])
            delta = 0.2
            (act,) = rule_based_formation(cams, (*target, 0.0), delta)
            vertex = formation_vertices(target, 1)[0]
            fwd = np.array([math.cos(yaw), math.sin(yaw), 0.0])
            left = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
            chosen = pos + delta * (act.levels[0] * fwd + act.levels[1] * left) \
                + np.array([0.0, 0.0, delta * act.levels[2]])
            best = min(np.linalg.norm(pos + delta * (a * fwd + b * left)
                                      + np.array([0.0, 0.0, delta * c]) - vertex)
                       for a, b, c in itertools.product(LEVELS, repeat=3))
            assert np.linalg.norm(chosen - vertex) <= best + 1e-9

    def test_translation_equivariant_actions(self):
        rng = np.random.default_rng(3)
        pos = rng.uniform([-3, -3, 2], [3, 3, 3], size=(3, 3))
        yaws = rng.uniform(-math.pi, math.pi, size=3)
        shift = np.array([2.2, -1.1, 0.0])
        a0 = rule_based_formation(self._cams(pos, yaws), (0.5, 0.5, 0.0), 0.2)
        a1 = rule_based_formation(self._cams(pos + shift, yaws),
                                  (0.5 + shift[0], 0.5 + shift[1], 0.0), 0.2)
        for x, y in zip(a0, a1):
            assert np.array_equal(x.levels, y.levels)

    def test_converges_to_120_degree_spread(self):
        # steering three cameras toward the triangle vertices ends with
        # bearings from the target separated by 120 deg
        rng = np.random.default_rng(7)
        pos = rng.uniform([-4, -4, 1.5], [4, 4, 3.5], size=(3, 3))
        yaws = rng.uniform(-math.pi, math.pi, size=3)
        cams = self._cams(pos, yaws)
        target = np.array([0.8, -0.4, 0.0])
        delta = WorldConfig().delta
        for _ in range(300):
            actions = rule_based_formation(cams, target, delta)
            for cam, act in zip(cams, actions):
                yaw = cam.pose.yaw
                fwd = np.array([math.cos(yaw), math.sin(yaw), 0.0])
                left = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
                cam.pose.position += delta * (act.levels[0] * fwd
                                              + act.levels[1] * left)
                cam.pose.position[2] += delta * act.levels[2]
        bearings = sorted(math.atan2(c.pose.position[1] - target[1],
                                     c.pose.position[0] - target[0])
                          for c in cams)
        gaps = [wrap_angle(bearings[(i + 1) % 3] - bearings[i]) % (2 * math.pi)
                for i in range(3)]
        for g in gaps:
            assert abs(math.degrees(g) - 120.0) < 10.0


class TestTemporalSmoother:
    def test_alpha_one_bypasses(self):
        sm = TemporalSmoother(alpha=1.0)
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.normal(size=(15, 3))
            assert np.array_equal(sm.update(x), x)

    def test_invalid_alpha(self):
        for bad in (0.0, -0.2, 1.5):
            with pytest.raises(ValueError):
                TemporalSmoother(alpha=bad)

    def test_missing_joint_held(self):
        sm = TemporalSmoother(alpha=0.5)
        first = np.arange(9, dtype=float).reshape(3, 3)
        sm.update(first)
        second = first + 10.0
        valid = np.array([True, False, True])
        out = sm.update(second, valid)
        assert np.array_equal(out[1], first[1])
        assert np.allclose(out[0], first[0] + 5.0)

    def test_residual_ratio(self):
        sm = TemporalSmoother(alpha=0.3)
        sm.update(np.zeros((4, 3)))
        step = np.ones((4, 3))
        prev_residual = 1.0
        for _ in range(6):
            out = sm.update(step)
            residual = float(np.mean(step - out))
            assert math.isclose(residual, prev_residual * 0.7, rel_tol=1e-12)
            prev_residual = residual

    def test_first_frame_passthrough_with_mask(self):
        sm = TemporalSmoother(alpha=0.3)
        x = np.full((2, 3), 7.0)
        out = sm.update(x, valid=np.array([True, False]))
        assert np.array_equal(out, x)
