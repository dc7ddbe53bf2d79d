"""Passive and scripted comparison policies."""

import itertools
import math

import numpy as np

from .geometry import CameraPose, wrap_angle
from .world import AgentAction

LEVELS = (-1, 0, 1)


class UnsupportedCount(Exception):
    pass


def fixed_formation(n, arena_size=10.0, altitude=3.0, pitch_deg=-35.0, radius=None):
    """Static ring formation: regular polygon on the arena boundary, cameras
    hanging at 3 m with -35 deg pitch, yaw facing the arena center.

    n=2 is the right-angle pair (90 deg of center-angle separation); 3..6 are
    triangle, square, pentagon, hexagon.
    """
    if n not in (2, 3, 4, 5, 6):
        raise UnsupportedCount(f"fixed formations defined for 2..6 cameras, got {n}")
    radius = arena_size / 2.0 if radius is None else radius
    if n == 2:
        angles = [math.radians(135.0), math.radians(225.0)]
    else:
        angles = [math.pi / 2 + 2 * math.pi * k / n for k in range(n)]
    poses = []
    for a in angles:
        pos = np.array([radius * math.cos(a), radius * math.sin(a), altitude])
        yaw = wrap_angle(math.atan2(-pos[1], -pos[0]))
        poses.append(CameraPose(pos, pitch=math.radians(pitch_deg), yaw=yaw))
    return poses


def formation_vertices(target_xy, n, radius=2.5, altitude=2.5):
    """Vertices of a regular n-gon around the target, one per camera id."""
    out = []
    for k in range(n):
        a = 2 * math.pi * k / n
        out.append(np.array([target_xy[0] + radius * math.cos(a),
                             target_xy[1] + radius * math.sin(a), altitude]))
    return out


def rule_based_formation(cameras, target_estimate, delta, radius=2.5, altitude=2.5):
    """Scripted tracker: each camera steers toward its vertex of a regular
    polygon (equilateral triangle for 3 cameras) centered on the estimated
    target.  The translation levels minimizing post-step distance to the
    vertex are found by enumerating all 27 combinations; pitch/yaw stay with
    the rule-based look-at controller.
    """
    target_xy = np.asarray(target_estimate, dtype=float)[:2]
    vertices = formation_vertices(target_xy, len(cameras), radius, altitude)
    actions = []
    for cam, vertex in zip(cameras, vertices):
        yaw = cam.pose.yaw
        fwd = np.array([math.cos(yaw), math.sin(yaw), 0.0])
        left = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
        up = np.array([0.0, 0.0, 1.0])
        best, best_d = None, math.inf
        for combo in itertools.product(LEVELS, LEVELS, LEVELS):
            pos = cam.pose.position + delta * (combo[0] * fwd + combo[1] * left
                                               + combo[2] * up)
            d = float(np.linalg.norm(pos - vertex))
            if d < best_d - 1e-12:
                best_d, best = d, combo
        actions.append(AgentAction(np.array([best[0], best[1], best[2], 0, 0])))
    return actions


class TemporalSmoother:
    """Low-pass + temporal fusion over a reconstruction stream.

    Missing joints are filled from the previous output frame; present joints
    are exponentially smoothed with coefficient alpha (alpha=1 bypasses the
    filter).
    """

    def __init__(self, alpha=0.3):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        self.alpha = alpha
        self.prev = None

    def update(self, skeleton, valid=None):
        skeleton = np.asarray(skeleton, dtype=float)
        valid = np.ones(len(skeleton), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        if self.prev is None:
            out = skeleton.copy()
        elif self.alpha == 1.0:
            out = self.prev.copy()
            out[valid] = skeleton[valid]
        else:
            out = self.prev.copy()
            out[valid] = self.prev[valid] + self.alpha * (skeleton[valid] - self.prev[valid])
        self.prev = out
        return out.copy()
