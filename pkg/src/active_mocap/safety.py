"""Collision avoidance and control-signal conditioning.

Two avoidance mechanisms: OCA (feed-forward override of the translation
levels when an obstacle enters the safety range) and action masking
(zeroing the probability of translation combinations whose post-step
position would violate the range).  Plus EMA smoothing and multiplicative
action noise for the robustness harness.
"""

import itertools
import math

import numpy as np

from .world import AgentAction

LEVELS = (-1, 0, 1)
# all 27 translation combinations, index-aligned with flattened (3,3,3) grids
JOINT_COMBOS = np.array(list(itertools.product(LEVELS, LEVELS, LEVELS)))


class NoSafeAction(Exception):
    pass


def human_obstacle_distance(cam_pos, human):
    """Distance from a camera to the human's capsule axis (z clamped)."""
    z = float(np.clip(cam_pos[2], human.position[2], human.position[2] + human.height))
    axis_point = np.array([human.position[0], human.position[1], z])
    return float(np.linalg.norm(cam_pos - axis_point))


def nearest_obstacle(camera, world):
    """(distance, world-frame offset camera-obstacle) to the closest human or
    peer camera."""
    best = (math.inf, None)
    for h in world.humans:
        z = float(np.clip(camera.pose.position[2], h.position[2], h.position[2] + h.height))
        point = np.array([h.position[0], h.position[1], z])
        d = float(np.linalg.norm(camera.pose.position - point))
        if d < best[0]:
            best = (d, camera.pose.position - point)
    for peer in world.cameras:
        if peer.id == camera.id:
            continue
        d = float(np.linalg.norm(camera.pose.position - peer.pose.position))
        if d < best[0]:
            best = (d, camera.pose.position - peer.pose.position)
    return best


def min_camera_human_distance(world):
    """Safety metric: closest camera-to-human distance this frame."""
    return min(human_obstacle_distance(c.pose.position, h)
               for c in world.cameras for h in world.humans)


def _ego_axes(yaw):
    fwd = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    left = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
    up = np.array([0.0, 0.0, 1.0])
    return fwd, left, up


def oca_filter(action, camera, world, safety_range, reverse_magnitude=1):
    """Override translation levels away from the nearest in-range obstacle.

    Idempotent on already-safe states: out-of-range obstacles leave the
    action untouched.
    """
    if safety_range <= 0:
        raise ValueError("safety_range must be > 0")
    dist, offset = nearest_obstacle(camera, world)
    if offset is None or dist >= safety_range:
        return action
    fwd, left, up = _ego_axes(camera.pose.yaw)
    ego = np.array([np.dot(offset, fwd), np.dot(offset, left), np.dot(offset, up)])
    levels = action.levels.copy()
    for axis in range(3):
        if abs(ego[axis]) > 1e-9:
            levels[axis] = int(np.sign(ego[axis])) * reverse_magnitude
    return AgentAction(levels)


def joint_translation_mask(camera, world, safety_range, delta):
    """(27,) bool: True where the post-step camera position keeps every
    human and peer camera outside the safety range."""
    fwd, left, up = _ego_axes(camera.pose.yaw)
    steps = delta * (JOINT_COMBOS[:, 0:1] * fwd + JOINT_COMBOS[:, 1:2] * left
                     + JOINT_COMBOS[:, 2:3] * up)
    positions = camera.pose.position[None, :] + steps
    safe = np.ones(len(JOINT_COMBOS), dtype=bool)
    for h in world.humans:
        z = np.clip(positions[:, 2], h.position[2], h.position[2] + h.height)
        pts = np.stack([np.full(len(positions), h.position[0]),
                        np.full(len(positions), h.position[1]), z], axis=1)
        safe &= np.linalg.norm(positions - pts, axis=1) >= safety_range
    for peer in world.cameras:
        if peer.id == camera.id:
            continue
        safe &= np.linalg.norm(positions - peer.pose.position[None, :], axis=1) >= safety_range
    return safe


def action_mask(factor_probs, camera, world, safety_range, delta):
    """Zero unsafe translation combinations, renormalize, marginalize back
    to the factored 3x3 distribution.

    factor_probs: (3, 3) per-factor probabilities for (x, y, z).
    Raises NoSafeAction when every combination violates the range.
    """
    safe = joint_translation_mask(camera, world, safety_range, delta)
    if not safe.any():
        raise NoSafeAction("all 27 translation combinations violate the safety range")
    p = np.asarray(factor_probs, dtype=float)
    joint = (p[0][:, None, None] * p[1][None, :, None] * p[2][None, None, :]).reshape(-1)
    joint = joint * safe
    total = joint.sum()
    if total <= 0:
        raise NoSafeAction("no probability mass on safe combinations")
    joint /= total
    grid = joint.reshape(3, 3, 3)
    out = np.stack([grid.sum(axis=(1, 2)), grid.sum(axis=(0, 2)), grid.sum(axis=(0, 1))])
    return out


def sample_masked_joint(factor_probs, safe, rng):
    """Sample a safe (x, y, z) level triple from the masked joint distribution."""
    p = np.asarray(factor_probs, dtype=float)
    joint = (p[0][:, None, None] * p[1][None, :, None] * p[2][None, None, :]).reshape(-1)
    joint = joint * safe
    total = joint.sum()
    if total <= 0:
        raise NoSafeAction("no probability mass on safe combinations")
    idx = rng.choice(len(joint), p=joint / total)
    return JOINT_COMBOS[idx].copy()


def ema_smooth(prev, current, eta):
    """Exponential moving average of the continuous velocity command."""
    if not 0 < eta <= 1:
        raise ValueError("eta must be in (0, 1]")
    prev = np.asarray(prev, dtype=float)
    current = np.asarray(current, dtype=float)
    if eta == 1.0:
        return current.copy()
    return prev + eta * (current - prev)


def action_noise(command, rng, lo=0.80, hi=1.20):
    """Multiply the continuous command by a per-dimension uniform factor."""
    if lo >= hi and not lo == hi == 1.0:
        raise ValueError("need lo < hi (or the degenerate identity lo == hi == 1)")
    command = np.asarray(command, dtype=float)
    if lo == hi:
        return command.copy()
    return command * rng.uniform(lo, hi, size=command.shape)
