"""Ground-truth crowd world: walking humans, camera kinematics, transitions."""

import math
from dataclasses import dataclass, field

import numpy as np

from .accel import segment_capsule_blocked
from .geometry import CameraIntrinsics, CameraPose, NUM_JOINTS, project, wrap_angle


class ActionCountMismatch(Exception):
    pass


@dataclass
class WorldConfig:
    arena_size: float = 10.0            # square arena, centered on the origin
    human_count_range: tuple = (1, 6)
    delta: float = 0.25                 # camera translation per level, meters
    eta_deg: float = 5.0                # camera rotation per level, degrees
    speed_range: tuple = (0.5, 1.5)     # human walking speed band, m/s
    capsule_radius: float = 0.30
    human_height: float = 1.70
    z_range: tuple = (0.5, 3.5)         # camera altitude band
    flight_margin: float = 1.0          # cameras may leave the arena this far
    dt: float = 0.2                     # seconds per step (humans only)
    episode_length: int = 500
    pitch_yaw_mode: str = "rule_based"  # or "learned"
    waypoint_radius: float = 0.3
    focal: float = 320.0
    image_width: int = 640
    image_height: int = 480

    @property
    def eta(self):
        return math.radians(self.eta_deg)

    @property
    def half(self):
        return self.arena_size / 2.0


@dataclass
class HumanState:
    id: int
    position: np.ndarray          # (3,), z = 0 at ground
    heading: float
    speed: float
    gait_phase: float
    waypoint: np.ndarray          # (2,)
    is_target: bool = False
    capsule_radius: float = 0.30
    height: float = 1.70

    def copy(self):
        return HumanState(self.id, self.position.copy(), self.heading, self.speed,
                          self.gait_phase, self.waypoint.copy(), self.is_target,
                          self.capsule_radius, self.height)


@dataclass
class CameraAgentState:
    id: int
    pose: CameraPose
    intrinsics: CameraIntrinsics

    def copy(self):
        return CameraAgentState(self.id, self.pose.copy(), self.intrinsics)


@dataclass
class AgentAction:
    """Five 3-level components: (x, y, z) translation, (pitch, yaw) rotation."""
    levels: np.ndarray = field(default_factory=lambda: np.zeros(5, dtype=np.int64))

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.int64)
        if self.levels.shape != (5,) or not np.all(np.isin(self.levels, (-1, 0, 1))):
            raise ValueError("levels must be five values in {-1, 0, +1}")


@dataclass
class WorldState:
    humans: list
    cameras: list
    step_index: int
    rng: np.random.Generator
    config: WorldConfig

    def target(self):
        return next(h for h in self.humans if h.is_target)

    def copy(self):
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng.bit_generator.state
        return WorldState([h.copy() for h in self.humans],
                          [c.copy() for c in self.cameras],
                          self.step_index, rng, self.config)


# ---------------------------------------------------------------------------
# procedural 17-joint skeleton
# ---------------------------------------------------------------------------

# (forward, lateral-left, up) offsets for a 1.70 m human, COCO order.
_BASE_OFFSETS = np.array([
    [0.10, 0.000, 1.620],   # nose
    [0.09, 0.035, 1.640],   # left_eye
    [0.09, -0.035, 1.640],  # right_eye
    [0.01, 0.075, 1.630],   # left_ear
    [0.01, -0.075, 1.630],  # right_ear
    [0.00, 0.200, 1.450],   # left_shoulder
    [0.00, -0.200, 1.450],  # right_shoulder
    [0.00, 0.250, 1.200],   # left_elbow
    [0.00, -0.250, 1.200],  # right_elbow
    [0.00, 0.270, 0.950],   # left_wrist
    [0.00, -0.270, 0.950],  # right_wrist
    [0.00, 0.110, 0.950],   # left_hip
    [0.00, -0.110, 0.950],  # right_hip
    [0.00, 0.120, 0.500],   # left_knee
    [0.00, -0.120, 0.500],  # right_knee
    [0.00, 0.130, 0.080],   # left_ankle
    [0.00, -0.130, 0.080],  # right_ankle
])

# per-joint forward swing amplitude; legs and arms counter-phase
_SWING = np.zeros(NUM_JOINTS)
_SWING[7], _SWING[8] = -0.08, 0.08      # elbows (arms oppose same-side leg)
_SWING[9], _SWING[10] = -0.15, 0.15     # wrists
_SWING[13], _SWING[14] = 0.12, -0.12    # knees
_SWING[15], _SWING[16] = 0.25, -0.25    # ankles


def skeleton_of(human):
    """Deterministic 17-joint skeleton for a human's kinematic state."""
    scale = human.height / 1.70
    offsets = _BASE_OFFSETS * scale
    fwd = offsets[:, 0] + _SWING * scale * math.sin(human.gait_phase)
    lat = offsets[:, 1]
    ch, sh = math.cos(human.heading), math.sin(human.heading)
    joints = np.empty((NUM_JOINTS, 3))
    joints[:, 0] = human.position[0] + ch * fwd - sh * lat
    joints[:, 1] = human.position[1] + sh * fwd + ch * lat
    joints[:, 2] = human.position[2] + offsets[:, 2]
    return joints


def capsule_endpoints(human):
    """Axis endpoints of the human's bounding capsule (full extent 0..height)."""
    r = human.capsule_radius
    base = human.position + np.array([0.0, 0.0, r])
    top = human.position + np.array([0.0, 0.0, human.height - r])
    return base, top


def occluded(camera, joint, humans, exclude_id):
    """True iff the camera->joint segment hits another human's capsule or the
    joint falls outside the camera frustum."""
    if project(camera.pose, camera.intrinsics, joint) is None:
        return True
    occluders = [h for h in humans if h.id != exclude_id]
    if not occluders:
        return False
    axis_a = np.stack([capsule_endpoints(h)[0] for h in occluders])
    axis_b = np.stack([capsule_endpoints(h)[1] for h in occluders])
    radii = np.array([h.capsule_radius for h in occluders])
    blocked = segment_capsule_blocked(camera.pose.position,
                                      np.asarray(joint, dtype=float).reshape(1, 3),
                                      axis_a, axis_b, radii)
    return bool(blocked[0])


def occlusion_mask(camera, joints, humans, exclude_id):
    """Vectorized `occluded` for a (N, 3) block of joints (frustum not included)."""
    occluders = [h for h in humans if h.id != exclude_id]
    if not occluders:
        return np.zeros(len(joints), dtype=bool)
    axis_a = np.stack([capsule_endpoints(h)[0] for h in occluders])
    axis_b = np.stack([capsule_endpoints(h)[1] for h in occluders])
    radii = np.array([h.capsule_radius for h in occluders])
    return np.asarray(segment_capsule_blocked(camera.pose.position, joints,
                                              axis_a, axis_b, radii), dtype=bool)


# ---------------------------------------------------------------------------
# world construction and transition
# ---------------------------------------------------------------------------

def _sample_waypoint(cfg, rng):
    lim = cfg.half - cfg.capsule_radius
    return rng.uniform(-lim, lim, size=2)


def make_world(cfg, seed, n_cameras=3, n_humans=None):
    """Build a fresh seeded WorldState.

    Cameras start spread on a ring looking at the arena center; humans are
    dropped at non-overlapping positions with random waypoints.  Exactly one
    human (id 0) is the tracking target.
    """
    rng = np.random.default_rng(seed)
    if n_humans is None:
        n_humans = int(rng.integers(cfg.human_count_range[0], cfg.human_count_range[1] + 1))
    humans = []
    positions = []
    for hid in range(n_humans):
        for _ in range(200):
            lim = cfg.half - cfg.capsule_radius
            pos = rng.uniform(-lim, lim, size=2)
            if all(np.linalg.norm(pos - p) > 2.2 * cfg.capsule_radius for p in positions):
                break
        positions.append(pos)
        humans.append(HumanState(
            id=hid,
            position=np.array([pos[0], pos[1], 0.0]),
            heading=float(rng.uniform(-math.pi, math.pi)),
            speed=float(rng.uniform(*cfg.speed_range)),
            gait_phase=float(rng.uniform(0, 2 * math.pi)),
            waypoint=_sample_waypoint(cfg, rng),
            is_target=(hid == 0),
            capsule_radius=cfg.capsule_radius,
            height=cfg.human_height,
        ))
    intr = CameraIntrinsics(focal=cfg.focal, width=cfg.image_width, height=cfg.image_height)
    cameras = []
    for cid in range(n_cameras):
        angle = 2 * math.pi * cid / n_cameras + float(rng.uniform(-0.3, 0.3))
        radius = float(rng.uniform(3.0, 4.5))
        pos = np.array([radius * math.cos(angle), radius * math.sin(angle),
                        float(rng.uniform(2.0, 3.0))])
        yaw = wrap_angle(math.atan2(-pos[1], -pos[0]))
        cameras.append(CameraAgentState(cid, CameraPose(pos, pitch=math.radians(-30), yaw=yaw), intr))
    return WorldState(humans, cameras, 0, rng, cfg)


def step_humans(state):
    """Advance every human one step of waypoint steering with repulsion.

    Post-step pairwise separation is enforced at >= the sum of capsule radii
    by a symmetric push-apart pass.
    """
    cfg = state.config
    rng = state.rng
    humans = state.humans
    for h in humans:
        to_wp = h.waypoint - h.position[:2]
        dist = np.linalg.norm(to_wp)
        if dist < cfg.waypoint_radius:
            h.waypoint = _sample_waypoint(cfg, rng)
            h.speed = float(rng.uniform(*cfg.speed_range))
            to_wp = h.waypoint - h.position[:2]
            dist = np.linalg.norm(to_wp)
        desired = to_wp / max(dist, 1e-9)
        # soft repulsion from nearby humans
        push = np.zeros(2)
        for other in humans:
            if other.id == h.id:
                continue
            d = h.position[:2] - other.position[:2]
            norm = np.linalg.norm(d)
            personal = h.capsule_radius + other.capsule_radius + 0.4
            if norm < personal:
                push += d / max(norm, 1e-9) * (personal - norm) / personal
        direction = desired + 1.5 * push
        direction /= max(np.linalg.norm(direction), 1e-9)
        h.heading = math.atan2(direction[1], direction[0])
        step_len = h.speed * cfg.dt
        h.position[0] += direction[0] * step_len
        h.position[1] += direction[1] * step_len
        lim = cfg.half - cfg.capsule_radius
        h.position[0] = float(np.clip(h.position[0], -lim, lim))
        h.position[1] = float(np.clip(h.position[1], -lim, lim))
        h.gait_phase = (h.gait_phase + h.speed * cfg.dt * 2 * math.pi) % (2 * math.pi)
    # hard separation: project overlapping pairs apart
    for _ in range(4):
        moved = False
        for i in range(len(humans)):
            for j in range(i + 1, len(humans)):
                a, b = humans[i], humans[j]
                d = a.position[:2] - b.position[:2]
                norm = np.linalg.norm(d)
                min_sep = a.capsule_radius + b.capsule_radius
                if norm < min_sep:
                    moved = True
                    if norm < 1e-9:
                        d = np.array([1.0, 0.0])
                        norm = 1.0
                    shift = (min_sep - norm) / 2.0 * d / norm
                    a.position[:2] += shift
                    b.position[:2] -= shift
        if not moved:
            break
    return humans


def apply_camera_action(camera, action, cfg):
    """Translate in the camera's yaw-aligned ground frame, rotate, clamp."""
    lv = action.levels
    yaw = camera.pose.yaw
    fwd = np.array([math.cos(yaw), math.sin(yaw)])
    left = np.array([-math.sin(yaw), math.cos(yaw)])
    camera.pose.position[:2] += cfg.delta * (lv[0] * fwd + lv[1] * left)
    camera.pose.position[2] += cfg.delta * lv[2]
    lim = cfg.half + cfg.flight_margin
    camera.pose.position[0] = float(np.clip(camera.pose.position[0], -lim, lim))
    camera.pose.position[1] = float(np.clip(camera.pose.position[1], -lim, lim))
    camera.pose.position[2] = float(np.clip(camera.pose.position[2], *cfg.z_range))
    if cfg.pitch_yaw_mode == "learned":
        camera.pose.pitch = float(np.clip(camera.pose.pitch + lv[3] * cfg.eta,
                                          -math.pi / 2, math.pi / 2))
        camera.pose.yaw = wrap_angle(camera.pose.yaw + lv[4] * cfg.eta)


def look_at_controller(camera, point, cfg):
    """Rule-based pitch/yaw step toward a world point, rate-limited to eta."""
    rel = np.asarray(point, dtype=float) - camera.pose.position
    desired_yaw = math.atan2(rel[1], rel[0])
    horiz = math.hypot(rel[0], rel[1])
    desired_pitch = math.atan2(rel[2], max(horiz, 1e-9))
    dyaw = wrap_angle(desired_yaw - camera.pose.yaw)
    dpitch = desired_pitch - camera.pose.pitch
    camera.pose.yaw = wrap_angle(camera.pose.yaw + float(np.clip(dyaw, -cfg.eta, cfg.eta)))
    camera.pose.pitch = float(np.clip(camera.pose.pitch + float(np.clip(dpitch, -cfg.eta, cfg.eta)),
                                      -math.pi / 2, math.pi / 2))


def step_world(state, actions):
    """One Dec-POMDP transition: camera kinematics then human steering."""
    if len(actions) != len(state.cameras):
        raise ActionCountMismatch(f"{len(actions)} actions for {len(state.cameras)} cameras")
    for camera, action in zip(state.cameras, actions):
        apply_camera_action(camera, action, state.config)
    step_humans(state)
    state.step_index += 1
    return state
