"""Synthetic perception: noisy 2D detection, broadcast packets, multi-view
reconstruction, and observation-vector assembly.

Detections carry ground-truth human ids (oracle re-identification); the
only corruptions are geometric occlusion, frustum exits, and i.i.d.
Gaussian pixel noise.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .accel import project_points, triangulate_batch
from .geometry import Detection2D, NUM_JOINTS, triangulate_ransac
from .world import occlusion_mask, skeleton_of

CAM_SLOT = 9
HUMAN_SLOT = 18

# indices into the COCO joint list used for orientation recovery
_LSHO, _RSHO, _LHIP, _RHIP = 5, 6, 11, 12


@dataclass
class AgentPacket:
    """One agent's per-step broadcast: own pose plus its 2D detections."""
    sender_id: int
    pose: "CameraPose"
    intrinsics: "CameraIntrinsics"
    detections: list


@dataclass
class ReconstructionResult:
    subset: frozenset
    skeletons: dict = field(default_factory=dict)      # id -> (17,3)
    joint_valid: dict = field(default_factory=dict)    # id -> (17,) bool
    reconstructed: dict = field(default_factory=dict)  # id -> bool
    positions: dict = field(default_factory=dict)      # id -> (3,)
    yaws: dict = field(default_factory=dict)           # id -> float


def detect(camera, world, noise_sigma, rng, min_visible_joints=4):
    """Project every human's joints, drop occluded ones, add pixel noise.

    Humans with fewer than `min_visible_joints` surviving joints produce no
    detection.  Noise draws are made for all 17 joints regardless of
    visibility so the rng stream does not depend on the occlusion pattern.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    intr = camera.intrinsics
    rot = camera.pose.rotation()
    detections = []
    for human in world.humans:
        joints = skeleton_of(human)
        uv, in_view = project_points(camera.pose.position, rot, intr.focal,
                                     intr.cx, intr.cy, float(intr.width),
                                     float(intr.height), joints)
        noise = rng.normal(0.0, 1.0, size=(NUM_JOINTS, 2))
        blocked = occlusion_mask(camera, joints, world.humans, human.id)
        visible = np.asarray(in_view, dtype=bool) & ~blocked
        if int(visible.sum()) < min_visible_joints:
            continue
        kps = np.array(uv, dtype=float)
        kps[visible] += noise_sigma * noise[visible]
        kps[~visible] = 0.0
        vis_kps = kps[visible]
        lo = vis_kps.min(axis=0)
        hi = vis_kps.max(axis=0)
        bbox = np.array([
            (lo[0] + hi[0]) / 2.0 / intr.width,
            (lo[1] + hi[1]) / 2.0 / intr.height,
            (hi[0] - lo[0]) / intr.width,
            (hi[1] - lo[1]) / intr.height,
        ])
        detections.append(Detection2D(human.id, kps, visible, bbox, 1.0))
    return detections


def broadcast(world, noise_sigma, rng, min_visible_joints=4):
    """All agents detect and broadcast; returns one packet per camera."""
    return [AgentPacket(cam.id, cam.pose, cam.intrinsics,
                        detect(cam, world, noise_sigma, rng, min_visible_joints))
            for cam in world.cameras]


def _pose_yaw_from_skeleton(joints):
    shoulder = joints[_LSHO] - joints[_RSHO]
    spine = (joints[_LSHO] + joints[_RSHO]) / 2.0 - (joints[_LHIP] + joints[_RHIP]) / 2.0
    fwd = np.cross(shoulder, spine)
    return math.atan2(fwd[1], fwd[0])


def reconstruct(packets, subset, method="dlt", last_estimates=None, rng=None,
                ransac_threshold=3.0, ransac_iterations=50):
    """Triangulate every detected human, joint by joint, from a camera subset.

    A human is reconstructed when at least one joint is seen by >= 2 subset
    cameras.  Joints seen by fewer views are filled from `last_estimates`
    (the tracker's previous skeleton for that human) when available, else
    from the median of this frame's triangulated joints, and flagged invalid.
    """
    subset = frozenset(subset)
    senders = {p.sender_id for p in packets}
    if not subset <= senders:
        raise ValueError("subset must be a subset of packet senders")
    members = [p for p in packets if p.sender_id in subset]
    result = ReconstructionResult(subset=subset)
    human_ids = sorted({d.human_id for p in packets for d in p.detections})
    if not members:
        for hid in human_ids:
            result.reconstructed[hid] = False
        return result
    centers = np.stack([p.pose.position for p in members])
    rots = np.stack([p.pose.rotation() for p in members])
    for hid in human_ids:
        xy = np.zeros((len(members), NUM_JOINTS, 2))
        vis = np.zeros((len(members), NUM_JOINTS), dtype=np.uint8)
        for v, p in enumerate(members):
            det = next((d for d in p.detections if d.human_id == hid), None)
            if det is None:
                continue
            intr = p.intrinsics
            xy[v, :, 0] = (det.keypoints[:, 0] - intr.cx) / intr.focal
            xy[v, :, 1] = (det.keypoints[:, 1] - intr.cy) / intr.focal
            vis[v] = det.visible
        if method == "ransac":
            pts, ok = _reconstruct_ransac(members, xy, vis, ransac_threshold,
                                          ransac_iterations, rng)
        else:
            pts, ok = triangulate_batch(centers, rots, xy, vis)
        ok = np.asarray(ok, dtype=bool)
        pts = np.array(pts, dtype=float)
        if not ok.any():
            result.reconstructed[hid] = False
            continue
        fallback = (last_estimates or {}).get(hid)
        if fallback is None:
            fill = np.median(pts[ok], axis=0)
            pts[~ok] = fill
        else:
            pts[~ok] = fallback[~ok]
        result.reconstructed[hid] = True
        result.skeletons[hid] = pts
        result.joint_valid[hid] = ok
        result.positions[hid] = np.median(pts[ok], axis=0)
        result.yaws[hid] = _pose_yaw_from_skeleton(pts)
    return result


def _reconstruct_ransac(members, xy, vis, threshold, iterations, rng):
    rng = np.random.default_rng(0) if rng is None else rng
    pts = np.zeros((NUM_JOINTS, 3))
    ok = np.zeros(NUM_JOINTS, dtype=bool)
    for j in range(NUM_JOINTS):
        views = []
        for v, p in enumerate(members):
            if vis[v, j]:
                intr = p.intrinsics
                uv = (xy[v, j, 0] * intr.focal + intr.cx, xy[v, j, 1] * intr.focal + intr.cy)
                views.append((p.pose, intr, uv))
        if len(views) < 2:
            continue
        pts[j] = triangulate_ransac(views, threshold, iterations, rng)
        ok[j] = True
    return pts, ok


def observation_length(n_cam_max, n_human_max):
    return n_cam_max * CAM_SLOT + n_human_max * HUMAN_SLOT


def assemble_observation(agent_id, packets, recon, n_cam_max, n_human_max,
                         arena_size=10.0, target_id=0):
    """Flat per-agent feature vector.

    Camera slot (9 floats): [x, y, z] / arena, sin/cos yaw, sin/cos pitch,
    is_self, valid.  Slot 0 is always the observing agent; peers follow in
    id order.  Human slot (18 floats): bbox (cx, cy, w, h) from this agent's
    own detection, camera-local position / arena, world position / arena,
    sin/cos local yaw, sin/cos world yaw, visible flag, is_target flag,
    visible-joint fraction, detection confidence.  The target occupies the
    first human slot; pedestrians follow in id order.  Absent entities are
    zero-padded.
    """
    obs = np.zeros(observation_length(n_cam_max, n_human_max))
    own = next(p for p in packets if p.sender_id == agent_id)
    ordered = [own] + sorted((p for p in packets if p.sender_id != agent_id),
                             key=lambda p: p.sender_id)
    scale = arena_size
    for slot, p in enumerate(ordered[:n_cam_max]):
        base = slot * CAM_SLOT
        obs[base:base + 3] = p.pose.position / scale
        obs[base + 3] = math.sin(p.pose.yaw)
        obs[base + 4] = math.cos(p.pose.yaw)
        obs[base + 5] = math.sin(p.pose.pitch)
        obs[base + 6] = math.cos(p.pose.pitch)
        obs[base + 7] = 1.0 if p.sender_id == agent_id else 0.0
        obs[base + 8] = 1.0
    cam_rot = own.pose.rotation()
    own_dets = {d.human_id: d for d in own.detections}
    human_ids = sorted(recon.reconstructed.keys() | own_dets.keys())
    ordered_ids = ([target_id] if target_id in human_ids else []) + \
        [h for h in human_ids if h != target_id]
    base0 = n_cam_max * CAM_SLOT
    for slot, hid in enumerate(ordered_ids[:n_human_max]):
        base = base0 + slot * HUMAN_SLOT
        det = own_dets.get(hid)
        if det is not None:
            obs[base:base + 4] = det.bbox
            obs[base + 14] = 1.0
            obs[base + 16] = float(det.visible.sum()) / NUM_JOINTS
            obs[base + 17] = det.confidence
        if recon.reconstructed.get(hid):
            pos = recon.positions[hid]
            yaw = recon.yaws[hid]
            local = cam_rot @ (pos - own.pose.position)
            obs[base + 4:base + 7] = local / scale
            obs[base + 7:base + 10] = pos / scale
            local_yaw = yaw - own.pose.yaw
            obs[base + 10] = math.sin(local_yaw)
            obs[base + 11] = math.cos(local_yaw)
            obs[base + 12] = math.sin(yaw)
            obs[base + 13] = math.cos(yaw)
        obs[base + 15] = 1.0 if hid == target_id else 0.0
    return obs
