"""Camera models, projection, triangulation, and pose-error primitives."""

import math
from dataclasses import dataclass, field

import numpy as np

from .accel import project_points, rotation_world_to_cam, triangulate_batch

NUM_JOINTS = 17

# COCO keypoint order; skeletons are (17, 3) float arrays in world meters.
JOINT_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)


class DegenerateGeometry(Exception):
    """Triangulation impossible: fewer than two views, or all rays parallel."""


def wrap_angle(a):
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass
class CameraPose:
    """Position plus pitch/yaw orientation (roll fixed at zero)."""
    position: np.ndarray
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.position.shape != (3,):
            raise ValueError("position must be a 3-vector")
        if not -math.pi / 2 <= self.pitch <= math.pi / 2:
            raise ValueError(f"pitch {self.pitch} outside [-pi/2, pi/2]")
        self.yaw = wrap_angle(self.yaw)

    def rotation(self):
        """World->camera rotation; rows (image-right, image-down, forward)."""
        return rotation_world_to_cam(self.yaw, self.pitch)

    def forward(self):
        return self.rotation()[2]

    def copy(self):
        return CameraPose(self.position.copy(), self.pitch, self.yaw)


@dataclass
class CameraIntrinsics:
    """Pinhole intrinsics with square pixels (fx == fy)."""
    focal: float = 320.0
    width: int = 640
    height: int = 480
    cx: float = None
    cy: float = None

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        if self.cx is None:
            self.cx = self.width / 2.0
        if self.cy is None:
            self.cy = self.height / 2.0
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point outside image")


@dataclass
class Detection2D:
    """Per-human 2D keypoints with visibility, plus a normalized bbox."""
    human_id: int
    keypoints: np.ndarray          # (17, 2) pixels
    visible: np.ndarray            # (17,) bool
    bbox: np.ndarray = field(default=None)  # (cx, cy, w, h) in [0, 1]
    confidence: float = 1.0


def project(pose, intr, point):
    """Project a world point; None when behind the camera or off-image."""
    pt = np.asarray(point, dtype=float).reshape(1, 3)
    if not np.all(np.isfinite(pt)):
        raise ValueError("point must be finite")
    uv, valid = project_points(
        pose.position, pose.rotation(), intr.focal, intr.cx, intr.cy,
        float(intr.width), float(intr.height), pt)
    if not valid[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def _views_to_arrays(views):
    centers = np.stack([p.position for p, _, _ in views])
    rots = np.stack([p.rotation() for p, _, _ in views])
    xy = np.zeros((len(views), 1, 2))
    for i, (_, intr, uv) in enumerate(views):
        xy[i, 0, 0] = (uv[0] - intr.cx) / intr.focal
        xy[i, 0, 1] = (uv[1] - intr.cy) / intr.focal
    return centers, rots, xy


def _ray_directions(rots, xy):
    dirs = np.zeros((len(rots), 3))
    for i in range(len(rots)):
        d = rots[i].T @ np.array([xy[i, 0, 0], xy[i, 0, 1], 1.0])
        dirs[i] = d / np.linalg.norm(d)
    return dirs


def triangulate_dlt(views, parallel_tol=1e-6):
    """Linear least-squares triangulation of one point from >=2 views.

    Each view is (CameraPose, CameraIntrinsics, (u, v)).  Pixel
    coordinates are pre-conditioned to normalized camera coordinates
    (centered on the principal point, scaled by 1/focal) before solving,
    so the normal equations stay well-scaled.
    """
    if len(views) < 2:
        raise DegenerateGeometry(f"need >= 2 views, got {len(views)}")
    centers, rots, xy = _views_to_arrays(views)
    dirs = _ray_directions(rots, xy)
    max_angle = 0.0
    for i in range(len(dirs)):
        for j in range(i + 1, len(dirs)):
            d = float(np.clip(np.dot(dirs[i], dirs[j]), -1.0, 1.0))
            max_angle = max(max_angle, math.acos(d))
    if max_angle < parallel_tol:
        raise DegenerateGeometry("all viewing rays parallel within tolerance")
    vis = np.ones((len(views), 1), dtype=np.uint8)
    pts, ok = triangulate_batch(centers, rots, xy, vis)
    if not ok[0]:
        raise DegenerateGeometry("normal equations singular")
    return pts[0]


def reprojection_error(pose, intr, point, uv):
    """Pixel distance between the observed (u, v) and the reprojected point."""
    proj = project(pose, intr, point)
    if proj is None:
        return math.inf
    return math.hypot(proj[0] - uv[0], proj[1] - uv[1])


def triangulate_ransac(views, inlier_threshold=3.0, iterations=50, rng=None):
    """RANSAC over 2-view minimal sets, refit DLT on the best inlier set.

    Deterministic for a given seeded generator.  With only 2 views this
    degenerates to plain DLT (nothing can be rejected).
    """
    if len(views) < 2:
        raise DegenerateGeometry(f"need >= 2 views, got {len(views)}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if len(views) == 2:
        return triangulate_dlt(views)
    rng = np.random.default_rng(0) if rng is None else rng
    best_inliers = None
    n = len(views)
    for _ in range(iterations):
        i, j = rng.choice(n, size=2, replace=False)
        try:
            cand = triangulate_dlt([views[i], views[j]])
        except DegenerateGeometry:
            continue
        inliers = [k for k in range(n)
                   if reprojection_error(views[k][0], views[k][1], cand, views[k][2]) < inlier_threshold]
        if best_inliers is None or len(inliers) > len(best_inliers):
            best_inliers = inliers
    if best_inliers is None or len(best_inliers) < 2:
        # no consensus; fall back to using everything
        return triangulate_dlt(views)
    return triangulate_dlt([views[k] for k in best_inliers])


def mpjpe(estimate, truth):
    """Mean per-joint position error in millimeters."""
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != (NUM_JOINTS, 3) or tru.shape != (NUM_JOINTS, 3):
        raise ValueError("skeletons must be (17, 3)")
    return float(np.mean(np.linalg.norm(est - tru, axis=1))) * 1000.0


def geman_mcclure(x, c=50.0):
    """Bounded robust penalty 2(x/c)^2 / ((x/c)^2 + 4), range [0, 2)."""
    if x < 0:
        raise ValueError("x must be >= 0")
    if c <= 0:
        raise ValueError("c must be > 0")
    q = (x / c) ** 2
    return 2.0 * q / (q + 4.0)
