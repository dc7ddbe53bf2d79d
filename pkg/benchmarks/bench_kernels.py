"""Compare the compiled and pure-numpy kernel backends.

Run twice to see both sides:

    ACTIVE_MOCAP_BACKEND=numba python3 benchmarks/bench_kernels.py
    ACTIVE_MOCAP_BACKEND=numpy python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from active_mocap import accel
from active_mocap.geometry import CameraIntrinsics, CameraPose


def timed(fn, *args, repeats=30):
    fn(*args)  # warm-up (JIT compile on the compiled backend)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    intr = CameraIntrinsics()
    pose = CameraPose(np.array([0.0, 0.0, 2.0]), pitch=-0.3, yaw=0.5)
    rot = pose.rotation()
    pts = rng.uniform(-5, 5, size=(20_000, 3))

    t = timed(accel.project_points, pose.position, rot, intr.focal,
              intr.cx, intr.cy, intr.width, intr.height, pts)
    print(f"[{accel.BACKEND}] project_points 20k pts      {t * 1e3:8.3f} ms")

    joints = rng.uniform(-3, 3, size=(5000, 3))
    axis_a = rng.uniform(-3, 3, size=(6, 3))
    axis_b = axis_a + np.array([0, 0, 1.7])
    radii = np.full(6, 0.3)
    t = timed(accel.segment_capsule_blocked, pose.position, joints,
              axis_a, axis_b, radii)
    print(f"[{accel.BACKEND}] occlusion 5k rays x 6 caps  {t * 1e3:8.3f} ms")

    n_views, n_pts = 4, 2000
    centers = rng.uniform(-5, 5, size=(n_views, 3))
    rots = np.stack([CameraPose(c, rng.uniform(-0.5, 0), rng.uniform(0, 6)).rotation()
                     for c in centers])
    world = rng.uniform(-2, 2, size=(n_pts, 3))
    xy = np.empty((n_views, n_pts, 2))
    for v in range(n_views):
        cam = (world - centers[v]) @ rots[v].T
        xy[v] = cam[:, :2] / cam[:, 2:3]
    vis = np.ones((n_views, n_pts), dtype=np.bool_)
    t = timed(accel.triangulate_batch, centers, rots, xy, vis)
    print(f"[{accel.BACKEND}] triangulate 2k pts, 4 views {t * 1e3:8.3f} ms")


if __name__ == "__main__":
    main()
