"""Hot numeric kernels with two interchangeable backends.

The simulator spends most of its time projecting skeleton joints,
testing camera-to-joint segments against human capsules, and
re-triangulating joints for every camera coalition.  Those loops live
here, compiled with numba by default.  Set ``ACTIVE_MOCAP_BACKEND=numpy``
to select the vectorized pure-numpy fallback (same results, no JIT
warm-up); ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

import numpy as np

BACKEND = os.environ.get("ACTIVE_MOCAP_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ValueError(f"ACTIVE_MOCAP_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")

USE_NUMBA = BACKEND == "numba"
if USE_NUMBA:
    from numba import njit


# ---------------------------------------------------------------------------
# camera rotation
# ---------------------------------------------------------------------------

def rotation_world_to_cam(yaw, pitch):
    """3x3 world->camera rotation; rows are (image-right, image-down, forward).

    Right-handed, z-up world.  Yaw rotates the forward axis from +x about
    world z, then pitch tilts it about the camera's lateral axis
    (positive pitch looks upward).
    """
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    return np.array([
        [sy, -cy, 0.0],              # image right
        [sp * cy, sp * sy, -cp],     # image down
        [cp * cy, cp * sy, sp],      # optical axis
    ])


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _project_points_np(center, rot, focal, cx, cy, width, height, pts):
    rel = pts - center[None, :]
    cam = rel @ rot.T
    z = cam[:, 2]
    in_front = z > 1e-9
    zsafe = np.where(in_front, z, 1.0)
    u = focal * cam[:, 0] / zsafe + cx
    v = focal * cam[:, 1] / zsafe + cy
    valid = in_front & (u >= 0) & (u <= width) & (v >= 0) & (v <= height)
    uv = np.stack([u, v], axis=1)
    uv[~valid] = 0.0
    return uv, valid


def _segment_capsule_blocked_np(c, joints, axis_a, axis_b, radii):
    """For each joint, does segment camera->joint pass within any capsule?

    axis_a/axis_b: (M,3) capsule axis endpoints, radii: (M,).
    Returns bool (N,).
    """
    n = joints.shape[0]
    m = axis_a.shape[0]
    if m == 0:
        return np.zeros(n, dtype=bool)
    # closest distance between segment (c, joint) and segment (a, b)
    d1 = joints - c[None, :]                      # (N,3)
    d2 = axis_b - axis_a                          # (M,3)
    r = c[None, None, :] - axis_a[None, :, :]     # (1,M,3) broadcast over N
    a = np.einsum("nd,nd->n", d1, d1)[:, None]    # (N,1)
    e = np.einsum("md,md->m", d2, d2)[None, :]    # (1,M)
    f = np.einsum("md,nmd->nm", d2, np.broadcast_to(r, (n, m, 3)))
    cdot = np.einsum("nd,md->nm", d1, r[0])       # d1 . (c - a)
    b = np.einsum("nd,md->nm", d1, d2)
    denom = a * e - b * b
    s = np.where(denom > 1e-12, np.clip((b * f - cdot * e) / np.where(denom > 1e-12, denom, 1.0), 0.0, 1.0), 0.0)
    t = np.where(e > 1e-12, (b * s + f) / np.where(e > 1e-12, e, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    s = np.where(a > 1e-12, np.clip((b * t - cdot) / np.where(a > 1e-12, a, 1.0), 0.0, 1.0), 0.0)
    p1 = c[None, None, :] + s[:, :, None] * d1[:, None, :]
    p2 = axis_a[None, :, :] + t[:, :, None] * d2[None, :, :]
    dist = np.linalg.norm(p1 - p2, axis=2)
    return np.any(dist < radii[None, :], axis=1)


def _triangulate_batch_np(centers, rots, xy, vis):
    """Per-joint linear triangulation from normalized image coordinates.

    centers: (V,3), rots: (V,3,3), xy: (V,N,2) normalized coords,
    vis: (V,N) uint8.  Returns pts (N,3), ok (N,) bool.
    Joints observed by fewer than 2 views are marked not ok.
    """
    nview, njoint = vis.shape
    pts = np.zeros((njoint, 3))
    ok = np.zeros(njoint, dtype=bool)
    r1 = rots[:, 0, :]
    r2 = rots[:, 1, :]
    r3 = rots[:, 2, :]
    # row vectors for the two constraints per view, per joint
    rows_u = r1[:, None, :] - xy[:, :, 0:1] * r3[:, None, :]   # (V,N,3)
    rows_v = r2[:, None, :] - xy[:, :, 1:2] * r3[:, None, :]
    rhs_u = np.einsum("vnd,vd->vn", rows_u, centers)
    rhs_v = np.einsum("vnd,vd->vn", rows_v, centers)
    for j in range(njoint):
        # drop invisible views entirely so a non-observing camera leaves
        # the normal equations bit-for-bit unchanged
        m = vis[:, j].astype(bool)
        if int(m.sum()) < 2:
            continue
        A = np.concatenate([rows_u[m, j, :], rows_v[m, j, :]], axis=0)
        b = np.concatenate([rhs_u[m, j], rhs_v[m, j]], axis=0)
        ata = A.T @ A
        atb = A.T @ b
        det = np.linalg.det(ata)
        if abs(det) < 1e-12:
            continue
        pts[j] = np.linalg.solve(ata, atb)
        ok[j] = True
    return pts, ok


# ---------------------------------------------------------------------------
# numba implementations (identical math, explicit loops)
# ---------------------------------------------------------------------------

if USE_NUMBA:

    @njit(cache=True)
    def _project_points_nb(center, rot, focal, cx, cy, width, height, pts):
        n = pts.shape[0]
        uv = np.zeros((n, 2))
        valid = np.zeros(n, dtype=np.bool_)
        for i in range(n):
            xr = pts[i, 0] - center[0]
            yr = pts[i, 1] - center[1]
            zr = pts[i, 2] - center[2]
            xc = rot[0, 0] * xr + rot[0, 1] * yr + rot[0, 2] * zr
            yc = rot[1, 0] * xr + rot[1, 1] * yr + rot[1, 2] * zr
            zc = rot[2, 0] * xr + rot[2, 1] * yr + rot[2, 2] * zr
            if zc <= 1e-9:
                continue
            u = focal * xc / zc + cx
            v = focal * yc / zc + cy
            if 0.0 <= u <= width and 0.0 <= v <= height:
                uv[i, 0] = u
                uv[i, 1] = v
                valid[i] = True
        return uv, valid

    @njit(cache=True)
    def _segment_capsule_blocked_nb(c, joints, axis_a, axis_b, radii):
        n = joints.shape[0]
        m = axis_a.shape[0]
        out = np.zeros(n, dtype=np.bool_)
        for i in range(n):
            d1x = joints[i, 0] - c[0]
            d1y = joints[i, 1] - c[1]
            d1z = joints[i, 2] - c[2]
            a = d1x * d1x + d1y * d1y + d1z * d1z
            for k in range(m):
                d2x = axis_b[k, 0] - axis_a[k, 0]
                d2y = axis_b[k, 1] - axis_a[k, 1]
                d2z = axis_b[k, 2] - axis_a[k, 2]
                rx = c[0] - axis_a[k, 0]
                ry = c[1] - axis_a[k, 1]
                rz = c[2] - axis_a[k, 2]
                e = d2x * d2x + d2y * d2y + d2z * d2z
                f = d2x * rx + d2y * ry + d2z * rz
                cc = d1x * rx + d1y * ry + d1z * rz
                b = d1x * d2x + d1y * d2y + d1z * d2z
                denom = a * e - b * b
                if denom > 1e-12:
                    s = (b * f - cc * e) / denom
                    if s < 0.0:
                        s = 0.0
                    elif s > 1.0:
                        s = 1.0
                else:
                    s = 0.0
                if e > 1e-12:
                    t = (b * s + f) / e
                else:
                    t = 0.0
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
                if a > 1e-12:
                    s = (b * t - cc) / a
                    if s < 0.0:
                        s = 0.0
                    elif s > 1.0:
                        s = 1.0
                else:
                    s = 0.0
                px = c[0] + s * d1x - (axis_a[k, 0] + t * d2x)
                py = c[1] + s * d1y - (axis_a[k, 1] + t * d2y)
                pz = c[2] + s * d1z - (axis_a[k, 2] + t * d2z)
                if px * px + py * py + pz * pz < radii[k] * radii[k]:
                    out[i] = True
                    break
        return out

    @njit(cache=True)
    def _triangulate_batch_nb(centers, rots, xy, vis):
        nview = vis.shape[0]
        njoint = vis.shape[1]
        pts = np.zeros((njoint, 3))
        ok = np.zeros(njoint, dtype=np.bool_)
        for j in range(njoint):
            nv = 0
            for v in range(nview):
                nv += vis[v, j]
            if nv < 2:
                continue
            ata = np.zeros((3, 3))
            atb = np.zeros(3)
            for v in range(nview):
                if not vis[v, j]:
                    continue
                for which in range(2):
                    rowx = rots[v, which, 0] - xy[v, j, which] * rots[v, 2, 0]
                    rowy = rots[v, which, 1] - xy[v, j, which] * rots[v, 2, 1]
                    rowz = rots[v, which, 2] - xy[v, j, which] * rots[v, 2, 2]
                    rhs = rowx * centers[v, 0] + rowy * centers[v, 1] + rowz * centers[v, 2]
                    ata[0, 0] += rowx * rowx
                    ata[0, 1] += rowx * rowy
                    ata[0, 2] += rowx * rowz
                    ata[1, 0] += rowy * rowx
                    ata[1, 1] += rowy * rowy
                    ata[1, 2] += rowy * rowz
                    ata[2, 0] += rowz * rowx
                    ata[2, 1] += rowz * rowy
                    ata[2, 2] += rowz * rowz
                    atb[0] += rowx * rhs
                    atb[1] += rowy * rhs
                    atb[2] += rowz * rhs
            det = (ata[0, 0] * (ata[1, 1] * ata[2, 2] - ata[1, 2] * ata[2, 1])
                   - ata[0, 1] * (ata[1, 0] * ata[2, 2] - ata[1, 2] * ata[2, 0])
                   + ata[0, 2] * (ata[1, 0] * ata[2, 1] - ata[1, 1] * ata[2, 0]))
            if abs(det) < 1e-12:
                continue
            pts[j] = np.linalg.solve(ata, atb)
            ok[j] = True
        return pts, ok

    project_points = _project_points_nb
    segment_capsule_blocked = _segment_capsule_blocked_nb
    triangulate_batch = _triangulate_batch_nb
else:
    project_points = _project_points_np
    segment_capsule_blocked = _segment_capsule_blocked_np
    triangulate_batch = _triangulate_batch_np
