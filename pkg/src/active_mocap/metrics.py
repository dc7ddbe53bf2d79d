"""Evaluation metrics, behavior-mode statistics, and the episode evaluator."""

import json
import math
import os

import numpy as np

from .accel import rotation_world_to_cam
from .baselines import TemporalSmoother, fixed_formation, rule_based_formation
from .env import TARGET_ID, TrackingEnv
from .safety import action_noise, ema_smooth


class EmptySeries(Exception):
    pass


class ConfigMismatch(Exception):
    pass


def success_rate(mpjpe_series, tau):
    """Fraction of frames with MPJPE <= tau (millimeters)."""
    series = np.asarray(mpjpe_series, dtype=float)
    if series.size == 0:
        raise EmptySeries("no frames")
    if tau <= 0:
        raise ValueError("tau must be > 0")
    return float(np.count_nonzero(series <= tau)) / series.size


def _optical_axis(pitch, yaw):
    return rotation_world_to_cam(yaw, pitch)[2]


def behavior_stats(frames, distance_edges=None, pitch_edges=None, angle_edges=None):
    """Three per-run histograms from a trajectory log.

    Each frame supplies camera poses [(position, pitch, yaw), ...] and the
    target position.  Histograms (one sample per frame): mean camera-to-
    target distance, mean camera pitch (degrees), and the per-frame mean of
    each camera's minimum pairwise optical-axis angle (degrees).
    """
    distance_edges = np.linspace(0, 12, 25) if distance_edges is None else np.asarray(distance_edges)
    pitch_edges = np.linspace(-90, 90, 37) if pitch_edges is None else np.asarray(pitch_edges)
    angle_edges = np.linspace(0, 180, 37) if angle_edges is None else np.asarray(angle_edges)
    dists, pitches, angles = [], [], []
    for frame in frames:
        cams = frame["cam_poses"]
        target = np.asarray(frame["target_position"], dtype=float)
        positions = np.stack([np.asarray(c[0], dtype=float) for c in cams])
        dists.append(float(np.mean(np.linalg.norm(positions - target[None, :], axis=1))))
        pitches.append(float(np.mean([math.degrees(c[1]) for c in cams])))
        axes = [_optical_axis(c[1], c[2]) for c in cams]
        mins = []
        for i in range(len(axes)):
            pair = [math.degrees(math.acos(float(np.clip(np.dot(axes[i], axes[j]), -1, 1))))
                    for j in range(len(axes)) if j != i]
            mins.append(min(pair) if pair else 0.0)
        angles.append(float(np.mean(mins)))

    def hist(values, edges):
        counts, _ = np.histogram(values, bins=edges)
        # out-of-range samples are folded into the boundary bins so mass
        # always equals the frame count
        vals = np.asarray(values)
        counts[0] += int(np.count_nonzero(vals < edges[0]))
        counts[-1] += int(np.count_nonzero(vals >= edges[-1]))
        return {"edges": edges.tolist(), "counts": counts.tolist()}

    return {
        "camera_target_distance": hist(dists, distance_edges),
        "camera_pitch_deg": hist(pitches, pitch_edges),
        "min_camera_angle_deg": hist(angles, angle_edges),
    }


def _clean(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


def evaluate(run_cfg, episodes, tau=200.0, policy="fixed", checkpoint=None,
             seed=0, out_dir=None, smoothing=False, smoothing_alpha=0.3,
             ema_eta=None, noise=False, collect_min_dist=True, greedy=True):
    """Run episodes with the chosen policy and aggregate metrics.

    policy: 'fixed' (static formation, cameras never move), 'rulebased'
    (scripted triangle tracker), 'learned' (checkpoint policy), or 'random'
    (uniform random translation levels).  Writes frames.jsonl + summary.json
    when out_dir is given.  EMA smoothing (ema_eta) and multiplicative noise
    apply to the continuous translation command of moving policies.
    """
    from .marl import Policy  # local import to avoid a cycle

    env = TrackingEnv(run_cfg, seed)
    learned = None
    if policy == "learned":
        if checkpoint is None:
            raise ConfigMismatch("learned policy requires a checkpoint")
        from .nets import load_checkpoint
        params, _ = load_checkpoint(checkpoint)
        learned = Policy(run_cfg, env.obs_dim, params=params)
        if learned.cfg.obs_dim != env.obs_dim:
            raise ConfigMismatch("checkpoint observation size does not match env")
    rng = np.random.default_rng(seed ^ 0xA5A5A5)
    n = run_cfg.n_cameras
    frames = []
    mpjpes = []
    min_dists = []
    ema_state = np.zeros((n, 3))
    for ep in range(episodes):
        obs, p_tgt, p_pd, _ = env.reset()
        smoother = TemporalSmoother(smoothing_alpha) if smoothing else None
        if policy == "fixed":
            for cam, pose in zip(env.world.cameras, fixed_formation(n, run_cfg.world.arena_size)):
                cam.pose = pose.copy()
            env._perceive()
            obs, p_tgt, p_pd, _ = env.observations()
        hidden = learned.initial_hidden(n) if learned else None
        ema_state[:] = 0.0
        done = False
        while not done:
            if policy == "fixed":
                levels = np.zeros((n, 3), dtype=int)
            elif policy == "rulebased":
                acts = rule_based_formation(env.world.cameras,
                                            env.estimated_target_position(),
                                            run_cfg.world.delta)
                levels = np.stack([a.levels[:3] for a in acts])
            elif policy == "random":
                levels = rng.integers(-1, 2, size=(n, 3))
            else:
                masks = env.translation_masks()
                levels, _, _, hidden, _ = learned.act(obs, hidden, p_tgt, masks,
                                                      rng, greedy=greedy)
            continuous = None
            if policy != "fixed" and (ema_eta is not None or noise):
                cmd = levels[:, :3].astype(float) * run_cfg.world.delta
                if ema_eta is not None:
                    ema_state = ema_smooth(ema_state, cmd, ema_eta)
                    cmd = ema_state.copy()
                if noise:
                    cmd = action_noise(cmd, rng, run_cfg.safety.noise_lo,
                                       run_cfg.safety.noise_hi)
                continuous = cmd
            rewards, done, info = env.step(levels, continuous=continuous,
                                           noise_rng=rng)
            if policy == "fixed":
                # static baseline: undo any rule-based rotation drift
                for cam, pose in zip(env.world.cameras, fixed_formation(n, run_cfg.world.arena_size)):
                    cam.pose = pose.copy()
            frame_mpjpe = info["mpjpe"]
            if smoother is not None and env.recon.reconstructed.get(TARGET_ID):
                from .geometry import mpjpe as _mpjpe
                from .world import skeleton_of
                sm = smoother.update(env.recon.skeletons[TARGET_ID],
                                     env.recon.joint_valid[TARGET_ID])
                frame_mpjpe = _mpjpe(sm, skeleton_of(env.world.target()))
            mpjpes.append(frame_mpjpe)
            if collect_min_dist:
                min_dists.append(info["min_cam_human_dist"])
            frames.append({
                "episode": ep,
                "step": env.world.step_index,
                "mpjpe": _clean(frame_mpjpe),
                "team_reward": info["team_reward"],
                "rewards": [float(r) for r in rewards],
                "cam_poses": [[list(map(float, p)), float(pi), float(ya)]
                              for p, pi, ya in info["cam_poses"]],
                "target_position": list(map(float, env.world.target().position)),
                "human_positions": [list(map(float, h.position)) for h in env.world.humans],
                "min_cam_human_dist": info["min_cam_human_dist"],
            })
    series = np.asarray(mpjpes, dtype=float)
    finite = series[np.isfinite(series)]
    # frames that never produced an estimate count as failures for the rate
    rate_series = np.where(np.isfinite(series), series, np.inf)
    summary = {
        "policy": policy,
        "episodes": episodes,
        "frames": len(series),
        "tau_mm": tau,
        "mean_mpjpe_mm": float(finite.mean()) if finite.size else None,
        "median_mpjpe_mm": float(np.median(finite)) if finite.size else None,
        "success_rate": float(np.count_nonzero(rate_series <= tau)) / len(series),
        "min_cam_human_dist_min": float(np.min(min_dists)) if min_dists else None,
        "min_cam_human_dist_mean": float(np.mean(min_dists)) if min_dists else None,
        "seed": seed,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "frames.jsonl"), "w") as fh:
            for row in frames:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    return summary, frames
