"""Episode environment tying world, perception, reward, and safety together.

Step pipeline: rule-based pitch/yaw toward the last target estimate,
translation from the policy (optionally OCA-filtered or continuous),
world transition, fresh detection broadcast + full-team reconstruction,
then reward (shared team reward or per-camera CTCR).
"""

import numpy as np

from .geometry import mpjpe
from .perception import (assemble_observation, broadcast, observation_length,
                         reconstruct)
from .reward import coalition_table, ctcr, team_reward
from .safety import (joint_translation_mask, min_camera_human_distance,
                     oca_filter)
from .world import (AgentAction, look_at_controller, make_world, skeleton_of,
                    step_world)

TARGET_ID = 0


class TrackingEnv:
    def __init__(self, run_cfg, seed):
        self.cfg = run_cfg
        self.seed = seed
        self.episode = 0
        self.world = None
        self.noise_rng = None
        self.tracker = {}           # human id -> last reconstructed skeleton
        self.recon = None
        self.packets = None
        self.ema_state = None

    # -- perception snapshot -------------------------------------------------

    def _perceive(self):
        pc = self.cfg.perception
        self.packets = broadcast(self.world, pc.noise_sigma, self.noise_rng,
                                 pc.min_visible_joints)
        subset = frozenset(c.id for c in self.world.cameras)
        self.recon = reconstruct(self.packets, subset, method=pc.triangulation,
                                 last_estimates=self.tracker,
                                 rng=np.random.default_rng(self.world.step_index),
                                 ransac_threshold=pc.ransac_threshold,
                                 ransac_iterations=pc.ransac_iterations)
        for hid, skel in self.recon.skeletons.items():
            self.tracker[hid] = skel.copy()

    def estimated_target_position(self):
        if self.recon is not None and self.recon.reconstructed.get(TARGET_ID):
            return self.recon.positions[TARGET_ID]
        if TARGET_ID in self.tracker:
            return np.median(self.tracker[TARGET_ID], axis=0)
        return np.array([0.0, 0.0, 1.0])

    def _estimated_pd_xy(self):
        pts = [self.recon.positions[h] for h in self.recon.positions if h != TARGET_ID]
        if not pts:
            return np.zeros(2), False
        return np.mean(pts, axis=0)[:2], True

    # -- public API ----------------------------------------------------------

    def observations(self):
        pc = self.cfg.perception
        arena = self.cfg.world.arena_size
        obs = np.stack([
            assemble_observation(cam.id, self.packets, self.recon,
                                 pc.n_cam_max, pc.n_human_max, arena, TARGET_ID)
            for cam in self.world.cameras])
        tgt_xy = self.estimated_target_position()[:2] / arena
        pd_xy, has_pd = self._estimated_pd_xy()
        n = len(self.world.cameras)
        return obs, np.tile(tgt_xy, (n, 1)), np.tile(pd_xy / arena, (n, 1)), has_pd

    @property
    def obs_dim(self):
        return observation_length(self.cfg.perception.n_cam_max,
                                  self.cfg.perception.n_human_max)

    def reset(self):
        ep_seed = (self.seed * 1_000_003 + self.episode) & 0x7FFFFFFF
        self.world = make_world(self.cfg.world, ep_seed, self.cfg.n_cameras,
                                self.cfg.n_humans)
        self.noise_rng = np.random.default_rng(ep_seed ^ 0x5DEECE66D)
        self.tracker = {}
        self.ema_state = np.zeros((self.cfg.n_cameras, 3))
        self.episode += 1
        self._perceive()
        return self.observations()

    def translation_masks(self):
        """Per-camera (27,) joint safety masks; None when masking is off."""
        if self.cfg.safety.mode != "mask":
            return None
        return np.stack([joint_translation_mask(cam, self.world,
                                                self.cfg.safety.range,
                                                self.cfg.world.delta)
                         for cam in self.world.cameras])

    def step(self, levels, continuous=None, noise_rng=None):
        """Advance one timestep.

        levels: (n, F) integer action levels; the first three components are
        the egocentric translation.  `continuous`: optional (n, 3) meter
        offsets that replace the discretized translation (used by the
        EMA/noise robustness harness).
        """
        cfg = self.cfg
        aim = self.estimated_target_position()
        learned_rot = cfg.world.pitch_yaw_mode == "learned"
        actions = []
        for i, cam in enumerate(self.world.cameras):
            lv = np.zeros(5, dtype=int)
            lv[:3] = levels[i][:3]
            if learned_rot and levels.shape[1] >= 5:
                lv[3:] = levels[i][3:5]
            action = AgentAction(lv)
            if cfg.safety.mode == "oca":
                action = oca_filter(action, cam, self.world, cfg.safety.range)
            actions.append(action)
            if not learned_rot:
                look_at_controller(cam, aim, cfg.world)
        if continuous is not None:
            self._apply_continuous(continuous)
            null = [AgentAction(np.zeros(5, dtype=int)) for _ in actions]
            step_world(self.world, null)
        else:
            step_world(self.world, actions)
        self._perceive()
        truth = skeleton_of(self.world.target())
        team_r = team_reward(frozenset(c.id for c in self.world.cameras),
                             self.packets, truth, TARGET_ID)
        if cfg.train.reward_mode == "ctcr":
            table = coalition_table(self.packets, truth, TARGET_ID)
            rewards = ctcr(table)
        else:
            rewards = np.full(len(self.world.cameras), team_r)
        # stale tracker estimate counts when this frame failed to reconstruct
        est = self.recon.skeletons.get(TARGET_ID, self.tracker.get(TARGET_ID))
        frame_mpjpe = mpjpe(est, truth) if est is not None else float("nan")
        done = self.world.step_index >= cfg.world.episode_length
        info = {
            "team_reward": team_r,
            "mpjpe": frame_mpjpe,
            "min_cam_human_dist": min_camera_human_distance(self.world),
            "gt_tgt_xy": self.world.target().position[:2].copy(),
            "gt_pd_xy": self._gt_pd_xy(),
            "cam_xy": np.stack([c.pose.position[:2] for c in self.world.cameras]),
            "cam_poses": [(c.pose.position.copy(), c.pose.pitch, c.pose.yaw)
                          for c in self.world.cameras],
        }
        return rewards, done, info

    def _gt_pd_xy(self):
        pds = [h.position[:2] for h in self.world.humans if not h.is_target]
        return np.mean(pds, axis=0) if pds else np.zeros(2)

    def _apply_continuous(self, offsets):
        import math
        for cam, off in zip(self.world.cameras, offsets):
            yaw = cam.pose.yaw
            fwd = np.array([math.cos(yaw), math.sin(yaw)])
            left = np.array([-math.sin(yaw), math.cos(yaw)])
            cam.pose.position[:2] += off[0] * fwd + off[1] * left
            cam.pose.position[2] += off[2]
            lim = self.cfg.world.half + self.cfg.world.flight_margin
            cam.pose.position[0] = float(np.clip(cam.pose.position[0], -lim, lim))
            cam.pose.position[1] = float(np.clip(cam.pose.position[1], -lim, lim))
            cam.pose.position[2] = float(np.clip(cam.pose.position[2], *self.cfg.world.z_range))
