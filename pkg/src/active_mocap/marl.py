"""MAPPO training loop: rollout collection with CTCR substitution, GAE,
PPO-clip with adaptive KL, clipped value loss, and the five world-dynamics
mixture-density losses."""

import json
import os

import numpy as np

from . import autodiff as ad
from . import nets
from .config import lr_at
from .env import TrackingEnv
from .nets import NetConfig
from .safety import JOINT_COMBOS, sample_masked_joint


class NonFiniteLoss(Exception):
    pass


class Policy:
    """Tied-weights policy shared by all camera agents."""

    def __init__(self, run_cfg, obs_dim, seed=0, params=None):
        n_factors = 5 if run_cfg.world.pitch_yaw_mode == "learned" else 3
        m = run_cfg.model
        self.cfg = NetConfig(obs_dim=obs_dim, n_agents=run_cfg.n_cameras,
                             n_action_factors=n_factors, hidden=m.hidden,
                             encoder_layers=m.encoder_layers,
                             mdn_hidden=m.mdn_hidden,
                             mdn_components=m.mdn_components)
        self.params = params if params is not None else nets.init_params(self.cfg, seed)

    def initial_hidden(self, rows):
        return np.zeros((rows, self.cfg.hidden))

    def act(self, obs, hidden, p_tgt, masks27, rng, greedy=False):
        """One batched decision for rows = n_envs * n_agents.

        Returns levels (B, F), per-row joint log-prob, per-row factor
        log-prob table (B, F, 3), new hidden (B, H), and per-env values
        (B / n_agents,).
        """
        n = self.cfg.n_agents
        z = nets.encode(self.params, self.cfg, obs)
        h_new = nets.gru_step(self.params, self.cfg, z, ad.constant(hidden))
        tgt_raw = nets.mdn_head(self.params, self.cfg, "tgt", z, h_new, p_tgt)
        logits = nets.actor_logits(self.params, self.cfg, z, h_new, tgt_raw)
        logp_all = nets.factored_log_probs(logits).data
        b = obs.shape[0]
        probs = np.exp(logp_all)
        levels = np.zeros((b, self.cfg.n_action_factors), dtype=int)
        logp = np.zeros(b)
        for i in range(b):
            if masks27 is not None:
                trans = sample_masked_joint(probs[i, :3], masks27[i], rng)
                levels[i, :3] = trans
                joint = (probs[i, 0][:, None, None] * probs[i, 1][None, :, None]
                         * probs[i, 2][None, None, :]).reshape(-1)
                logz = np.log((joint * masks27[i]).sum())
                logp[i] = sum(logp_all[i, f, trans[f] + 1] for f in range(3)) - logz
                for f in range(3, self.cfg.n_action_factors):
                    levels[i, f] = self._pick(probs[i, f], rng, greedy)
                    logp[i] += logp_all[i, f, levels[i, f] + 1]
            else:
                for f in range(self.cfg.n_action_factors):
                    levels[i, f] = self._pick(probs[i, f], rng, greedy)
                    logp[i] += logp_all[i, f, levels[i, f] + 1]
        all_z = z.data.reshape(b // n, n * self.cfg.hidden)
        values = nets.critic_value(self.params, self.cfg, ad.constant(all_z)).data
        return levels, logp, logp_all, h_new.data, values

    @staticmethod
    def _pick(p, rng, greedy):
        if greedy:
            return int(np.argmax(p)) - 1
        return int(rng.choice(3, p=p / p.sum())) - 1


def gae(rewards, values, bootstrap, gamma, lam, dones=None):
    """Generalized advantage estimation over the leading time axis.

    rewards/values: (T, ...) aligned arrays; bootstrap: value after the last
    step (same trailing shape).  dones: optional (T, ...) terminal flags.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    T = rewards.shape[0]
    if dones is None:
        dones = np.zeros_like(rewards, dtype=bool)
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap, dtype=float)
    next_adv = np.zeros_like(next_value)
    for t in range(T - 1, -1, -1):
        cont = 1.0 - dones[t].astype(float)
        delta = rewards[t] + gamma * next_value * cont - values[t]
        adv[t] = delta + gamma * lam * cont * next_adv
        next_adv = adv[t]
        next_value = values[t]
    return adv


class RolloutCollector:
    """Steps a fleet of envs, keeping hidden state across fragment boundaries."""

    def __init__(self, run_cfg, policy, seed):
        self.cfg = run_cfg
        self.policy = policy
        self.envs = [TrackingEnv(run_cfg, seed * 10_007 + e)
                     for e in range(run_cfg.train.rollouts)]
        self.rng = np.random.default_rng(seed ^ 0x9E3779B9)
        self.obs = None
        self.hidden = None
        self.frame_mpjpe = []
        self.episode_mpjpe_done = []

    def _reset_env(self, e):
        obs, p_tgt, p_pd, has_pd = self.envs[e].reset()
        return obs, p_tgt, p_pd, has_pd

    def start(self):
        n = self.cfg.n_cameras
        E = len(self.envs)
        self.obs = np.zeros((E, n, self.envs[0].obs_dim))
        self.p_tgt = np.zeros((E, n, 2))
        self.p_pd = np.zeros((E, n, 2))
        self.has_pd = np.zeros(E, dtype=bool)
        for e in range(E):
            self.obs[e], self.p_tgt[e], self.p_pd[e], self.has_pd[e] = self._reset_env(e)
        self.hidden = self.policy.initial_hidden(E * n)

    def collect(self):
        """One fragment of T steps from every env; returns the training batch."""
        cfg, policy = self.cfg, self.policy
        E, n, T = len(self.envs), cfg.n_cameras, cfg.train.fragment
        F = policy.cfg.n_action_factors
        O = self.envs[0].obs_dim
        arena = cfg.world.arena_size
        b = {
            "obs": np.zeros((E, T, n, O)), "p_tgt": np.zeros((E, T, n, 2)),
            "p_pd": np.zeros((E, T, n, 2)), "has_pd": np.zeros((E, T), dtype=bool),
            "actions": np.zeros((E, T, n, F), dtype=int),
            "old_logp": np.zeros((E, T, n)),
            "old_logp_all": np.zeros((E, T, n, F, 3)),
            "masks27": np.ones((E, T, n, 27), dtype=bool),
            "values": np.zeros((E, T)), "rewards": np.zeros((E, T, n)),
            "team_rewards": np.zeros((E, T)), "dones": np.zeros((E, T), dtype=bool),
            "h0": self.hidden.reshape(E, n, -1).copy(),
            "self_xy": np.zeros((E, T, n, 2)), "peer_xy": np.zeros((E, T, n, 2)),
            "tgt_xy": np.zeros((E, T, 2)), "pd_xy": np.zeros((E, T, 2)),
            "has_pd_next": np.zeros((E, T), dtype=bool),
        }
        use_mask = cfg.safety.mode == "mask"
        for t in range(T):
            b["obs"][:, t] = self.obs
            b["p_tgt"][:, t] = self.p_tgt
            b["p_pd"][:, t] = self.p_pd
            b["has_pd"][:, t] = self.has_pd
            masks = None
            if use_mask:
                masks = np.concatenate([env.translation_masks() for env in self.envs])
                b["masks27"][:, t] = masks.reshape(E, n, 27)
            levels, logp, logp_all, h_new, values = policy.act(
                self.obs.reshape(E * n, O), self.hidden,
                self.p_tgt.reshape(E * n, 2), masks, self.rng)
            self.hidden = h_new
            b["actions"][:, t] = levels.reshape(E, n, F)
            b["old_logp"][:, t] = logp.reshape(E, n)
            b["old_logp_all"][:, t] = logp_all.reshape(E, n, F, 3)
            b["values"][:, t] = values
            for e, env in enumerate(self.envs):
                rewards, done, info = env.step(levels.reshape(E, n, F)[e])
                b["rewards"][e, t] = rewards
                b["team_rewards"][e, t] = info["team_reward"]
                b["dones"][e, t] = done
                b["self_xy"][e, t] = info["cam_xy"] / arena
                for i in range(n):
                    peers = np.delete(info["cam_xy"], i, axis=0)
                    b["peer_xy"][e, t, i] = peers.mean(axis=0) if len(peers) else 0.0
                b["tgt_xy"][e, t] = info["gt_tgt_xy"] / arena
                b["pd_xy"][e, t] = info["gt_pd_xy"] / arena
                b["has_pd_next"][e, t] = len(env.world.humans) > 1
                if np.isfinite(info["mpjpe"]):
                    self.frame_mpjpe.append(info["mpjpe"])
                if done:
                    self.obs[e], self.p_tgt[e], self.p_pd[e], self.has_pd[e] = self._reset_env(e)
                    self.hidden.reshape(E, n, -1)[e] = 0.0
                else:
                    self.obs[e], self.p_tgt[e], self.p_pd[e], self.has_pd[e] = \
                        env.observations()
        # bootstrap values at the post-fragment state
        z = nets.encode(policy.params, policy.cfg, self.obs.reshape(E * n, O))
        h_boot = nets.gru_step(policy.params, policy.cfg, z, ad.constant(self.hidden))
        all_z = z.data.reshape(E, n * policy.cfg.hidden)
        b["bootstrap"] = nets.critic_value(policy.params, policy.cfg,
                                           ad.constant(all_z)).data
        b["bootstrap"][b["dones"][:, -1]] = 0.0
        del h_boot
        return b


def _flat_rows(arr, trailing):
    """(S, T, ...) slice -> time-major rows, keeping `trailing` trailing dims."""
    m = np.moveaxis(arr, 1, 0)
    if trailing == 0:
        return np.ascontiguousarray(m).reshape(-1)
    lead = int(np.prod(m.shape[:m.ndim - trailing]))
    return np.ascontiguousarray(m).reshape((lead,) + m.shape[m.ndim - trailing:])


def _wdl_losses(policy, batch, chunk, z_all, h_all, tgt_raw, actions_flat):
    """WDL negative log-likelihoods over a whole flattened minibatch."""
    p = policy.params
    ncfg = policy.cfg
    n = ncfg.n_agents
    onehot = nets.action_onehot(actions_flat, ncfg.n_action_factors)
    losses = {}
    for head, label in (("self", _flat_rows(batch["self_xy"][chunk], 1)),
                        ("peer", _flat_rows(batch["peer_xy"][chunk], 1))):
        raw = nets.mdn_head(p, ncfg, head, z_all, h_all, onehot)
        logw, mu, sigma = nets.mdn_split(raw, ncfg.mdn_components, 2)
        losses[head] = nets.mixture_nll(logw, mu, sigma, label).mean()
    raw = nets.mdn_head(p, ncfg, "reward", z_all, h_all, onehot)
    logw, mu, sigma = nets.mdn_split(raw, ncfg.mdn_components, 1)
    r_label = np.repeat(_flat_rows(batch["team_rewards"][chunk], 0), n).reshape(-1, 1)
    losses["reward"] = nets.mixture_nll(logw, mu, sigma, r_label).mean()
    # the target head already ran to condition the actor; reuse its output
    logw, mu, sigma = nets.mdn_split(tgt_raw, ncfg.mdn_components, 2)
    tgt_label = np.repeat(_flat_rows(batch["tgt_xy"][chunk], 1), n, axis=0)
    losses["tgt"] = nets.mixture_nll(logw, mu, sigma, tgt_label).mean()
    raw = nets.mdn_head(p, ncfg, "pd", z_all, h_all,
                        _flat_rows(batch["p_pd"][chunk], 1))
    logw, mu, sigma = nets.mdn_split(raw, ncfg.mdn_components, 2)
    pd_label = np.repeat(_flat_rows(batch["pd_xy"][chunk], 1), n, axis=0)
    nll = nets.mixture_nll(logw, mu, sigma, pd_label)
    mask = np.repeat(_flat_rows(batch["has_pd_next"][chunk], 0).astype(float), n)
    losses["pd"] = (nll * mask).sum() * (1.0 / max(mask.sum(), 1.0))
    return losses


def _masked_logp(logp_all, actions, masks27, n_factors):
    """Joint log-prob of the chosen action under the mask-renormalized policy."""
    idx = (np.asarray(actions, dtype=int) + 1)[:, :, None]
    per_factor = ad.gather(logp_all, idx, axis=2).reshape(idx.shape[0], idx.shape[1])
    logp = per_factor.sum(axis=1)
    if masks27 is None:
        return logp
    probs = ad.exp(logp_all)
    b = probs.shape[0]
    joint = (probs[:, 0].reshape(b, 3, 1, 1) * probs[:, 1].reshape(b, 1, 3, 1)
             * probs[:, 2].reshape(b, 1, 1, 3)).reshape(b, 27)
    z = (joint * np.asarray(masks27, dtype=float)).sum(axis=1)
    return logp - ad.log(z)


def train_epoch(batch, policy, opt, cfg, beta_kl, rng=None):
    """16x minibatch SGD over one collected batch; returns loss stats and the
    adapted KL coefficient."""
    tc = cfg.train
    order_rng = np.random.default_rng(0) if rng is None else rng
    E, T, n = batch["rewards"].shape
    adv = gae(np.moveaxis(batch["rewards"], 1, 0),
              np.repeat(batch["values"].T[:, :, None], n, axis=2),
              np.repeat(batch["bootstrap"][:, None], n, axis=1),
              tc.gamma, tc.gae_lambda,
              np.repeat(np.moveaxis(batch["dones"], 1, 0)[:, :, None], n, axis=2))
    adv = np.moveaxis(adv, 0, 1)                                   # (E,T,n)
    team_adv = gae(batch["team_rewards"].T, batch["values"].T, batch["bootstrap"],
                   tc.gamma, tc.gae_lambda, batch["dones"].T).T    # (E,T)
    value_targets = team_adv + batch["values"]
    adv_norm = (adv - adv.mean()) / (adv.std() + 1e-8)
    use_mask = cfg.safety.mode == "mask"
    n_mb = max(1, tc.minibatch_fraction)
    stats_acc = {}
    kls = []
    H = policy.cfg.hidden
    F = policy.cfg.n_action_factors
    for _ in range(tc.sgd_iters):
        perm = order_rng.permutation(E)
        for chunk in np.array_split(perm, n_mb):
            if len(chunk) == 0:
                continue
            S = len(chunk)
            R = S * n
            # sequential part: encoder once for the whole fragment, then the
            # recurrent unroll on (R, H) slices
            h = ad.constant(batch["h0"][chunk].reshape(R, H))
            z_all = nets.encode(policy.params, policy.cfg,
                                _flat_rows(batch["obs"][chunk], 1))
            hs = []
            for t in range(T):
                h = nets.gru_step(policy.params, policy.cfg,
                                  z_all[t * R:(t + 1) * R], h)
                hs.append(h)
                if batch["dones"][chunk, t].any():
                    keep = ~np.repeat(batch["dones"][chunk, t], n)
                    h = ad.where(keep[:, None], h, h * 0.0)
            h_all = ad.concat(hs, axis=0)
            # everything else runs once over the flattened (T*R) rows
            tgt_raw = nets.mdn_head(policy.params, policy.cfg, "tgt", z_all,
                                    h_all, _flat_rows(batch["p_tgt"][chunk], 1))
            logits = nets.actor_logits(policy.params, policy.cfg, z_all, h_all,
                                       tgt_raw)
            logp_all = nets.factored_log_probs(logits)
            actions_flat = _flat_rows(batch["actions"][chunk], 1)
            masks = _flat_rows(batch["masks27"][chunk], 1) if use_mask else None
            new_logp = _masked_logp(logp_all, actions_flat, masks, F)
            old_all = _flat_rows(batch["old_logp_all"][chunk], 2)
            kl = (ad.constant(np.exp(old_all))
                  * (ad.constant(old_all) - logp_all)).sum(axis=2).sum(axis=1).mean()
            old_logp = _flat_rows(batch["old_logp"][chunk], 0)
            a_flat = _flat_rows(adv_norm[chunk], 0)
            ratio = ad.exp(new_logp - ad.constant(old_logp))
            surr = ad.minimum(ratio * a_flat,
                              ad.clip(ratio, 1 - tc.clip, 1 + tc.clip) * a_flat)
            ppo_loss = -surr.mean()
            v_pred = nets.critic_value(policy.params, policy.cfg,
                                       z_all.reshape(T * S, n * H))
            v_old = _flat_rows(batch["values"][chunk], 0)
            v_tgt = _flat_rows(value_targets[chunk], 0)
            v_clipped = ad.constant(v_old) + ad.clip(v_pred - ad.constant(v_old),
                                                     -tc.vf_clip, tc.vf_clip)
            v_loss = ad.maximum(ad.square(v_pred - ad.constant(v_tgt)),
                                ad.square(v_clipped - ad.constant(v_tgt))).mean()
            total = ppo_loss + tc.vf_coeff * v_loss + beta_kl * kl
            if tc.entropy_coeff:
                ent = (ad.exp(logp_all) * logp_all).sum(axis=2).sum(axis=1).mean()
                total = total + tc.entropy_coeff * ent
            wdl_stats = {}
            if tc.lambda_wdl > 0:
                wl = _wdl_losses(policy, batch, chunk, z_all, h_all, tgt_raw,
                                 actions_flat)
                wdl_total = None
                for k, term in wl.items():
                    wdl_stats[f"wdl_{k}"] = float(term.data)
                    scaled = tc.wdl_coeffs[k] * term
                    wdl_total = scaled if wdl_total is None else wdl_total + scaled
                total = total + tc.lambda_wdl * wdl_total
            if not np.isfinite(total.data):
                raise NonFiniteLoss(
                    f"loss diverged: ppo={ppo_loss.data} value={v_loss.data} kl={kl.data}")
            opt.zero_grad()
            total.backward()
            opt.step()
            kls.append(float(kl.data))
            row = {"loss": float(total.data), "ppo_loss": float(ppo_loss.data),
                   "value_loss": float(v_loss.data), "kl": float(kl.data), **wdl_stats}
            for k, v in row.items():
                stats_acc.setdefault(k, []).append(v)
    mean_kl = float(np.mean(kls))
    if mean_kl > 2.0 * tc.kl_target:
        beta_kl *= 2.0
    elif mean_kl < tc.kl_target / 2.0:
        beta_kl *= 0.5
    stats = {k: float(np.mean(v)) for k, v in stats_acc.items()}
    stats["kl_mean"] = mean_kl
    return stats, beta_kl


def _json_row(d):
    def clean(v):
        if isinstance(v, float) and not np.isfinite(v):
            return None
        return v
    return json.dumps({k: clean(v) for k, v in d.items()}, sort_keys=True)


def train(run_cfg, out_dir, seed=None, log_fn=None):
    """Full training run: collect -> train_epoch loop with checkpoints and a
    JSONL metrics log.  Returns the path of the final checkpoint."""
    os.makedirs(out_dir, exist_ok=True)
    seed = run_cfg.seed if seed is None else seed
    run_cfg.seed = seed
    run_cfg.save(os.path.join(out_dir, "config.yaml"))
    tmp_env = TrackingEnv(run_cfg, seed)
    policy = Policy(run_cfg, tmp_env.obs_dim, seed=seed)
    collector = RolloutCollector(run_cfg, policy, seed)
    collector.start()
    opt = ad.Adam(policy.params, lr=lr_at(run_cfg.train.lr_schedule, 0),
                  grad_clip=run_cfg.train.grad_clip)
    beta_kl = run_cfg.train.kl_coeff
    shuffle_rng = np.random.default_rng(seed + 1)
    cfg_dict = run_cfg.to_dict()
    ckpt_path = os.path.join(out_dir, "checkpoint_init.bin")
    nets.save_checkpoint(ckpt_path, policy.params, cfg_dict)
    env_steps = 0
    log_path = os.path.join(out_dir, "metrics.jsonl")
    with open(log_path, "w") as log:
        for it in range(run_cfg.train.iterations):
            collector.frame_mpjpe = []
            batch = collector.collect()
            env_steps += run_cfg.train.train_batch
            opt.lr = lr_at(run_cfg.train.lr_schedule, env_steps)
            stats, beta_kl = train_epoch(batch, policy, opt, run_cfg, beta_kl,
                                         rng=shuffle_rng)
            row = {
                "iteration": it + 1,
                "env_steps": env_steps,
                "mean_team_reward": float(batch["team_rewards"].mean()),
                "mean_agent_reward": float(batch["rewards"].mean()),
                "mean_mpjpe": (float(np.mean(collector.frame_mpjpe))
                               if collector.frame_mpjpe else None),
                "beta_kl": beta_kl,
                "lr": opt.lr,
                **stats,
            }
            log.write(_json_row(row) + "\n")
            log.flush()
            if log_fn:
                log_fn(row)
            if (it + 1) % run_cfg.train.checkpoint_every == 0:
                nets.save_checkpoint(os.path.join(out_dir, f"checkpoint_{it + 1:06d}.bin"),
                                     policy.params, cfg_dict)
    final = os.path.join(out_dir, "checkpoint_final.bin")
    nets.save_checkpoint(final, policy.params, cfg_dict)
    return final
