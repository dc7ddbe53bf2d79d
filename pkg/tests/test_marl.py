import json
import os

import numpy as np
import pytest

import active_mocap.autodiff as ad
import active_mocap.nets as nets
from active_mocap.config import PAPER_LR_SCHEDULE, lr_at, preset
from active_mocap.marl import Policy, RolloutCollector, gae, train, train_epoch


def small_cfg(n_cameras=2, n_humans=2, rollouts=2, fragment=25):
    cfg = preset("desk")
    cfg.n_cameras = n_cameras
    cfg.n_humans = n_humans
    cfg.train.rollouts = rollouts
    cfg.train.fragment = fragment
    return cfg


class TestGae:
    def test_single_step(self):
        adv = gae(np.array([[1.0]]), np.array([[0.0]]), np.array([0.0]),
                  0.99, 1.0, np.array([[True]]))
        assert np.isclose(adv[0, 0], 1.0)

    def test_lambda_zero_is_td_residual(self, rng):
        T, E = 6, 3
        rewards = rng.normal(size=(T, E))
        values = rng.normal(size=(T, E))
        boot = rng.normal(size=E)
        dones = np.zeros((T, E), dtype=bool)
        adv = gae(rewards, values, boot, 0.99, 0.0, dones)
        nxt = np.vstack([values[1:], boot[None, :]])
        expected = rewards + 0.99 * nxt - values
        assert np.allclose(adv, expected, atol=1e-12)

    def test_matches_brute_force_sum(self, rng):
        T, E = 3, 2
        gamma, lam = 0.99, 0.7
        rewards = rng.normal(size=(T, E))
        values = rng.normal(size=(T, E))
        boot = rng.normal(size=E)
        dones = np.zeros((T, E), dtype=bool)
        adv = gae(rewards, values, boot, gamma, lam, dones)
        ext = np.vstack([values, boot[None, :]])
        deltas = rewards + gamma * ext[1:] - values
        for t in range(T):
            expected = sum((gamma * lam) ** k * deltas[t + k] for k in range(T - t))
            assert np.allclose(adv[t], expected, atol=1e-9)

    def test_done_resets_propagation(self, rng):
        T, E = 4, 1
        rewards = np.ones((T, E))
        values = np.zeros((T, E))
        dones = np.zeros((T, E), dtype=bool)
        dones[1] = True
        adv = gae(rewards, values, np.zeros(E), 1.0, 1.0, dones)
        # after the done at t=1, t=0..1 must not see rewards from t>=2
        assert np.isclose(adv[1, 0], 1.0)
        assert np.isclose(adv[0, 0], 2.0)


class TestCollector:
    def test_batch_accounting(self):
        cfg = small_cfg(n_cameras=3, n_humans=2, rollouts=2, fragment=25)
        policy = Policy(cfg, obs_dim=_obs_dim(cfg), seed=0)
        col = RolloutCollector(cfg, policy, seed=0)
        col.start()
        batch = col.collect()
        assert batch["obs"].shape[:3] == (2, 25, 3)
        assert batch["rewards"].size == 2 * 25 * 3

    def test_ctcr_two_agents_equals_team_reward(self):
        cfg = small_cfg(n_cameras=2)
        cfg.train.reward_mode = "ctcr"
        policy = Policy(cfg, obs_dim=_obs_dim(cfg), seed=0)
        col = RolloutCollector(cfg, policy, seed=0)
        col.start()
        batch = col.collect()
        team = batch["team_rewards"][:, :, None]
        assert np.array_equal(batch["rewards"], np.repeat(team, 2, axis=2))

    def test_shared_mode_identical_rewards(self):
        cfg = small_cfg(n_cameras=3, n_humans=2)
        cfg.train.reward_mode = "shared"
        policy = Policy(cfg, obs_dim=_obs_dim(cfg), seed=0)
        col = RolloutCollector(cfg, policy, seed=0)
        col.start()
        batch = col.collect()
        assert np.all(batch["rewards"] == batch["rewards"][:, :, :1])


def _obs_dim(cfg):
    from active_mocap.perception import observation_length

    return observation_length(cfg.perception.n_cam_max, cfg.perception.n_human_max)


def _tiny_batch(cfg, policy, seed=0):
    col = RolloutCollector(cfg, policy, seed=seed)
    col.start()
    return col.collect()


class TestTrainEpoch:
    def test_kl_adaptation_doubles(self):
        # measured KL 0.03 with target 0.01 -> beta doubles
        cfg = small_cfg(fragment=5)
        cfg.train.sgd_iters = 1
        policy = Policy(cfg, obs_dim=_obs_dim(cfg), seed=0)
        batch = _tiny_batch(cfg, policy)
        # force a "measured" KL by shifting the recorded behaviour logits
        batch["old_logp_all"][..., 0] += 0.5
        batch["old_logp_all"] -= np.log(
            np.exp(batch["old_logp_all"]).sum(axis=-1, keepdims=True))
        opt = ad.Adam(policy.params, lr=0.0)
        _, beta = train_epoch(batch, policy, opt, cfg, beta_kl=0.2,
                              rng=np.random.default_rng(0))
        assert beta == 0.4

    def test_kl_adaptation_halves_when_fresh(self):
        cfg = small_cfg(fragment=5)
        cfg.train.sgd_iters = 1
        policy = Policy(cfg, obs_dim=_obs_dim(cfg), seed=0)
        batch = _tiny_batch(cfg, policy)
        opt = ad.Adam(policy.params, lr=0.0)
        _, beta = train_epoch(batch, policy, opt, cfg, beta_kl=0.2,
                              rng=np.random.default_rng(0))
        assert beta == 0.1  # zero-lr epoch keeps KL ~ 0 < target/2

    def test_fresh_policy_surrogate_is_mean_advantage(self):
        cfg = small_cfg(fragment=5)
        cfg.train.sgd_iters = 1
        cfg.train.minibatch_fraction = 1
        cfg.train.lambda_wdl = 0.0
        policy = Policy(cfg, obs_dim=_obs_dim(cfg), seed=0)
        batch = _tiny_batch(cfg, policy)
        opt = ad.Adam(policy.params, lr=0.0)
        stats, _ = train_epoch(batch, policy, opt, cfg, beta_kl=0.0,
                               rng=np.random.default_rng(0))
        # normalized advantages have mean 0; ratio==1 makes the clip inactive
        assert abs(stats["ppo_loss"]) < 1e-9

    def test_zero_advantage_updates_only_critic(self):
        cfg = small_cfg(fragment=5)
        cfg.train.sgd_iters = 2
        cfg.train.lambda_wdl = 0.0
        policy = Policy(cfg, obs_dim=_obs_dim(cfg), seed=0)
        batch = _tiny_batch(cfg, policy)
        batch["rewards"][:] = 0.0
        batch["team_rewards"][:] = 1.0
        batch["values"][:] = 0.0
        batch["bootstrap"][:] = 0.0
        before = {k: p.data.copy() for k, p in policy.params.items()}
        opt = ad.Adam(policy.params, lr=1e-3)
        train_epoch(batch, policy, opt, cfg, beta_kl=0.0,
                    rng=np.random.default_rng(0))
        # critic head must move, actor output head must not
        assert not np.allclose(policy.params["critic.out.w"].data,
                               before["critic.out.w"])
        assert np.allclose(policy.params["actor.out.w"].data,
                           before["actor.out.w"])


class TestTrain:
    def test_zero_iterations_initial_checkpoint_only(self, tmp_path):
        cfg = small_cfg(fragment=5)
        cfg.train.iterations = 0
        train(cfg, str(tmp_path), seed=0)
        assert os.path.exists(tmp_path / "checkpoint_init.bin")
        assert open(tmp_path / "metrics.jsonl").read() == ""

    def test_smoke_run_logs_rows(self, tmp_path):
        cfg = small_cfg(rollouts=4, fragment=5)
        cfg.train.iterations = 20
        cfg.train.sgd_iters = 2
        train(cfg, str(tmp_path), seed=0)
        rows = [json.loads(l) for l in open(tmp_path / "metrics.jsonl")]
        assert len(rows) == 20
        assert rows[-1]["iteration"] == 20
        assert os.path.exists(tmp_path / "checkpoint_final.bin")
        assert os.path.exists(tmp_path / "config.yaml")

    def test_metrics_log_reproducible(self, tmp_path):
        cfg = small_cfg(fragment=5)
        cfg.train.iterations = 3
        cfg.train.sgd_iters = 2
        train(cfg, str(tmp_path / "a"), seed=9)
        train(cfg, str(tmp_path / "b"), seed=9)
        assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == \
            (tmp_path / "b" / "metrics.jsonl").read_bytes()

    def test_lr_schedule_paper_values(self):
        assert lr_at(PAPER_LR_SCHEDULE, 0) == 5e-4
        assert lr_at(PAPER_LR_SCHEDULE, 100_000) == 5e-4
        assert np.isclose(lr_at(PAPER_LR_SCHEDULE, 300_000), 1e-4)
        assert np.isclose(lr_at(PAPER_LR_SCHEDULE, 700_000), 5e-5)

    def test_paper_preset_table_values(self):
        cfg = preset("paper")
        assert cfg.train.rollouts == 28
        assert cfg.train.train_batch == 700
        assert cfg.train.train_batch // cfg.train.minibatch_fraction == 350
        assert cfg.train.sgd_iters == 16
        assert cfg.train.gamma == 0.99
        assert cfg.train.gae_lambda == 1.0
        assert cfg.train.vf_coeff == 0.1
        assert cfg.train.vf_clip == 1000
        assert cfg.train.grad_clip == 50
        assert cfg.train.kl_target == 0.01
        assert cfg.train.wdl_coeffs == {"self": 1.0, "peer": 1.0, "reward": 1.0,
                                        "tgt": 1.0, "pd": 0.1}


def test_policy_gradient_bandit_sanity():
    # 1-step bandit with 3 translation levels on one factor: PPO should push
    # the best action's probability above 0.9 within 200 iterations
    rng = np.random.default_rng(0)
    cfg = nets.NetConfig(obs_dim=4, n_agents=1, n_action_factors=3)
    params = nets.init_params(cfg, seed=0)
    opt = ad.Adam(params, lr=0.05)
    payout = np.array([0.1, 0.2, 1.0])  # level +1 of factor 0 is best
    obs = np.zeros((64, 4))
    h0 = np.zeros((64, cfg.hidden))
    for _ in range(200):
        z = nets.encode(params, cfg, obs)
        h = nets.gru_step(params, cfg, z, ad.constant(h0))
        raw = nets.mdn_head(params, cfg, "tgt", z, h, np.zeros((64, 2)))
        logits = nets.actor_logits(params, cfg, z, h, raw)
        logp_all = nets.factored_log_probs(logits)
        probs = np.exp(logp_all.data[:, 0, :])
        acts = np.array([rng.choice(3, p=p / p.sum()) for p in probs])
        adv = payout[acts] - probs @ payout
        chosen = ad.gather(logp_all[:, 0, :], acts[:, None], axis=1)
        loss = -(chosen.reshape(64) * adv).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    final = np.exp(logp_all.data[0, 0, :])
    assert final[2] > 0.9
