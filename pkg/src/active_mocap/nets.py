"""Policy network: encoder, gated recurrent cell, mixture-density heads for
world-dynamics prediction, factored-categorical actor, centralized critic.

All math runs on the tape in `autodiff`; analytic gradients are validated
against finite differences in the tests.  Weights are shared across agents
(tied-weights policy); agent identity enters through the observation's
is_self slot.
"""

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SIGMA_FLOOR = 1e-3
MDN_HEADS_2D = ("self", "peer", "tgt", "pd")   # predict planar (x, y)
MDN_HEAD_1D = "reward"


class ShapeMismatch(Exception):
    pass


@dataclass
class NetConfig:
    obs_dim: int
    n_agents: int
    n_action_factors: int = 3          # 3 translation factors; 5 when rotation is learned
    hidden: int = 128
    encoder_layers: int = 3
    mdn_hidden: int = 128
    mdn_components: int = 16

    @property
    def action_onehot_dim(self):
        return self.n_action_factors * 3

    @property
    def mdn_out_2d(self):
        return self.mdn_components * 5    # (weight, mu_x, sigma_x, mu_y, sigma_y)

    @property
    def mdn_out_1d(self):
        return self.mdn_components * 3

    @property
    def embed_dim(self):
        return 3 * self.hidden            # concat(z, h, projected target-MDN params)

    def to_dict(self):
        return {
            "obs_dim": self.obs_dim, "n_agents": self.n_agents,
            "n_action_factors": self.n_action_factors, "hidden": self.hidden,
            "encoder_layers": self.encoder_layers, "mdn_hidden": self.mdn_hidden,
            "mdn_components": self.mdn_components,
        }


@dataclass
class MixtureDensityOutput:
    """One Gaussian mixture: weights (K,), means (K, D), stddevs (K, D)."""
    weights: np.ndarray
    means: np.ndarray
    stddevs: np.ndarray

    def __post_init__(self):
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-6:
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(self.stddevs <= 0):
            raise ValueError("stddevs must be positive")


def _dense_init(rng, fan_in, fan_out, scale=1.0):
    bound = scale * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg, seed=0):
    """All network weights, keyed by name; returns {name: Tensor}."""
    rng = np.random.default_rng(seed)
    H, K = cfg.hidden, cfg.mdn_components
    p = {}

    def dense(name, din, dout, scale=1.0):
        p[f"{name}.w"] = ad.parameter(_dense_init(rng, din, dout, scale))
        p[f"{name}.b"] = ad.parameter(np.zeros(dout))

    din = cfg.obs_dim
    for i in range(cfg.encoder_layers):
        dense(f"enc{i}", din, H)
        din = H
    p["gru.wx"] = ad.parameter(_dense_init(rng, H, 3 * H))
    p["gru.wh"] = ad.parameter(_dense_init(rng, H, 3 * H))
    p["gru.b"] = ad.parameter(np.zeros(3 * H))
    for head in MDN_HEADS_2D + (MDN_HEAD_1D,):
        cond = 2 if head in ("tgt", "pd") else cfg.action_onehot_dim
        dout = cfg.mdn_out_1d if head == MDN_HEAD_1D else cfg.mdn_out_2d
        dense(f"mdn_{head}.l0", 2 * H + cond, cfg.mdn_hidden)
        dense(f"mdn_{head}.l1", cfg.mdn_hidden, cfg.mdn_hidden)
        dense(f"mdn_{head}.out", cfg.mdn_hidden, dout, scale=0.1)
    dense("proj", cfg.mdn_out_2d, H)
    dense("actor.l0", cfg.embed_dim, H)
    dense("actor.out", H, cfg.n_action_factors * 3, scale=0.01)
    dense("critic.l0", cfg.n_agents * H, H)
    dense("critic.out", H, 1, scale=0.1)
    return p


def param_count(params):
    return sum(p.data.size for p in params.values())


def _affine(params, name, x):
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def encode(params, cfg, obs):
    """obs (B, obs_dim) -> feature z (B, H)."""
    if obs.shape[-1] != cfg.obs_dim:
        raise ShapeMismatch(f"observation dim {obs.shape[-1]} != {cfg.obs_dim}")
    x = obs if isinstance(obs, Tensor) else ad.constant(obs)
    for i in range(cfg.encoder_layers):
        x = ad.tanh(_affine(params, f"enc{i}", x))
    return x


def gru_step(params, cfg, z, h):
    """Gated recurrent cell: (z (B,H), h (B,H)) -> h' (B,H)."""
    H = cfg.hidden
    gx = z @ params["gru.wx"] + params["gru.b"]
    gh = h @ params["gru.wh"]
    upd = ad.sigmoid(gx[:, 0:H] + gh[:, 0:H])
    rst = ad.sigmoid(gx[:, H:2 * H] + gh[:, H:2 * H])
    cand = ad.tanh(gx[:, 2 * H:] + rst * gh[:, 2 * H:])
    return upd * h + (1.0 - upd) * cand


def mdn_head(params, cfg, head, z, h, cond):
    """Raw mixture parameters for one prediction head.

    cond: conditioning input (action one-hot or current normalized state).
    """
    x = ad.concat([z, h, cond if isinstance(cond, Tensor) else ad.constant(cond)], axis=1)
    x = ad.tanh(_affine(params, f"mdn_{head}.l0", x))
    x = ad.tanh(_affine(params, f"mdn_{head}.l1", x))
    return _affine(params, f"mdn_{head}.out", x)


def mdn_split(raw, k, dim):
    """raw (B, k*(1+2*dim)) -> (log-weights (B,k), mu (B,k,dim), sigma (B,k,dim))."""
    b = raw.shape[0]
    logits = raw[:, 0:k]
    mu = raw[:, k:k * (1 + dim)].reshape(b, k, dim)
    sigma = ad.softplus(raw[:, k * (1 + dim):].reshape(b, k, dim)) + SIGMA_FLOOR
    return ad.log_softmax(logits, axis=1), mu, sigma


def mixture_nll(logw, mu, sigma, target):
    """Negative log-likelihood of `target` (B, D) under a diagonal Gaussian
    mixture, log-sum-exp stabilized.  Returns (B,)."""
    tgt = target if isinstance(target, Tensor) else ad.constant(target)
    d = mu.shape[-1]
    diff = (tgt.reshape(tgt.shape[0], 1, d) - mu) / sigma
    log_comp = (ad.square(diff).sum(axis=2) * -0.5
                - ad.log(sigma).sum(axis=2)
                - 0.5 * d * math.log(2.0 * math.pi))
    return -ad.logsumexp(logw + log_comp, axis=1)


def mdn_nll(mixture, target):
    """NLL of a single MixtureDensityOutput at a point (spec contract)."""
    k, d = mixture.means.shape
    logw = ad.constant(np.log(mixture.weights).reshape(1, k))
    mu = ad.constant(mixture.means.reshape(1, k, d))
    sigma = ad.constant(mixture.stddevs.reshape(1, k, d))
    return float(mixture_nll(logw, mu, sigma, np.asarray(target, dtype=float).reshape(1, d)).data[0])


def mdn_output(raw_row, k, dim):
    """Convert one raw head output row into a MixtureDensityOutput."""
    logw, mu, sigma = mdn_split(Tensor(raw_row.reshape(1, -1)), k, dim)
    return MixtureDensityOutput(np.exp(logw.data[0]), mu.data[0], sigma.data[0])


def actor_logits(params, cfg, z, h, tgt_mdn_raw):
    """Factored action logits (B, F, 3) from the final embedding
    concat(z, h, projected target-MDN parameters)."""
    proj = ad.tanh(_affine(params, "proj", tgt_mdn_raw))
    e = ad.concat([z, h, proj], axis=1)
    x = ad.tanh(_affine(params, "actor.l0", e))
    out = _affine(params, "actor.out", x)
    return out.reshape(out.shape[0], cfg.n_action_factors, 3)


def critic_value(params, cfg, all_z):
    """Centralized value from all agents' encoder features (B, n*H) -> (B,)."""
    x = ad.tanh(_affine(params, "critic.l0", all_z))
    v = _affine(params, "critic.out", x)
    return v.reshape(v.shape[0])


def action_onehot(actions, n_factors):
    """(B, F) integer levels in {-1,0,1} -> (B, F*3) one-hot blocks."""
    acts = np.asarray(actions, dtype=int) + 1
    b = acts.shape[0]
    out = np.zeros((b, n_factors * 3))
    for f in range(n_factors):
        out[np.arange(b), f * 3 + acts[:, f]] = 1.0
    return out


def factored_log_probs(logits, mask=None):
    """Log-probabilities per factor with optional per-level boolean mask
    (False = forbidden level, probability forced to zero)."""
    if mask is not None:
        logits = ad.where(np.asarray(mask, dtype=bool), logits, logits - 1e9)
    return ad.log_softmax(logits, axis=2)


def sample_actions(log_probs, rng):
    """Sample one level per factor from (B, F, 3) log-probs."""
    p = np.exp(log_probs.data if isinstance(log_probs, Tensor) else log_probs)
    b, f, _ = p.shape
    u = rng.random((b, f, 1))
    cdf = np.cumsum(p, axis=2)
    idx = (u > cdf[:, :, :2]).sum(axis=2)
    return idx - 1  # levels in {-1, 0, 1}


def joint_log_prob(log_probs, actions):
    """Sum of per-factor log-probs of the chosen levels: (B,)."""
    idx = (np.asarray(actions, dtype=int) + 1)[:, :, None]
    return ad.gather(log_probs, idx, axis=2).reshape(idx.shape[0], idx.shape[1]).sum(axis=1)


# ---------------------------------------------------------------------------
# checkpoint format: magic, schema version, config hash, named f32 tensors
# ---------------------------------------------------------------------------

MAGIC = b"AMCP"
SCHEMA_VERSION = 1


class CheckpointError(Exception):
    pass


def config_hash(cfg_dict):
    return hashlib.sha256(json.dumps(cfg_dict, sort_keys=True).encode()).digest()


def save_checkpoint(path, params, cfg_dict):
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", SCHEMA_VERSION)
    blob += config_hash(cfg_dict)
    cfg_json = json.dumps(cfg_dict, sort_keys=True).encode()
    blob += struct.pack("<I", len(cfg_json))
    blob += cfg_json
    blob += struct.pack("<I", len(params))
    for name in sorted(params):
        data = params[name].data.astype("<f4")
        nb = name.encode()
        blob += struct.pack("<I", len(nb))
        blob += nb
        blob += struct.pack("<I", data.ndim)
        for s in data.shape:
            blob += struct.pack("<Q", s)
        blob += data.tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic")
    off = 4
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != SCHEMA_VERSION:
        raise CheckpointError(f"unsupported checkpoint schema {version}")
    stored_hash = blob[off:off + 32]
    off += 32
    (cfg_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    cfg_dict = json.loads(blob[off:off + cfg_len].decode())
    off += cfg_len
    if config_hash(cfg_dict) != stored_hash:
        raise CheckpointError("config hash mismatch")
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        params[name] = ad.parameter(data.astype(np.float64))
    return params, cfg_dict
