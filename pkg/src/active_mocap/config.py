"""Run configuration: YAML-backed nested config with desk/paper presets."""

import copy
from dataclasses import asdict, dataclass, field

import yaml

from .world import WorldConfig

PAPER_LR_SCHEDULE = [[0, 5e-4], [200_000, 5e-4], [200_000, 1e-4],
                     [400_000, 1e-4], [600_000, 5e-5], [600_000, 5e-5]]


@dataclass
class PerceptionConfig:
    noise_sigma: float = 2.0
    min_visible_joints: int = 4
    n_cam_max: int = 3
    n_human_max: int = 7
    triangulation: str = "dlt"          # or "ransac"
    ransac_threshold: float = 3.0
    ransac_iterations: int = 50


@dataclass
class ModelConfig:
    hidden: int = 128
    encoder_layers: int = 3
    mdn_hidden: int = 128
    mdn_components: int = 16


@dataclass
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 1.0
    clip: float = 0.3
    kl_coeff: float = 0.2
    kl_target: float = 0.01
    entropy_coeff: float = 0.0
    vf_coeff: float = 0.1
    vf_clip: float = 1000.0
    grad_clip: float = 50.0
    fragment: int = 25
    rollouts: int = 4                   # parallel env instances (paper: 28)
    minibatch_fraction: int = 2         # minibatch = batch / fraction
    sgd_iters: int = 16
    lr_schedule: list = field(default_factory=lambda: copy.deepcopy(PAPER_LR_SCHEDULE))
    lambda_wdl: float = 1.0
    wdl_coeffs: dict = field(default_factory=lambda: {
        "self": 1.0, "peer": 1.0, "reward": 1.0, "tgt": 1.0, "pd": 0.1})
    reward_mode: str = "ctcr"           # or "shared"
    iterations: int = 20
    checkpoint_every: int = 50

    @property
    def train_batch(self):
        """Env steps per iteration (paper: 28 x 25 = 700)."""
        return self.rollouts * self.fragment


@dataclass
class SafetyConfig:
    mode: str = "none"                  # none | oca | mask
    range: float = 0.8
    smooth_eta: float = 1.0             # 1.0 = no smoothing
    noise_enabled: bool = False
    noise_lo: float = 0.80
    noise_hi: float = 1.20


@dataclass
class RunConfig:
    seed: int = 0
    n_cameras: int = 3
    n_humans: int = None                # None = resample in human_count_range per episode
    world: WorldConfig = field(default_factory=WorldConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    safety: SafetyConfig = field(default_factory=SafetyConfig)

    def __post_init__(self):
        if self.perception.n_cam_max < self.n_cameras:
            self.perception.n_cam_max = self.n_cameras

    def to_dict(self):
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        d = copy.deepcopy(d)
        cfg = cls(seed=d.get("seed", 0), n_cameras=d.get("n_cameras", 3),
                  n_humans=d.get("n_humans"))
        for name, sub_cls in (("world", WorldConfig), ("perception", PerceptionConfig),
                              ("model", ModelConfig), ("train", TrainConfig),
                              ("safety", SafetyConfig)):
            block = d.get(name, {})
            sub = sub_cls()
            for k, v in block.items():
                if not hasattr(sub, k):
                    raise ValueError(f"unknown config key {name}.{k}")
                if isinstance(getattr(sub, k), tuple) and isinstance(v, list):
                    v = tuple(v)
                setattr(sub, k, v)
            setattr(cfg, name, sub)
        cfg.__post_init__()
        return cfg

    def save(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))


def preset(name):
    """Built-in presets: `desk` (small, fast) and `paper` (full table values)."""
    cfg = RunConfig()
    if name == "desk":
        cfg.train.rollouts = 4
        cfg.train.iterations = 20
        # anneal over the desk-scale budget (150k env steps) instead of the
        # full-scale 600k-step budget
        cfg.train.lr_schedule = [[0, 5e-4], [50_000, 5e-4], [50_000, 1e-4],
                                 [100_000, 1e-4], [100_000, 5e-5],
                                 [150_000, 5e-5]]
    elif name == "paper":
        cfg.train.rollouts = 28
        cfg.train.iterations = 1000
        cfg.n_humans = None
    else:
        raise ValueError(f"unknown preset {name!r} (expected 'desk' or 'paper')")
    return cfg


def lr_at(schedule, step):
    """Piecewise-linear learning-rate schedule over cumulative env steps.

    Duplicated x-values encode step discontinuities; the latest entry at or
    below `step` anchors the segment.
    """
    pts = [(float(s), float(v)) for s, v in schedule]
    if step <= pts[0][0]:
        return pts[0][1]
    for i in range(len(pts) - 1):
        s0, v0 = pts[i]
        s1, v1 = pts[i + 1]
        if s0 <= step < s1:
            if s1 == s0:
                continue
            return v0 + (v1 - v0) * (step - s0) / (s1 - s0)
        if s0 <= step == s1:
            return v1
    return pts[-1][1]
