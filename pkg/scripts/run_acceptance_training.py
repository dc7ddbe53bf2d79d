"""Run the desk-scale training sweep used by the slow acceptance tests.

Produces runs/acceptance/<mode>_s<seed>/ (metrics.jsonl + checkpoints) for
reward modes ctcr/shared and seeds 0..2, evaluates each final checkpoint plus
the static-formation baseline, and writes runs/acceptance/summary.json.
Already-finished runs are skipped, so the script is resumable.
"""

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from active_mocap.config import preset
from active_mocap.marl import train
from active_mocap.metrics import evaluate

ROOT = os.path.join(os.path.dirname(__file__), "..", "runs", "acceptance")
SEEDS = (0, 1, 2)
ITERATIONS = 1500          # x 4 envs x 25-step fragments = 150k env steps
EVAL_EPISODES = 5


def make_cfg(mode, seed):
    cfg = preset("desk")
    cfg.n_cameras = 3
    cfg.n_humans = 3
    cfg.seed = seed
    cfg.train.reward_mode = mode
    cfg.train.iterations = ITERATIONS
    return cfg


def run_one(mode, seed):
    out = os.path.join(ROOT, f"{mode}_s{seed}")
    ck = os.path.join(out, "checkpoint_final.bin")
    cfg = make_cfg(mode, seed)
    if not os.path.exists(ck):
        print(f"== training {mode} seed {seed}", flush=True)
        train(cfg, out, seed=seed,
              log_fn=lambda r: print(r, flush=True) if r["iteration"] % 50 == 0 else None)
    summary_path = os.path.join(out, "eval", "summary.json")
    if not os.path.exists(summary_path):
        summary, _ = evaluate(cfg, EVAL_EPISODES, policy="learned", checkpoint=ck,
                              seed=seed + 100, out_dir=os.path.join(out, "eval"))
        print(mode, seed, "eval", summary["mean_mpjpe_mm"], flush=True)
    with open(summary_path) as fh:
        return json.load(fh)


def run_fixed(seed):
    out = os.path.join(ROOT, f"fixed_s{seed}")
    summary_path = os.path.join(out, "summary.json")
    if not os.path.exists(summary_path):
        cfg = make_cfg("ctcr", seed)
        summary, _ = evaluate(cfg, EVAL_EPISODES, policy="fixed",
                              seed=seed + 100, out_dir=out)
        print("fixed", seed, "eval", summary["mean_mpjpe_mm"], flush=True)
    with open(summary_path) as fh:
        return json.load(fh)


def tail_mpjpe(mode, seed, k=100):
    path = os.path.join(ROOT, f"{mode}_s{seed}", "metrics.jsonl")
    rows = [json.loads(line) for line in open(path)]
    vals = [r["mean_mpjpe"] for r in rows[-k:] if r["mean_mpjpe"] is not None]
    return sum(vals) / len(vals)


def main():
    os.makedirs(ROOT, exist_ok=True)
    result = {"seeds": list(SEEDS), "env_steps": ITERATIONS * 100}
    for seed in SEEDS:
        result[f"fixed_s{seed}"] = run_fixed(seed)["mean_mpjpe_mm"]
    for mode in ("ctcr", "shared"):
        for seed in SEEDS:
            summary = run_one(mode, seed)
            result[f"{mode}_s{seed}"] = summary["mean_mpjpe_mm"]
            result[f"{mode}_s{seed}_tail"] = tail_mpjpe(mode, seed)
    with open(os.path.join(ROOT, "summary.json"), "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    print(json.dumps(result, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
