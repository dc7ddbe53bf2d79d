"""Command line entry points: train, eval, contrib, stats."""

import argparse
import csv
import json
import os
import sys

import numpy as np


def _cap_threads():
    cap = os.environ.get("ACTIVE_MOCAP_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMBA_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def _load_config(args):
    from .config import RunConfig, preset

    if args.config is not None:
        if not os.path.exists(args.config):
            print(f"error: config file not found: {args.config}", file=sys.stderr)
            raise SystemExit(2)
        cfg = RunConfig.load(args.config)
    else:
        cfg = preset(args.preset)
    if getattr(args, "n_cams", None) is not None:
        cfg.n_cameras = args.n_cams
    if getattr(args, "n_humans", None) is not None:
        cfg.n_humans = args.n_humans
    if getattr(args, "iterations", None) is not None:
        cfg.train.iterations = args.iterations
    if getattr(args, "reward_mode", None) is not None:
        cfg.train.reward_mode = args.reward_mode
    if getattr(args, "safety", None) is not None:
        cfg.safety.mode = args.safety
    if getattr(args, "triangulation", None) is not None:
        cfg.perception.triangulation = args.triangulation
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.__post_init__()  # re-check derived limits after overrides
    return cfg


def cmd_train(args):
    from .marl import train

    cfg = _load_config(args)
    out = train(cfg, args.out, seed=cfg.seed,
                log_fn=None if args.quiet else print)
    print(f"final checkpoint: {out}")
    return 0


def cmd_eval(args):
    from .metrics import ConfigMismatch, evaluate
    from .nets import CheckpointError

    cfg = _load_config(args)
    try:
        summary, _ = evaluate(
            cfg, args.episodes, tau=args.tau, policy=args.policy,
            checkpoint=args.checkpoint, seed=cfg.seed, out_dir=args.out,
            smoothing=args.smoothing == "on",
            ema_eta=args.ema_eta, noise=args.noise)
    except (CheckpointError, ConfigMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(3)
    width = max(len(k) for k in summary)
    for key in sorted(summary):
        print(f"{key:<{width}}  {summary[key]}")
    return 0


def _scene_world(scene, world_cfg):
    from .geometry import CameraIntrinsics, CameraPose
    from .world import CameraAgentState, HumanState, WorldState

    humans = []
    for i, h in enumerate(scene["humans"]):
        pos = np.asarray(h["position"], dtype=float)
        humans.append(HumanState(
            id=i, position=pos, heading=float(h.get("heading", 0.0)),
            speed=0.0, gait_phase=0.0, waypoint=pos[:2].copy(),
            is_target=bool(h.get("is_target", False)),
            capsule_radius=world_cfg.capsule_radius,
            height=world_cfg.human_height))
    cameras = []
    for i, c in enumerate(scene["cameras"]):
        pose = CameraPose(np.asarray(c["position"], dtype=float),
                          float(c.get("pitch", 0.0)), float(c.get("yaw", 0.0)))
        cameras.append(CameraAgentState(i, pose, CameraIntrinsics()))
    return WorldState(humans, cameras, step_index=0,
                      rng=np.random.default_rng(0), config=world_cfg)


def cmd_contrib(args):
    from .config import WorldConfig
    from .perception import broadcast
    from .reward import coalition_table, ctcr
    from .world import skeleton_of

    try:
        with open(args.scene) as fh:
            scene = json.load(fh)
    except FileNotFoundError:
        print(f"error: scene file not found: {args.scene}", file=sys.stderr)
        raise SystemExit(2)
    except json.JSONDecodeError as exc:
        print(f"error: {args.scene}:{exc.lineno}:{exc.colno}: {exc.msg}",
              file=sys.stderr)
        raise SystemExit(2)
    world_cfg = WorldConfig()
    try:
        world = _scene_world(scene, world_cfg)
    except (KeyError, TypeError) as exc:
        print(f"error: malformed scene file: missing or bad field {exc}",
              file=sys.stderr)
        raise SystemExit(2)
    targets = [h for h in world.humans if h.is_target]
    if len(targets) != 1:
        print("error: scene must mark exactly one human is_target",
              file=sys.stderr)
        raise SystemExit(2)
    rng = np.random.default_rng(args.seed or 0)
    packets = broadcast(world, args.noise_sigma, rng)
    truth = skeleton_of(targets[0])
    table = coalition_table(packets, truth, targets[0].id)
    values = ctcr(table)
    report = {
        "coalition_table": {",".join(str(i) for i in sorted(k)): v
                            for k, v in table.items()},
        "ctcr": [float(v) for v in values],
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    return 0


def cmd_stats(args):
    from .metrics import behavior_stats

    if not os.path.exists(args.frames):
        print(f"error: frames log not found: {args.frames}", file=sys.stderr)
        raise SystemExit(2)
    frames = []
    with open(args.frames) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                frames.append(json.loads(line))
            except json.JSONDecodeError as exc:
                print(f"error: {args.frames}:{lineno}: {exc.msg}",
                      file=sys.stderr)
                raise SystemExit(2)
    stats = behavior_stats(frames)
    os.makedirs(args.out, exist_ok=True)
    for name, hist in stats.items():
        path = os.path.join(args.out, f"{name}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "bin_right", "count"])
            edges, counts = hist["edges"], hist["counts"]
            for i, count in enumerate(counts):
                writer.writerow([edges[i], edges[i + 1], count])
        print(f"wrote {path}")
    return 0


def _add_config_args(p):
    p.add_argument("--config", help="run config YAML")
    p.add_argument("--preset", default="desk", choices=("desk", "paper"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-cams", type=int, default=None)
    p.add_argument("--n-humans", type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="active-mocap")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training loop")
    _add_config_args(p)
    p.add_argument("--out", default="runs/train")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--reward-mode", choices=("shared", "ctcr"), default=None)
    p.add_argument("--safety", choices=("none", "oca", "mask"), default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a policy or baseline")
    _add_config_args(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--policy", default="fixed",
                   choices=("fixed", "rulebased", "learned", "random"))
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--tau", type=float, default=200.0)
    p.add_argument("--triangulation", choices=("dlt", "ransac"), default=None)
    p.add_argument("--smoothing", choices=("on", "off"), default="off")
    p.add_argument("--safety", choices=("none", "oca", "mask"), default=None)
    p.add_argument("--ema-eta", type=float, default=None)
    p.add_argument("--noise", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("contrib", help="per-camera contribution for one scene")
    p.add_argument("scene", help="scene JSON")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_contrib)

    p = sub.add_parser("stats", help="convert a frames log to histogram CSVs")
    p.add_argument("frames", help="frames.jsonl from eval")
    p.add_argument("--out", default="stats")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None):
    _cap_threads()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
