"""Command-line front end: run experiments, evaluate checkpoints, serve teleop.

Subcommands:
    run     run the configured condition x seed matrix; write step metrics
            (JSON lines), CSV summaries, plot-ready CSVs, PNG figures, and
            checkpoints every 5 episodes
    eval    load a checkpoint and report mean +/- std episode score
    teleop  serve the browser teleoperation panel over a websocket
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np
import yaml

from .config import ExperimentConfig
from .envs import DisturbanceSpec, expert_rollout, make_env
from .loop import run_experiment
from .policy import load_checkpoint, save_checkpoint

CHECKPOINT_EVERY = 5


def _parse_overrides(args) -> dict:
    conditions = args.condition
    if conditions is not None and list(conditions) == ["all"]:
        conditions = "all"
    return {
        "task": args.task,
        "conditions": conditions,
        "seeds": args.seeds,
        "episodes": args.episodes,
        "out": args.out,
    }


def cli_run(args) -> int:
    try:
        if args.config:
            cfg = ExperimentConfig.load(args.config, _parse_overrides(args))
        else:
            data = {k: v for k, v in _parse_overrides(args).items() if v is not None}
            cfg = ExperimentConfig.from_dict(data)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = cfg.out
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.yaml"), "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)

    step_files: dict[tuple, object] = {}

    def make_episode_callback(cond_name, seed):
        run_dir = os.path.join(out, f"{cond_name}_seed{seed}")
        os.makedirs(run_dir, exist_ok=True)

        def cb(ep, rec, policy):
            key = (cond_name, seed)
            if key not in step_files:
                step_files[key] = open(os.path.join(run_dir, "steps.jsonl"), "w")
            fh = step_files[key]
            for t, (r, d) in enumerate(zip(rec.rewards, rec.diffs)):
                fh.write(json.dumps({"episode": ep, "t": t, "reward": r, "diff": d}) + "\n")
            fh.flush()
            if (ep + 1) % CHECKPOINT_EVERY == 0:
                save_checkpoint(policy, os.path.join(run_dir, f"ckpt_ep{ep + 1:03d}.npz"))

        return cb

    cfg.make_episode_callback = make_episode_callback
    try:
        results = run_experiment(cfg)
    finally:
        for fh in step_files.values():
            fh.close()

    with open(os.path.join(out, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "condition", "seed", "retention", "robustness",
                    "norm_retention", "norm_robustness", "failed", "error"])
        for r in results:
            w.writerow([r.task, r.condition, r.seed, r.retention, r.robustness,
                        r.norm_retention, r.norm_robustness, int(r.failed), r.error])

    curve_rows = []
    with open(os.path.join(out, "curves.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["condition", "seed", "episode", "score", "mean_diff"])
        for r in results:
            for e in r.episodes:
                row = {"condition": r.condition, "seed": r.seed,
                       "episode": e["episode"], "score": e["score"],
                       "mean_diff": e["mean_diff"]}
                curve_rows.append(row)
                w.writerow([r.condition, r.seed, e["episode"], e["score"], e["mean_diff"]])

    env = make_env(cfg.task)
    expert_scores = [expert_rollout(make_env(cfg.task), s) for s in range(20)]
    from .plots import render_bars, render_curves

    summary_rows = [{"condition": r.condition, "retention": r.retention,
                     "robustness": r.robustness} for r in results if not r.failed]
    if curve_rows:
        render_curves(curve_rows, os.path.join(out, "curves.png"))
    if summary_rows:
        render_bars(summary_rows, env.expert_reference_score,
                    float(np.min(expert_scores)), os.path.join(out, "bars.png"))

    n_failed = sum(r.failed for r in results)
    for r in results:
        tag = "FAILED " + r.error if r.failed else (
            f"retention {r.retention:.2f} robustness {r.robustness:.2f}")
        print(f"{r.task} {r.condition} seed {r.seed}: {tag}")
    print(f"wrote {out}/summary.csv, curves.csv, figures; {n_failed} failed runs")
    return 1 if n_failed == len(results) and results else 0


def cli_eval(args) -> int:
    try:
        policy = load_checkpoint(args.checkpoint)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    env = make_env(args.task)
    if (policy.state_dim, policy.action_dim) != (env.spec.state_dim, env.spec.action_dim):
        print(f"error: checkpoint dims {policy.state_dim}/{policy.action_dim} "
              f"do not match task {args.task}", file=sys.stderr)
        return 2
    disturbance = None
    if args.disturbed:
        disturbance = DisturbanceSpec(probability=args.disturbance_probability,
                                      magnitude=env.disturbance_magnitude)
    from .loop import evaluate_policy

    scores = [
        evaluate_policy(policy, env, disturbance, 1, args.mode, base_seed=args.seed + i)
        for i in range(args.rollouts)
    ]
    print(f"{args.task} {args.mode} rollouts={args.rollouts} "
          f"disturbed={bool(disturbance)}: "
          f"score {np.mean(scores):.3f} +/- {np.std(scores):.3f}")
    return 0


def cli_teleop(args) -> int:
    from .teleop import teleop_serve

    overrides = {"task": args.task}
    if args.condition is not None:
        overrides["conditions"] = [args.condition]
    if args.config:
        cfg = ExperimentConfig.load(args.config, overrides)
    else:
        cfg = ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})
    teleop_serve(cfg, host=args.host, port=args.port, tick_hz=args.tick_hz)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cubedagger",
                                description="ensemble-consensus imitation learning")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment matrix")
    run.add_argument("--config", help="YAML config path")
    run.add_argument("--task", choices=["pointpush", "pendulum", "multiarm"])
    run.add_argument("--condition", nargs="+", metavar="COND",
                     help="conditions (EV1 EV2 C1 C2 C3) or 'all'")
    run.add_argument("--seeds", type=int, help="number of seeds (0..N-1)")
    run.add_argument("--episodes", type=int)
    run.add_argument("--out", help="output directory")
    run.set_defaults(func=cli_run)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("checkpoint")
    ev.add_argument("--task", default="pointpush",
                    choices=["pointpush", "pendulum", "multiarm"])
    ev.add_argument("--mode", default="mean", choices=["mean", "consensus"])
    ev.add_argument("--rollouts", type=int, default=5)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--disturbed", action="store_true")
    ev.add_argument("--disturbance-probability", type=float, default=0.05)
    ev.set_defaults(func=cli_eval)

    tp = sub.add_parser("teleop", help="serve the browser teleop panel")
    tp.add_argument("--config", help="YAML config path")
    tp.add_argument("--task", choices=["pointpush", "pendulum", "multiarm"])
    tp.add_argument("--condition", help="condition to serve (EV1 EV2 C1 C2 C3)")
    tp.add_argument("--host", default="127.0.0.1")
    tp.add_argument("--port", type=int, default=8731)
    tp.add_argument("--tick-hz", type=float, default=20.0)
    tp.set_defaults(func=cli_teleop)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
