"""Command-line entry point: training, evaluation, replay, plotting, and
the live teleoperation server."""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys

from .config import ConfigError, dump_config, load_config


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config overriding the defaults")
    p.add_argument("--seed", type=int, help="global seed override")
    p.add_argument("--out", help="output directory override")


def _add_train_common(p: argparse.ArgumentParser) -> None:
    _add_common(p)
    p.add_argument("--iterations", type=int,
                   help="iteration count override")
    p.add_argument("--resume", help="checkpoint to resume from")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wheelleg",
        description="Desk-scale planar wheeled-legged robot laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-s1", help="train the multi-skill low-level "
                                        "policy and state estimator")
    _add_train_common(p)
    p.add_argument("--no-dc-constraint", action="store_true",
                   help="measure motor-limit violations without penalizing "
                        "them")
    p.add_argument("--no-collision-constraint", action="store_true",
                   help="drop the link-collision constraint")
    p.add_argument("--unlimited-motors", action="store_true",
                   help="disable the torque envelope entirely")
    p.add_argument("--no-estimator-head", action="append", default=[],
                   choices=["velocity", "wheel", "collision"],
                   help="drop one estimator prediction target (repeatable)")

    p = sub.add_parser("train-s2", help="train the skill selector over a "
                                        "frozen low-level checkpoint")
    _add_train_common(p)
    p.add_argument("low_level", help="stage-1 checkpoint path")

    p = sub.add_parser("eval", help="deterministic evaluation report")
    _add_common(p)
    p.add_argument("checkpoint", help="stage-1 checkpoint path")
    p.add_argument("--task", default="locomotion",
                   choices=["locomotion", "platform", "recovery"])
    p.add_argument("--kind", default="flat",
                   help="terrain kind (flat, stairs, slope, rough, "
                        "discretized, pit)")
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--cmd", type=float, default=None,
                   help="pin the target velocity (default: sampled "
                        "per episode)")

    p = sub.add_parser("replay", help="log one episode as NDJSON")
    _add_common(p)
    p.add_argument("checkpoint", help="stage-1 checkpoint path")
    p.add_argument("--task", default="locomotion",
                   choices=["locomotion", "platform", "recovery"])
    p.add_argument("--kind", default="flat")
    p.add_argument("--level", type=int, default=1)

    p = sub.add_parser("plot", help="emit SVG+CSV figures")
    _add_common(p)
    p.add_argument("--kind", required=True,
                   choices=["learning", "violation", "torque"])
    p.add_argument("--input", required=True,
                   help="metrics CSV (learning/violation) or torque CSV")

    p = sub.add_parser("teleop", help="serve the live teleoperation session")
    _add_common(p)
    p.add_argument("checkpoint", help="stage-1 checkpoint path")
    p.add_argument("--selector", help="stage-2 selector checkpoint")
    p.add_argument("--static-dir", help="directory of UI files to host")
    return parser


def _resolve_config(args) -> dict:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides)


def _out_dir(cfg: dict, args) -> str:
    out = args.out if getattr(args, "out", None) else cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    dump_config(cfg, out)
    return out


def cmd_train_s1(args) -> int:
    from .p3o import train_s1

    cfg = _resolve_config(args)
    if args.no_dc_constraint:
        cfg["p3o"]["dc_constraint"] = False
    if args.no_collision_constraint:
        cfg["p3o"]["collision_constraint"] = False
    if args.unlimited_motors:
        cfg["actuation"]["unlimited"] = True
    if args.no_estimator_head:
        cfg["estimator"]["disabled_heads"] = list(args.no_estimator_head)
    out = _out_dir(cfg, args)
    path = train_s1(cfg, out, resume=args.resume,
                    iterations=args.iterations)
    print(path)
    return 0


def cmd_train_s2(args) -> int:
    from .selector import train_s2

    cfg = _resolve_config(args)
    out = _out_dir(cfg, args)
    path = train_s2(args.low_level, cfg, out, resume=args.resume,
                    iterations=args.iterations)
    print(path)
    return 0


def cmd_eval(args) -> int:
    from .evaluate import (
        evaluate,
        load_s1_policy,
        write_eval_report,
        write_torque_csv,
    )

    params, cfg = load_s1_policy(args.checkpoint)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = _out_dir(cfg, args)
    report = evaluate(params, cfg, args.task, args.kind, args.level,
                      args.episodes, int(cfg["seed"]), cmd=args.cmd)
    write_eval_report(report, os.path.join(out, "eval_report.json"))
    write_torque_csv(report, os.path.join(out, "eval_torque.csv"))
    print(json.dumps({k: report[k] for k in
                      ("task", "kind", "level", "episodes", "success_rate",
                       "violation_rate")}))
    return 0


def cmd_replay(args) -> int:
    from .evaluate import load_s1_policy, replay

    params, cfg = load_s1_policy(args.checkpoint)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = _out_dir(cfg, args)
    path = os.path.join(out, f"replay_{args.task}_{args.kind}.ndjson")
    steps = replay(params, cfg, args.task, args.kind, args.level,
                   int(cfg["seed"]), path)
    print(f"{path} ({steps} steps)")
    return 0


def cmd_plot(args) -> int:
    from .plots import (
        plot_learning_curves,
        plot_torque_velocity,
        plot_violation_rate,
    )

    cfg = _resolve_config(args)
    out = _out_dir(cfg, args)
    base = os.path.join(out, f"plot_{args.kind}")
    if args.kind == "learning":
        result = plot_learning_curves(args.input, base)
    elif args.kind == "violation":
        result = plot_violation_rate(args.input, base)
    else:
        result = plot_torque_velocity(args.input, cfg, base)
    print(result["svg"])
    return 0


def cmd_teleop(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluate import load_s1_policy
    from .nets import ParamSet
    from .teleop import serve

    params, cfg = load_s1_policy(args.checkpoint)
    sel_params = None
    if args.selector:
        payload = load_checkpoint(args.selector)
        if payload.get("kind") != "s2":
            raise ValueError("selector checkpoint must be stage-2")
        sel_params = ParamSet()
        sel_params.load_state_dict(payload["params"])
    if args.seed is not None:
        cfg["seed"] = args.seed
    asyncio.run(serve(cfg, params, sel_params, static_dir=args.static_dir))
    return 0


COMMANDS = {
    "train-s1": cmd_train_s1,
    "train-s2": cmd_train_s2,
    "eval": cmd_eval,
    "replay": cmd_replay,
    "plot": cmd_plot,
    "teleop": cmd_teleop,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
