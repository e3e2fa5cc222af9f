"""Command-line entry points.

Subcommands: generate-demo, train, eval, ablate, export-value-grid.
Flags mirror the run-config fields; a --config file overrides flags; the
GOALCHAIN_OUT environment variable sets the default output root.
"""

from __future__ import annotations

import os

# Tiny matrices gain nothing from BLAS threads; pin before numpy loads.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse
import json
import sys

from .config import ConfigError, RunConfig, build_config


def _add_run_flags(p):
    p.add_argument("--config", help="JSON config file (overrides flags)")
    p.add_argument("--variant", choices=("vanilla", "db", "vc"))
    ags = p.add_mutually_exclusive_group()
    ags.add_argument("--ags", dest="ags", action="store_true", default=None)
    ags.add_argument("--no-ags", dest="ags", action="store_false", default=None)
    p.add_argument("--reset-mode", dest="reset_mode",
                   choices=("single", "demonstrated"))
    p.add_argument("--seed", type=int)
    p.add_argument("--n-goal", dest="n_goal", type=int)
    p.add_argument("--total-steps", dest="total_steps", type=int)
    p.add_argument("--demo", dest="demo_path")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--demo-fraction", dest="demo_fraction", type=float)
    p.add_argument("--relabel-fraction", dest="relabel_fraction", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--alpha-init", dest="alpha_init", type=float)
    p.add_argument("--warmup", type=int)
    p.add_argument("--ags-k", dest="ags_k", type=int)
    p.add_argument("--eval-interval", dest="eval_interval", type=int)
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int)
    p.add_argument("--log-interval", dest="log_interval", type=int)
    p.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int)
    stop = p.add_mutually_exclusive_group()
    stop.add_argument("--stop-on-solve", dest="stop_on_solve",
                      action="store_true", default=None)
    stop.add_argument("--no-stop-on-solve", dest="stop_on_solve",
                      action="store_false", default=None)
    p.add_argument("--solve-extra-steps", dest="solve_extra_steps", type=int)


def _config_from_args(args) -> RunConfig:
    flags = {k: v for k, v in vars(args).items()
             if k in RunConfig.field_names()}
    return build_config(flag_values=flags, config_path=args.config)


def cmd_generate_demo(args):
    from .demo import RRTConfig, rrt_plan, save_demo
    cfg = _config_from_args(args)
    rrt = RRTConfig(seed=args.seed if args.seed is not None else 0,
                    max_iters=args.max_iters,
                    goal_center=tuple(args.goal_center),
                    goal_radius=args.goal_radius)
    demo = rrt_plan(cfg.maze_layout(), cfg.env_config(), cfg.start_state(), rrt)
    save_demo(demo, args.out_file)
    print(f"demo: {len(demo)} steps, saved to {args.out_file}")
    return 0


def cmd_train(args):
    from .harness import run_training
    cfg = _config_from_args(args)
    if not cfg.out_dir or cfg.out_dir == "runs":
        cfg.out_dir = os.path.join(cfg.out_dir or "runs",
                                   f"{cfg.variant}_seed{cfg.seed}")
    summary = run_training(cfg)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_eval(args):
    from .harness import evaluate_checkpoint
    cfg = _config_from_args(args)
    out = args.report or os.path.join(os.path.dirname(args.checkpoint) or ".",
                                      "eval_report.json")
    report = evaluate_checkpoint(args.checkpoint, cfg, args.episodes, out_path=out)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_ablate(args):
    from .harness import run_ablation
    cfg = _config_from_args(args)
    summary = run_ablation(cfg, seeds=args.seeds, workers=args.workers)
    for label, c in summary["variants"].items():
        print(f"{label}: solved {c['solved']}/{len(c['seeds'])}, auc {c['auc']:.3f}")
    if summary["failures"]:
        print(f"failures: {summary['failures']}")
    return 0


def cmd_export_value_grid(args):
    from .harness import export_value_grid
    cfg = _config_from_args(args)
    out_csv = args.grid_out or "value_grid.csv"
    out_png = os.path.splitext(out_csv)[0] + ".png"
    export_value_grid(args.checkpoint, cfg, orientations=args.orientations,
                      nx=args.nx, ny=args.ny, index=args.index,
                      out_csv=out_csv, out_png=out_png)
    print(f"grid written to {out_csv} ({args.nx}x{args.ny}, "
          f"{args.orientations} headings)")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="goalchain",
        description="Goal-chaining control from a single demonstration in a "
                    "Dubins-car maze")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-demo", help="plan a demonstration with RRT")
    _add_run_flags(p)
    p.add_argument("--max-iters", type=int, default=20000)
    p.add_argument("--goal-center", type=float, nargs=2, default=(0.625, 4.375))
    p.add_argument("--goal-radius", type=float, default=0.35)
    p.add_argument("--out-file", required=True)
    p.set_defaults(fn=cmd_generate_demo)

    p = sub.add_parser("train", help="run one training configuration")
    _add_run_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint deterministically")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--report", help="where to write the JSON report")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the variant grid over seeds")
    _add_run_flags(p)
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument("--workers", type=int, default=2)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("export-value-grid",
                       help="max value over headings on an (x, y) lattice")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--orientations", type=int, default=20)
    p.add_argument("--nx", type=int, default=50)
    p.add_argument("--ny", type=int, default=50)
    p.add_argument("--index", type=int, default=1)
    p.add_argument("--grid-out", help="output CSV path")
    p.set_defaults(fn=cmd_export_value_grid)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
