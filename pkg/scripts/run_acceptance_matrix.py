#!/usr/bin/env python3
"""Produce the full acceptance training matrix ahead of the test suite.

Runs exactly what tests/test_acceptance.py's session fixtures would run, so
a later pytest invocation finds every artifact in place.  Safe to interrupt
and relaunch: completed runs are reused.
"""

import os
import sys

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from goalchain.config import build_config
from goalchain.demo import RRTConfig, rrt_plan, save_demo
from goalchain.dubins import EnvConfig, default_start, serpentine_maze
from goalchain.harness import run_ablation


def main():
    root = os.environ.get("GOALCHAIN_ACCEPT_DIR",
                          os.path.join(os.path.dirname(__file__), "..",
                                       "acceptance_runs"))
    root = os.path.abspath(root)
    os.makedirs(root, exist_ok=True)
    demo_path = os.path.join(root, "demo.json")
    if not os.path.exists(demo_path):
        demo = rrt_plan(serpentine_maze(), EnvConfig(), default_start(),
                        RRTConfig(seed=0))
        save_demo(demo, demo_path)
        print(f"demo: {len(demo)} steps -> {demo_path}")

    seeds = list(range(10))
    workers = int(os.environ.get("GOALCHAIN_WORKERS", "2"))

    base = dict(demo_path=demo_path, total_steps=200_000, stop_on_solve=True,
                checkpoint_interval=0, eval_interval=2000, log_interval=500)

    print("== baseline (demonstrated resets) ==", flush=True)
    cfg = build_config({**base, "reset_mode": "demonstrated",
                        "variant": "vanilla", "ags": False,
                        "out_dir": os.path.join(root, "baseline")})
    run_ablation(cfg, seeds=seeds, workers=workers, grid=(("vanilla", False),))

    print("== ablation grid ==", flush=True)
    cfg = build_config({**base, "out_dir": os.path.join(root, "ablation")})
    summary = run_ablation(cfg, seeds=seeds, workers=workers)
    for label, c in summary["variants"].items():
        print(f"{label}: solved {c['solved']}/10, auc {c['auc']:.3f}")


if __name__ == "__main__":
    main()
