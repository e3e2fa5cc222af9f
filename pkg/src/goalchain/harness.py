"""Experiment orchestration: training runs, evaluation, ablations, exports.

Every run writes a self-describing directory: the resolved config snapshot,
metrics/episode CSV streams, checkpoints, a final trajectory dump and a
summary.  A run is a pure function of its config (seed included), so two
runs of the same directory contents are bit-identical.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from .config import ConfigError, RunConfig, save_config, validate
from .demo import Demonstration, load_demo
from .dubins import DubinsMazeEnv, DubinsState
from .episode import AGSState, CAUSE_SUCCESS, ObsEncoder, run_episode
from .goals import GoalSequence, build_demo_buffer, compute_vc_dataset, extract_goals, save_goal_artifacts
from .networks import load_checkpoint, save_checkpoint
from .sac import BatchSpec, LearnerConfig, SACLearner

VARIANT_GRID = (("vanilla", False), ("db", False), ("db", True),
                ("vc", False), ("vc", True))


def variant_label(variant, ags):
    if variant == "vanilla":
        return "vanilla"
    return f"{variant}_{'ags' if ags else 'noags'}"


@dataclass
class EvalReport:
    episodes: int
    full_success_rate: float
    goal_rates: list
    mean_return: float
    mean_steps: float
    trajectories: list = field(default_factory=list)

    def to_dict(self):
        return {"episodes": self.episodes,
                "full_success_rate": self.full_success_rate,
                "goal_rates": self.goal_rates, "mean_return": self.mean_return,
                "mean_steps": self.mean_steps}


def _prepare_world(cfg: RunConfig, demo: Demonstration | None):
    if demo is None:
        if not cfg.demo_path:
            raise ConfigError("demo_path: required (generate one with generate-demo)")
        demo = load_demo(cfg.demo_path)
    if cfg.variant == "db" and demo.actions is None:
        raise ConfigError("demo_path: the db variant needs a demonstration "
                          "with actions, this file has states only")
    goals = extract_goals(demo, cfg.n_goal)
    return demo, goals


def _build_learner(cfg: RunConfig, demo, goals, rng):
    enc = ObsEncoder(cfg.maze_layout().bounds, cfg.n_goal)
    spec = BatchSpec(batch_size=cfg.batch_size, demo_fraction=cfg.demo_fraction,
                     relabel_fraction=cfg.relabel_fraction, variant=cfg.variant,
                     ags=cfg.ags)
    lcfg = LearnerConfig(gamma=cfg.gamma, lr=cfg.lr, tau=cfg.tau,
                         hidden=tuple(cfg.hidden), alpha_init=cfg.alpha_init,
                         alpha_auto=cfg.alpha_auto,
                         target_entropy=cfg.target_entropy, warmup=cfg.warmup,
                         capacity=cfg.capacity)
    demo_buffer = build_demo_buffer(demo, goals) if demo.actions is not None else None
    vc_dataset = (compute_vc_dataset(demo, goals, cfg.gamma)
                  if cfg.variant == "vc" else None)
    learner = SACLearner(enc, goals, spec, lcfg,
                         action_bound=cfg.env_config().action_bound, rng=rng,
                         demo_buffer=demo_buffer, vc_dataset=vc_dataset)
    return learner


def evaluate_policy(learner, cfg: RunConfig, episodes, keep_trajectories=False):
    """Deterministic-policy episodes from the single reset; switching off."""
    goals = learner.goals
    n = goals.n_goal
    hits = np.zeros(n)
    successes = 0
    returns = []
    steps = []
    trajs = []
    for _ in range(episodes):
        env = DubinsMazeEnv(cfg.maze_layout(), cfg.env_config(), cfg.start_state())
        rec = run_episode(env, goals, learner.mean_policy_fn, rng=None,
                          t_max=cfg.env_config().t_max)
        hits += np.asarray(rec.goal_hits, dtype=float)
        successes += rec.cause == CAUSE_SUCCESS and all(rec.goal_hits)
        gamma = cfg.gamma
        returns.append(sum(tr.reward * gamma ** k
                           for k, tr in enumerate(rec.transitions)))
        steps.append(rec.steps)
        if keep_trajectories:
            trajs.append([tr.state for tr in rec.transitions]
                         + [rec.transitions[-1].next_state])
    if episodes == 0:
        return EvalReport(0, 0.0, [0.0] * n, 0.0, 0.0)
    return EvalReport(episodes, successes / episodes, (hits / episodes).tolist(),
                      float(np.mean(returns)), float(np.mean(steps)),
                      trajectories=trajs)


class _RunWriter:
    """CSV/JSON emitters for one run directory."""

    def __init__(self, cfg: RunConfig):
        self.dir = cfg.out_dir
        os.makedirs(self.dir, exist_ok=True)
        os.makedirs(os.path.join(self.dir, "checkpoints"), exist_ok=True)
        save_config(cfg, os.path.join(self.dir, "config.json"))
        n = cfg.n_goal
        self._metrics_f = open(os.path.join(self.dir, "metrics.csv"), "w", newline="")
        self.metrics = csv.writer(self._metrics_f)
        self.metrics.writerow(
            ["step", "eval_success", "eval_return", "eval_steps"]
            + [f"goal_rate_{i}" for i in range(1, n + 1)]
            + ["ags_switches", "critic_loss", "actor_loss", "value_loss",
               "alpha", "entropy"]
            + [f"q_max_{i}" for i in range(1, n + 1)])
        self._train_f = open(os.path.join(self.dir, "train_log.csv"), "w", newline="")
        self.train = csv.writer(self._train_f)
        self.train.writerow(["step", "critic_loss", "actor_loss", "value_loss",
                             "alpha", "entropy"])
        self._ep_f = open(os.path.join(self.dir, "episodes.csv"), "w", newline="")
        self.episodes = csv.writer(self._ep_f)
        self.episodes.writerow(["episode", "end_step", "steps", "reward", "cause",
                                "reached_index", "ags_switches"])

    def flush(self):
        for f in (self._metrics_f, self._train_f, self._ep_f):
            f.flush()

    def close(self):
        for f in (self._metrics_f, self._train_f, self._ep_f):
            f.close()


def run_training(cfg: RunConfig, demo: Demonstration | None = None) -> dict:
    """Execute one full training run; returns the summary dict."""
    validate(cfg)
    t_start = time.time()
    rng = np.random.default_rng(cfg.seed)
    demo, goals = _prepare_world(cfg, demo)
    learner = _build_learner(cfg, demo, goals, rng)
    writer = _RunWriter(cfg)
    save_goal_artifacts(os.path.join(cfg.out_dir, "goals.json"), goals)
    env_cfg = cfg.env_config()
    env = DubinsMazeEnv(cfg.maze_layout(), env_cfg, cfg.start_state())
    ags = AGSState(k=cfg.ags_k) if cfg.ags else None
    bound = env_cfg.action_bound
    n = cfg.n_goal

    state = {"steps": 0, "episodes": 0, "switch_total": 0,
             "first_solve_step": None, "stop_at": None,
             "last_train": {"critic_loss": math.nan, "actor_loss": math.nan,
                            "value_loss": math.nan, "alpha": math.nan,
                            "entropy": math.nan},
             "eval_curve": []}

    def policy_fn(s, i, g, prng):
        if not learner.ready():
            return prng.uniform(-bound, bound)
        return learner.policy_fn(s, i, g, prng)

    def thresholds_row():
        return [("" if ags is None or ags.threshold(i) is None
                 else ags.threshold(i)) for i in range(1, n + 1)]

    def run_eval():
        report = evaluate_policy(learner, cfg, cfg.eval_episodes)
        solved = report.full_success_rate >= 1.0 and cfg.eval_episodes > 0
        if solved and state["first_solve_step"] is None:
            state["first_solve_step"] = state["steps"]
            if cfg.stop_on_solve:
                state["stop_at"] = state["steps"] + cfg.solve_extra_steps
        state["eval_curve"].append([state["steps"], report.full_success_rate])
        lt = state["last_train"]
        writer.metrics.writerow(
            [state["steps"], report.full_success_rate, report.mean_return,
             report.mean_steps] + report.goal_rates
            + [state["switch_total"], lt["critic_loss"], lt["actor_loss"],
               lt["value_loss"], lt["alpha"], lt["entropy"]]
            + thresholds_row())
        writer.flush()

    def save_ckpt(tag):
        path = os.path.join(cfg.out_dir, "checkpoints", f"ckpt_{tag}.json")
        save_checkpoint(path, learner.nets.as_dict(),
                        extra={"log_alpha": learner.nets.log_alpha,
                               "step": state["steps"], "variant": cfg.variant})
        return path

    def on_step(tr):
        learner.add_transition(tr)
        state["steps"] += 1
        metrics = learner.train_step()
        if not metrics.get("skipped"):
            state["last_train"] = {
                "critic_loss": metrics["critic_loss"],
                "actor_loss": metrics["actor_loss"],
                "value_loss": metrics.get("value_loss", math.nan),
                "alpha": metrics["alpha"], "entropy": metrics["entropy"]}
            if state["steps"] % cfg.log_interval == 0:
                lt = state["last_train"]
                writer.train.writerow([state["steps"], lt["critic_loss"],
                                       lt["actor_loss"], lt["value_loss"],
                                       lt["alpha"], lt["entropy"]])
        if state["steps"] % cfg.eval_interval == 0:
            run_eval()
        if cfg.checkpoint_interval and state["steps"] % cfg.checkpoint_interval == 0:
            save_ckpt(state["steps"])
        if state["steps"] >= cfg.total_steps:
            return False
        if state["stop_at"] is not None and state["steps"] >= state["stop_at"]:
            return False
        return True

    while state["steps"] < cfg.total_steps:
        if state["stop_at"] is not None and state["steps"] >= state["stop_at"]:
            break
        reset_state = None
        start_index = 1
        if cfg.reset_mode == "demonstrated":
            j = int(rng.integers(1, n + 1))
            t = goals.anchors[j - 2] if j > 1 else 0
            reset_state = demo.states[t]
            start_index = j
        rec = run_episode(env, goals, policy_fn, rng, env_cfg.t_max,
                          target_q=learner.target_q_fn if cfg.ags else None,
                          ags=ags, start_index=start_index,
                          reset_state=reset_state, step_hook=on_step)
        state["episodes"] += 1
        state["switch_total"] += rec.ags_switches
        summ = rec.summary()
        writer.episodes.writerow([state["episodes"], state["steps"], summ["steps"],
                                  summ["reward"], summ["cause"],
                                  summ["reached_index"], summ["ags_switches"]])

    if not state["eval_curve"] or state["eval_curve"][-1][0] != state["steps"]:
        if cfg.total_steps > 0:
            run_eval()
    final_ckpt = save_ckpt("final")

    final_eval = evaluate_policy(learner, cfg, max(cfg.eval_episodes, 1),
                                 keep_trajectories=True)
    traj_path = os.path.join(cfg.out_dir, "trajectory.json")
    with open(traj_path, "w") as f:
        json.dump({"trajectory": final_eval.trajectories[0],
                   "goals": [list(g) for g in goals.goals]}, f)

    summary = {
        "variant": cfg.variant, "ags": cfg.ags, "reset_mode": cfg.reset_mode,
        "seed": cfg.seed, "total_steps": state["steps"],
        "episodes": state["episodes"],
        "solved": state["first_solve_step"] is not None,
        "first_solve_step": state["first_solve_step"],
        "final_success": final_eval.full_success_rate,
        "ags_switches": state["switch_total"],
        "eval_curve": state["eval_curve"],
        "checkpoint": final_ckpt,
        "wall_time_s": round(time.time() - t_start, 3),
    }
    with open(os.path.join(cfg.out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
    writer.close()

    try:
        from . import figures
        figures.plot_trajectory(os.path.join(cfg.out_dir, "trajectory.png"),
                                cfg.maze_layout(), final_eval.trajectories[0],
                                goals)
    except Exception as e:  # figures are best-effort companions to the data
        print(f"[goalchain] trajectory figure failed: {e}")
    return summary


def _learner_from_checkpoint(ckpt_path, cfg: RunConfig, demo=None):
    demo, goals = _prepare_world(cfg, demo)
    rng = np.random.default_rng(cfg.seed)
    learner = _build_learner(cfg, demo, goals, rng)
    nets, extra = load_checkpoint(ckpt_path)
    mine = learner.nets.as_dict()
    for name, net in nets.items():
        if name not in mine:
            continue
        if net.layer_sizes != mine[name].layer_sizes:
            raise ValueError(
                f"{ckpt_path}: {name} has layers {net.layer_sizes}, config "
                f"implies {mine[name].layer_sizes}")
        mine[name].theta[...] = net.theta
    if "log_alpha" in extra:
        learner.nets.log_alpha = float(extra["log_alpha"])
    return learner, demo, goals


def evaluate_checkpoint(ckpt_path, cfg: RunConfig, episodes, out_path=None,
                        demo=None) -> EvalReport:
    """Load a checkpoint and score it from the single reset state."""
    learner, demo, goals = _learner_from_checkpoint(ckpt_path, cfg, demo)
    report = evaluate_policy(learner, cfg, episodes, keep_trajectories=True)
    if out_path:
        with open(out_path, "w") as f:
            json.dump(report.to_dict(), f, indent=2)
    return report


def _ablation_worker(args):
    cfg_dict, variant, ags, seed = args
    cfg = RunConfig(**cfg_dict)
    cfg.variant = variant
    cfg.ags = ags
    cfg.seed = seed
    cfg.out_dir = os.path.join(cfg.out_dir, f"{variant_label(variant, ags)}_seed{seed}")
    summary_path = os.path.join(cfg.out_dir, "summary.json")
    if os.path.exists(summary_path) and _same_config(cfg):
        with open(summary_path) as f:
            return json.load(f)
    try:
        return run_training(cfg)
    except Exception as e:
        return {"variant": variant, "ags": ags, "seed": seed, "failed": str(e)}


def _same_config(cfg: RunConfig) -> bool:
    """A cached run only counts if it was produced by this exact config."""
    path = os.path.join(cfg.out_dir, "config.json")
    if not os.path.exists(path):
        return False
    with open(path) as f:
        saved = json.load(f)
    return saved == cfg.to_dict()


def run_ablation(base_cfg: RunConfig, seeds, workers=2,
                 grid=VARIANT_GRID) -> dict:
    """Train every variant x seed, then aggregate solved-by-step curves.

    Completed runs (an existing summary.json) are reused, so an interrupted
    ablation resumes where it stopped.  Failures are recorded and skipped by
    the aggregation.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ConfigError("ablation needs at least 2 seeds")
    jobs = [(base_cfg.to_dict(), variant, ags, seed)
            for variant, ags in grid for seed in seeds]
    if workers <= 1:
        results = []
        for k, job in enumerate(jobs):
            results.append(_ablation_worker(job))
            _progress(k + 1, len(jobs), results[-1])
    else:
        # small-matrix math: one BLAS thread per worker, parallelism lives at
        # the process level (inherited by spawned children before numpy loads)
        os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
        os.environ.setdefault("OMP_NUM_THREADS", "1")
        ctx = get_context("spawn")
        results = []
        with ctx.Pool(processes=workers) as pool:
            for k, res in enumerate(pool.imap(_ablation_worker, jobs, chunksize=1)):
                results.append(res)
                _progress(k + 1, len(jobs), res)
    return aggregate_ablation(base_cfg, results)


def _progress(done, total, res):
    import sys
    tag = (f"failed: {res['failed']}" if res.get("failed") else
           f"solved={res.get('solved')} at {res.get('first_solve_step')}")
    label = variant_label(res.get("variant", "?"), res.get("ags", False))
    print(f"[ablate {done}/{total}] {label} seed {res.get('seed')}: {tag}",
          file=sys.stderr, flush=True)


def solved_by_curve(summary, step_grid):
    """Per-seed indicator curve: has the full sequence been solved by step t.

    Reported as a running max, so it is monotone by construction.
    """
    first = summary.get("first_solve_step")
    return [1.0 if (first is not None and first <= t) else 0.0 for t in step_grid]


def aggregate_ablation(base_cfg: RunConfig, results) -> dict:
    step_grid = list(range(0, base_cfg.total_steps + 1, base_cfg.eval_interval))
    by_variant = {}
    failures = [r for r in results if r.get("failed")]
    for r in results:
        if r.get("failed"):
            continue
        label = variant_label(r["variant"], r["ags"])
        by_variant.setdefault(label, []).append(r)
    curves = {}
    for label, runs in sorted(by_variant.items()):
        mat = np.array([solved_by_curve(r, step_grid) for r in runs])
        mean = mat.mean(axis=0)
        std = mat.std(axis=0)
        auc = float(np.trapezoid(mean, step_grid) / max(step_grid[-1], 1))
        curves[label] = {
            "seeds": [r["seed"] for r in runs],
            "solved": int(sum(r["solved"] for r in runs)),
            "first_solve_steps": [r["first_solve_step"] for r in runs],
            "mean": mean.tolist(), "std": std.tolist(), "auc": auc,
        }
    summary = {"step_grid": step_grid, "variants": curves,
               "failures": failures,
               "n_seeds": len({r.get("seed") for r in results})}
    out_dir = base_cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "ablation_summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
    with open(os.path.join(out_dir, "ablation_curves.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", "step", "mean_solved", "std_solved"])
        for label, c in curves.items():
            for t, m, s in zip(step_grid, c["mean"], c["std"]):
                w.writerow([label, t, m, s])
    try:
        from . import figures
        figures.plot_ablation_curves(os.path.join(out_dir, "ablation_curves.png"),
                                     step_grid, curves)
    except Exception as e:
        print(f"[goalchain] ablation figure failed: {e}")
    return summary


def export_value_grid(ckpt_path, cfg: RunConfig, orientations=20, nx=50, ny=50,
                      index=1, out_csv=None, out_png=None, demo=None):
    """Max critic value over uniformly spaced headings on an (x, y) lattice.

    Conditioned on one (index, goal) pair from the run's goal sequence.  The
    vc variant reads its state-value network; the others score the twin
    critics at the deterministic action.
    """
    learner, demo, goals = _learner_from_checkpoint(ckpt_path, cfg, demo)
    layout = cfg.maze_layout()
    x0, x1, y0, y1 = layout.bounds
    if not 1 <= index <= goals.n_goal:
        raise ConfigError(f"index: must be in [1, {goals.n_goal}]")
    if orientations < 1:
        raise ConfigError("orientations: must be >= 1")
    if nx < 1 or ny < 1:
        raise ConfigError("grid size: must be >= 1")
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    thetas = -math.pi + 2 * math.pi * np.arange(orientations) / orientations
    goal = goals.goal(index)
    enc = learner.enc
    nets = learner.nets

    gx, gy = np.meshgrid(xs, ys)
    values = np.full((ny, nx), -np.inf)
    for th in thetas:
        states = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, th)], axis=1)
        idx = np.full(states.shape[0], index, dtype=np.int64)
        garr = np.tile(goal, (states.shape[0], 1))
        feats = enc.encode_batch(states, idx, garr)
        if nets.v is not None:
            vals = nets.v.forward(feats)[:, 0]
        else:
            acts = nets.policy.mean_action(feats)
            xin = np.concatenate([feats, acts], axis=1)
            vals = np.minimum(nets.q1.forward(xin), nets.q2.forward(xin))[:, 0]
        values = np.maximum(values, vals.reshape(ny, nx))

    if out_csv:
        with open(out_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["x", "y", "value"])
            for r, yv in enumerate(ys):
                for c, xv in enumerate(xs):
                    w.writerow([xv, yv, values[r, c]])
    if out_png:
        try:
            from . import figures
            figures.plot_value_grid(out_png, layout, xs, ys, values, goals, index)
        except Exception as e:
            print(f"[goalchain] value-grid figure failed: {e}")
    return xs, ys, values
