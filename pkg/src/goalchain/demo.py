"""Demonstration generation and persistence.

A demonstration is a single feasible state/action trajectory through the
maze, found with a kinodynamic rapidly-exploring random tree: expansions
forward-simulate random constant controls, so the recorded actions replay
bit-exactly through the simulator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dubins import TWO_PI, DubinsMazeEnv, DubinsState, EnvConfig, MazeLayout


class PlanningFailure(RuntimeError):
    """The tree exhausted its iteration budget without reaching the goal."""


class DemoFormatError(ValueError):
    """A demonstration file is malformed or inconsistent."""


@dataclass
class Demonstration:
    """States (T+1), optional actions (T) and the world they were recorded in."""

    states: list
    actions: list | None
    env_config: EnvConfig
    maze: MazeLayout

    def __post_init__(self):
        if self.actions is not None and len(self.actions) != len(self.states) - 1:
            raise DemoFormatError(
                f"{len(self.states)} states need {len(self.states) - 1} actions, "
                f"got {len(self.actions)}")
        if len(self.states) < 2:
            raise DemoFormatError("demonstration needs at least two states")

    @property
    def start(self):
        return self.states[0]

    def __len__(self):
        return len(self.states) - 1

    def make_env(self):
        return DubinsMazeEnv(self.maze, self.env_config, self.start)

    def replay_states(self):
        """Re-run the recorded actions through a fresh env."""
        if self.actions is None:
            raise DemoFormatError("demonstration has no actions to replay")
        env = self.make_env()
        out = [env.reset()]
        for a in self.actions:
            s, done = env.step(a)
            out.append(s)
            if done and len(out) <= len(self.actions):
                raise DemoFormatError("replay collided before the final state")
        return out

    def verify_replay(self):
        """Check the replay invariant: stored states reproduce exactly."""
        for got, want in zip(self.replay_states(), self.states):
            if (got.x, got.y, got.theta) != (want.x, want.y, want.theta):
                return False
        return True


@dataclass
class RRTConfig:
    max_iters: int = 20000
    goal_center: tuple = (0.625, 4.375)
    goal_radius: float = 0.35
    n_controls: int = 5          # candidate constant controls per expansion
    expand_steps: int = 10       # steps each candidate is simulated for
    seed: int = 0
    goal_bias: float = 0.1       # fraction of samples drawn at the goal
    angle_weight: float = 0.5    # kappa in the nearest-node metric

    def __post_init__(self):
        for name in ("max_iters", "n_controls", "expand_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self):
        return {"max_iters": self.max_iters, "goal_center": list(self.goal_center),
                "goal_radius": self.goal_radius, "n_controls": self.n_controls,
                "expand_steps": self.expand_steps, "seed": self.seed,
                "goal_bias": self.goal_bias, "angle_weight": self.angle_weight}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["goal_center"] = tuple(d["goal_center"])
        return cls(**d)


def rrt_plan(maze: MazeLayout, env_config: EnvConfig, start: DubinsState,
             cfg: RRTConfig) -> Demonstration:
    """Grow a kinodynamic tree until a node lands in the goal region.

    Expansion: sample an (x, y, theta) target, pick the nearest node under
    the weighted metric, forward-simulate ``n_controls`` random constant
    turn rates for ``expand_steps`` steps each, and keep the collision-free
    endpoint closest to the target.
    """
    rng = np.random.default_rng(cfg.seed)
    env = DubinsMazeEnv(maze, env_config, start)
    x0, x1, y0, y1 = maze.bounds
    bound = env_config.action_bound

    xs = [start.x]
    ys = [start.y]
    ths = [start.theta]
    states = [start]
    parents = [-1]
    controls = [0.0]

    gx, gy = cfg.goal_center

    def in_goal(s):
        return (s.x - gx) ** 2 + (s.y - gy) ** 2 <= cfg.goal_radius ** 2

    if in_goal(start):
        raise ValueError("start already inside the goal region")

    for _ in range(cfg.max_iters):
        if rng.random() < cfg.goal_bias:
            target = (gx, gy, rng.uniform(-math.pi, math.pi))
        else:
            target = (rng.uniform(x0, x1), rng.uniform(y0, y1),
                      rng.uniform(-math.pi, math.pi))

        dx = np.asarray(xs) - target[0]
        dy = np.asarray(ys) - target[1]
        dth = np.abs((np.asarray(ths) - target[2] + math.pi) % TWO_PI - math.pi)
        near = int(np.argmin(np.hypot(dx, dy) + cfg.angle_weight * dth))

        best = None
        best_d = np.inf
        for _ in range(cfg.n_controls):
            a = rng.uniform(-bound, bound)
            env.reset_to(states[near])
            endpoint = None
            for _ in range(cfg.expand_steps):
                s, done = env.step(a)
                if done:
                    endpoint = None
                    break
                endpoint = s
            if endpoint is None:
                continue
            d = math.hypot(endpoint.x - target[0], endpoint.y - target[1])
            if d < best_d:
                best_d = d
                best = (endpoint, a)
        if best is None:
            continue

        endpoint, a = best
        states.append(endpoint)
        xs.append(endpoint.x)
        ys.append(endpoint.y)
        ths.append(endpoint.theta)
        parents.append(near)
        controls.append(a)

        if in_goal(endpoint):
            return _extract_path(states, parents, controls, len(states) - 1,
                                 cfg, env_config, maze, start)

    raise PlanningFailure(
        f"no path to goal region {cfg.goal_center} r={cfg.goal_radius} "
        f"within {cfg.max_iters} iterations (seed {cfg.seed})")


def _extract_path(states, parents, controls, leaf, cfg, env_config, maze, start):
    chain = []
    node = leaf
    while node != -1:
        chain.append(node)
        node = parents[node]
    chain.reverse()

    actions = []
    for node in chain[1:]:
        actions.extend([controls[node]] * cfg.expand_steps)

    # Re-simulate once from the root so every intermediate step is recorded;
    # tree nodes only store edge endpoints.
    env = DubinsMazeEnv(maze, env_config, start)
    full_states = [env.reset()]
    for a in actions:
        s, done = env.step(a)
        if done:
            raise AssertionError("tree edge collided during path re-simulation")
        full_states.append(s)
    return Demonstration(states=full_states, actions=actions,
                         env_config=env_config, maze=maze)


def save_demo(demo: Demonstration, path):
    doc = {
        "format": "goalchain-demo-v1",
        "config": {
            "env": demo.env_config.to_dict(),
            "maze": demo.maze.to_dict(),
            "start": [demo.start.x, demo.start.y, demo.start.theta],
        },
        "states": [[s.x, s.y, s.theta] for s in demo.states],
        "actions": list(demo.actions) if demo.actions is not None else None,
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_demo(path) -> Demonstration:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise DemoFormatError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")
    if not isinstance(doc, dict) or doc.get("format") != "goalchain-demo-v1":
        raise DemoFormatError(f"{path}: missing or unknown 'format' field")
    for key in ("config", "states"):
        if key not in doc:
            raise DemoFormatError(f"{path}: missing field '{key}'")
    cfg = doc["config"]
    for key in ("env", "maze"):
        if key not in cfg:
            raise DemoFormatError(f"{path}: config missing '{key}'")
    try:
        env_config = EnvConfig.from_dict(cfg["env"])
        maze = MazeLayout.from_dict(cfg["maze"])
    except (TypeError, KeyError, ValueError) as e:
        raise DemoFormatError(f"{path}: bad config section: {e}")
    states = []
    for k, row in enumerate(doc["states"]):
        if not isinstance(row, list) or len(row) != 3:
            raise DemoFormatError(f"{path}: states[{k}] is not an [x, y, theta] triple")
        states.append(DubinsState(*map(float, row)))
    actions = doc.get("actions")
    if actions is not None:
        actions = [float(a) for a in actions]
    try:
        return Demonstration(states=states, actions=actions,
                             env_config=env_config, maze=maze)
    except DemoFormatError as e:
        raise DemoFormatError(f"{path}: {e}")
