"""Turning a raw demonstration into training artifacts.

Three products: the ordered goal sequence (equal arc-length split of the
projected demonstration), the demo transition buffer (each transition
augmented with the goal/index it serves under the sequential-success walk),
and the value dataset pairing every demonstrated state with its theoretical
discounted return.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dubins import is_success, project


class ExtractionError(ValueError):
    """The demonstration cannot be split into the requested goals."""


class ConstructionError(ValueError):
    """The sequential-success walk failed; eps_success and goal spacing clash."""


@dataclass(frozen=True)
class GoalSequence:
    """Ordered goals g_1..g_N with their demonstration anchor timesteps."""

    goals: tuple          # N pairs (x, y)
    eps_dist: float       # arc-length spacing the goals were extracted at
    anchors: tuple        # anchors[i] = demo timestep whose projection is goals[i]

    @property
    def n_goal(self):
        return len(self.goals)

    def goal(self, index):
        """1-based accessor, clamped into the valid range."""
        return self.goals[min(max(index, 1), self.n_goal) - 1]

    def as_array(self):
        return np.asarray(self.goals, dtype=np.float64)

    def to_dict(self):
        return {"goals": [list(g) for g in self.goals], "eps_dist": self.eps_dist,
                "anchors": list(self.anchors)}


@dataclass(frozen=True)
class AugmentedTransition:
    """One (state, goal, index) -> (next state, next goal, next index) step."""

    state: tuple          # (x, y, theta)
    index: int            # 1-based goal index
    goal: tuple
    action: float
    reward: float
    next_state: tuple
    next_index: int
    next_goal: tuple
    done: bool            # terminal for bootstrapping (collision / final success)
    success: bool

    def to_dict(self):
        return {"state": list(self.state), "index": self.index, "goal": list(self.goal),
                "action": self.action, "reward": self.reward,
                "next_state": list(self.next_state), "next_index": self.next_index,
                "next_goal": list(self.next_goal), "done": self.done,
                "success": self.success}


@dataclass(frozen=True)
class VCEntry:
    """A demonstrated state with its theoretical discounted return."""

    state: tuple
    index: int
    goal: tuple
    v_demo: float

    def to_dict(self):
        return {"state": list(self.state), "index": self.index,
                "goal": list(self.goal), "v_demo": self.v_demo}


def extract_goals(demo, n_goal: int) -> GoalSequence:
    """Split the projected demonstration into ``n_goal`` pieces of equal arc
    length and take each piece's final demonstrated point as a goal.

    Goals are always projections of demonstrated states: the first state at
    or beyond each arc-length boundary.
    """
    if n_goal < 1:
        raise ExtractionError("n_goal must be >= 1")
    if len(demo.states) < n_goal + 1:
        raise ExtractionError(
            f"demonstration has {len(demo.states)} states, need > {n_goal}")
    pts = np.array([[s.x, s.y] for s in demo.states])
    seg = np.sqrt(((pts[1:] - pts[:-1]) ** 2).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])
    if total <= 0.0:
        raise ExtractionError("demonstration has zero arc length")
    eps_dist = total / n_goal

    anchors = []
    t = 0
    for j in range(1, n_goal + 1):
        boundary = min(j * eps_dist, total)
        while cum[t] < boundary:
            t += 1
        anchors.append(t)
    if len(set(anchors)) != n_goal:
        raise ExtractionError(
            f"anchors collapsed ({anchors}); n_goal={n_goal} too large for this "
            "demonstration")
    goals = tuple(project(demo.states[t]) for t in anchors)
    return GoalSequence(goals=goals, eps_dist=eps_dist, anchors=tuple(anchors))


def _success_walk(demo, goals: GoalSequence):
    """Walk the demo forward, tracking the first not-yet-achieved goal.

    Returns (index_at, achieved_at): ``index_at[t]`` is the 1-based active
    index at state t (n_goal + 1 once everything is achieved);
    ``achieved_at[j]`` is the transition step at which goal j+1 was achieved.
    The same success predicate as the environment is used, so there is no
    train/demo drift.
    """
    eps = demo.env_config.eps_success
    n = goals.n_goal
    index_at = [1]
    achieved_at = [None] * n
    i = 1
    for t in range(len(demo.states) - 1):
        nxt = demo.states[t + 1]
        if i <= n and is_success(nxt, goals.goal(i), eps):
            achieved_at[i - 1] = t
            i += 1
        index_at.append(i)
    missing = [j + 1 for j, a in enumerate(achieved_at) if a is None]
    if missing:
        raise ConstructionError(
            f"demonstration never achieves goals {missing} within "
            f"eps_success={eps}; eps_dist={goals.eps_dist:.4f} is inconsistent")
    return index_at, achieved_at


def build_demo_buffer(demo, goals: GoalSequence) -> list[AugmentedTransition]:
    """Tag every demo transition with the goal/index it serves.

    Transitions after the final goal has been achieved carry no goal and are
    dropped; the transition achieving the final goal is marked done.
    """
    if demo.actions is None:
        raise ConstructionError("demo buffer needs demonstrated actions")
    index_at, _ = _success_walk(demo, goals)
    n = goals.n_goal
    out = []
    for t in range(len(demo.states) - 1):
        i = index_at[t]
        if i > n:
            break
        s, nxt = demo.states[t], demo.states[t + 1]
        i_next = index_at[t + 1]
        success = i_next > i
        done = success and i == n
        out.append(AugmentedTransition(
            state=(s.x, s.y, s.theta), index=i, goal=goals.goal(i),
            action=float(demo.actions[t]), reward=1.0 if success else 0.0,
            next_state=(nxt.x, nxt.y, nxt.theta),
            next_index=min(i_next, n), next_goal=goals.goal(i_next),
            done=done, success=success))
    return out


def compute_vc_dataset(demo, goals: GoalSequence, gamma: float) -> list[VCEntry]:
    """Theoretical return of each demonstrated state.

    The reward for goal j lands on the transition entering its success
    state; from state t, the transition at step u contributes gamma**(u-t).
    States past the last achievement keep index n_goal and value 0.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    index_at, achieved_at = _success_walk(demo, goals)
    n = goals.n_goal
    out = []
    for t, s in enumerate(demo.states):
        i = index_at[t]
        v = 0.0
        for j in range(i, n + 1):
            u = achieved_at[j - 1]
            if u >= t:
                v += gamma ** (u - t)
        i_entry = min(i, n)
        out.append(VCEntry(state=(s.x, s.y, s.theta), index=i_entry,
                           goal=goals.goal(i_entry), v_demo=v))
    return out


def save_goal_artifacts(path, goals: GoalSequence, demo_buffer=None, vc_dataset=None):
    """Dump the pipeline products as one JSON document for inspection."""
    doc = {"format": "goalchain-goals-v1", "goal_sequence": goals.to_dict()}
    if demo_buffer is not None:
        doc["demo_buffer"] = [tr.to_dict() for tr in demo_buffer]
    if vc_dataset is not None:
        doc["vc_dataset"] = [e.to_dict() for e in vc_dataset]
    with open(path, "w") as f:
        json.dump(doc, f)
