"""Index-augmented episode loop with approximate goal switching.

The rollout walks the goal sequence: reaching the active goal pays reward 1
and shifts the index; bootstrapping then continues onto the next goal, which
is what propagates value across the sequence.  When a per-goal Q threshold
is known, coming close enough in value triggers a grace countdown of k
steps, after which the index advances without reward so later goals still
get training experience.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dubins import is_success
from .goals import AugmentedTransition, GoalSequence

CAUSE_SUCCESS = "success"      # final goal genuinely reached
CAUSE_COLLISION = "collision"
CAUSE_TIMEOUT = "timeout"


def reward(next_state, goal, eps_success):
    """Sparse goal reward; shares the environment's success predicate."""
    return 1.0 if is_success(next_state, goal, eps_success) else 0.0


def discount(done, gamma):
    """Per-transition discount: zero only on environment-terminal steps
    (collision or final-goal success).  Intermediate successes keep the
    constant factor, so the next goal's value flows into the current one.
    """
    return 0.0 if done else gamma


class ObsEncoder:
    """Network features for (state, index, goal) observations.

    Positions are scaled by the maze extent; heading enters as cos/sin; the
    index is a one-hot over the goal sequence (clamped into range).
    """

    def __init__(self, bounds, n_goal):
        x0, x1, y0, y1 = bounds
        self.origin = (x0, y0)
        self.scale = max(x1 - x0, y1 - y0)
        self.n_goal = n_goal
        self.dim = 4 + n_goal + 2
        self._eye = np.eye(n_goal)

    def encode(self, state, index, goal):
        x0, y0 = self.origin
        s = self.scale
        out = np.zeros(self.dim)
        out[0] = (state[0] - x0) / s
        out[1] = (state[1] - y0) / s
        out[2] = math.cos(state[2])
        out[3] = math.sin(state[2])
        out[4 + min(max(index, 1), self.n_goal) - 1] = 1.0
        out[-2] = (goal[0] - x0) / s
        out[-1] = (goal[1] - y0) / s
        return out

    def encode_batch(self, states, indices, goals):
        states = np.asarray(states, dtype=np.float64)
        n = states.shape[0]
        out = np.zeros((n, self.dim))
        x0, y0 = self.origin
        s = self.scale
        out[:, 0] = (states[:, 0] - x0) / s
        out[:, 1] = (states[:, 1] - y0) / s
        out[:, 2] = np.cos(states[:, 2])
        out[:, 3] = np.sin(states[:, 2])
        idx = np.clip(np.asarray(indices, dtype=np.int64), 1, self.n_goal) - 1
        out[:, 4 : 4 + self.n_goal] = self._eye[idx]
        out[:, -2] = (goals[:, 0] - x0) / s
        out[:, -1] = (goals[:, 1] - y0) / s
        return out


@dataclass
class AugmentedObservation:
    state: tuple
    index: int
    goal: tuple


@dataclass
class AGSState:
    """Per-goal Q thresholds plus the episode-scoped switching machinery.

    Thresholds start unset (no switching for that goal until its first
    genuine success) and only ever increase.
    """

    k: int = 2
    q_max: dict = field(default_factory=dict)
    queue: list = field(default_factory=list)   # (state, action, index) triples
    b_ags: bool = False
    t_left: int = 0

    def begin_episode(self, t_max):
        self.queue = []
        self.b_ags = False
        self.t_left = t_max

    def push(self, state, action, index):
        self.queue.append((state, action, index))

    def threshold(self, index):
        return self.q_max.get(index)

    def update_threshold(self, target_q, index, goal):
        """On genuine success: score the state k steps before the success
        step and keep the running maximum per goal."""
        if not self.queue:
            return
        entry = self.queue[max(len(self.queue) - 1 - self.k, 0)]
        q = float(target_q(entry[0], index, goal, entry[1]))
        cur = self.q_max.get(index)
        if cur is None or q > cur:
            self.q_max[index] = q


@dataclass
class EpisodeRecord:
    transitions: list
    cause: str
    goal_hits: list            # per-goal genuine-success flags for this episode
    ags_switches: int
    events: list               # ("ags_activation"| "ags_switch", step, detail)

    @property
    def steps(self):
        return len(self.transitions)

    @property
    def total_reward(self):
        return sum(tr.reward for tr in self.transitions)

    def summary(self):
        reached = max((tr.next_index for tr in self.transitions), default=0)
        return {"steps": self.steps, "reward": self.total_reward,
                "cause": self.cause, "reached_index": reached,
                "ags_switches": self.ags_switches}


def run_episode(env, goals: GoalSequence, policy_fn, rng, t_max,
                target_q=None, ags: AGSState | None = None,
                start_index: int = 1, reset_state=None,
                step_hook=None) -> EpisodeRecord:
    """Roll out one episode under the sequential-goal semantics.

    ``policy_fn(state, index, goal, rng) -> action``;
    ``target_q(state, index, goal, action) -> float`` feeds the switching
    test and threshold updates (may be None, e.g. during evaluation).

    Per step: act, simulate, then exactly one of
      - genuine success: reward 1, index shift, threshold update, fresh
        sub-task clock; terminal if the final goal was reached;
      - switching activation: the remaining budget drops to k steps;
      - budget exhausted or collision: auto-switch if armed (index advances
        without reward, full clock restored), otherwise the episode ends;
      - ordinary step.
    Collisions are terminal in every branch.  The step budget, like the
    recorded transition, is per sub-task: both kinds of index advance reset
    it.  A timeout ends the episode but is stored as non-terminal so
    bootstrapping continues through truncation.  ``step_hook(transition)``
    runs after each recorded step; returning False truncates the episode.
    """
    eps = env.config.eps_success
    n = goals.n_goal
    state = env.reset() if reset_state is None else env.reset_to(reset_state)
    i = start_index
    t_left = t_max
    b_ags = False
    if ags is not None:
        ags.begin_episode(t_max)
    transitions = []
    events = []
    goal_hits = [False] * n
    switches = 0
    cause = None

    while True:
        g = goals.goal(i)
        a = float(policy_fn(state, i, g, rng))
        if ags is not None:
            ags.push((state.x, state.y, state.theta), a, i)
        nxt, env_done = env.step(a)
        succ = is_success(nxt, g, eps)
        r = 1.0 if succ else 0.0
        i_next = i
        done = False

        if succ:
            goal_hits[i - 1] = True
            if ags is not None and target_q is not None:
                ags.update_threshold(target_q, i, g)
            if i == n:
                done = True
                cause = CAUSE_SUCCESS
            else:
                i_next = i + 1
                if env_done:
                    done = True
                    cause = CAUSE_COLLISION
                else:
                    t_left = t_max
                    b_ags = False
                    if ags is not None:
                        ags.b_ags = False
        elif (ags is not None and target_q is not None
              and (thr := ags.threshold(i)) is not None
              and target_q((state.x, state.y, state.theta), i, g, a) >= thr):
            t_left = ags.k
            b_ags = True
            ags.b_ags = True
            ags.t_left = t_left
            events.append(("ags_activation", len(transitions), t_left))
            if env_done:
                done = True
                cause = CAUSE_COLLISION
        elif t_left <= 0 or env_done:
            switched = b_ags and i < n
            if switched:
                switches += 1
                events.append(("ags_switch", len(transitions), i))
                i_next = i + 1
                t_left = t_max
                b_ags = False
                if ags is not None:
                    ags.b_ags = False
            if env_done:
                done = True
                cause = CAUSE_COLLISION
            elif not switched:
                cause = CAUSE_TIMEOUT

        t_left -= 1
        if ags is not None:
            ags.t_left = t_left
        tr = AugmentedTransition(
            state=(state.x, state.y, state.theta), index=i, goal=g, action=a,
            reward=r, next_state=(nxt.x, nxt.y, nxt.theta),
            next_index=min(i_next, n), next_goal=goals.goal(i_next),
            done=done, success=succ)
        transitions.append(tr)

        if step_hook is not None and step_hook(tr) is False and cause is None:
            cause = CAUSE_TIMEOUT
        if cause is not None:
            break
        state, i = nxt, i_next

    return EpisodeRecord(transitions=transitions, cause=cause,
                         goal_hits=goal_hits, ags_switches=switches,
                         events=events)
