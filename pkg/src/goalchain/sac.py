"""Soft actor-critic updates for the sequential-goal task.

Three variants share one update path:
  - vanilla: plain replay batches;
  - db: critic/actor batches mix an immutable demonstration buffer into
    every batch at a fixed fraction;
  - vc: a separate state-value network is regressed partly toward the
    theoretical demonstrated returns, and Q targets bootstrap through it.
Hindsight relabeling rewrites a fraction of the sampled replay transitions
to their achieved outcome, shifting the index onto the next goal in the
sequence so value keeps propagating backwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .episode import ObsEncoder
from .goals import AugmentedTransition, GoalSequence, VCEntry
from .networks import AdamState, GaussianPolicyHead, MLP, optimizer_step, polyak_update

VARIANTS = ("vanilla", "db", "vc")


@dataclass
class BatchSpec:
    """How training batches are assembled."""

    batch_size: int = 256
    demo_fraction: float = 0.2      # share of each batch drawn from the demo
    relabel_fraction: float = 0.5   # share of replay rows rewritten in hindsight
    variant: str = "db"
    ags: bool = True

    def __post_init__(self):
        if not 0.0 <= self.demo_fraction < 1.0:
            raise ValueError("demo_fraction must be in [0, 1)")
        if not 0.0 <= self.relabel_fraction <= 1.0:
            raise ValueError("relabel_fraction must be in [0, 1]")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass
class LearnerConfig:
    gamma: float = 0.99
    lr: float = 3e-4
    tau: float = 0.005
    hidden: tuple = (64, 64)
    alpha_init: float = 0.2
    alpha_auto: bool = True
    target_entropy: float = -1.0    # minus the action dimension
    warmup: int = 1000
    capacity: int = 1_000_000


class Batch:
    """Column arrays for one sampled batch; ``is_demo`` guards relabeling."""

    __slots__ = ("s", "i", "g", "a", "r", "s2", "i2", "g2", "done", "success",
                 "is_demo")

    def __init__(self, s, i, g, a, r, s2, i2, g2, done, success, is_demo):
        self.s = s
        self.i = i
        self.g = g
        self.a = a
        self.r = r
        self.s2 = s2
        self.i2 = i2
        self.g2 = g2
        self.done = done
        self.success = success
        self.is_demo = is_demo

    @property
    def size(self):
        return self.s.shape[0]


class _Columns:
    """Preallocated transition storage shared by replay and demo buffers."""

    def __init__(self, capacity):
        self.s = np.zeros((capacity, 3))
        self.i = np.zeros(capacity, dtype=np.int64)
        self.g = np.zeros((capacity, 2))
        self.a = np.zeros((capacity, 1))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, 3))
        self.i2 = np.zeros(capacity, dtype=np.int64)
        self.g2 = np.zeros((capacity, 2))
        self.done = np.zeros(capacity, dtype=bool)
        self.success = np.zeros(capacity, dtype=bool)

    def set_row(self, k, tr: AugmentedTransition):
        self.s[k] = tr.state
        self.i[k] = tr.index
        self.g[k] = tr.goal
        self.a[k, 0] = tr.action
        self.r[k] = tr.reward
        self.s2[k] = tr.next_state
        self.i2[k] = tr.next_index
        self.g2[k] = tr.next_goal
        self.done[k] = tr.done
        self.success[k] = tr.success

    def gather(self, idx, is_demo):
        flag = np.full(len(idx), is_demo)
        return Batch(self.s[idx], self.i[idx], self.g[idx], self.a[idx],
                     self.r[idx], self.s2[idx], self.i2[idx], self.g2[idx],
                     self.done[idx], self.success[idx], flag)


class ReplayBuffer:
    """Bounded FIFO store with uniform sampling."""

    def __init__(self, capacity=1_000_000):
        self.capacity = capacity
        self.cols = _Columns(capacity)
        self.insertions = 0

    @property
    def size(self):
        return min(self.insertions, self.capacity)

    def add(self, tr: AugmentedTransition):
        self.cols.set_row(self.insertions % self.capacity, tr)
        self.insertions += 1

    def sample(self, n, rng):
        idx = rng.integers(0, self.size, size=n)
        return self.cols.gather(idx, is_demo=False)


class DemoBuffer:
    """Immutable transition set built once from the demonstration."""

    def __init__(self, transitions):
        if not transitions:
            raise ValueError("demo buffer needs at least one transition")
        self.cols = _Columns(len(transitions))
        for k, tr in enumerate(transitions):
            self.cols.set_row(k, tr)
        self.size = len(transitions)

    def sample(self, n, rng):
        idx = rng.integers(0, self.size, size=n)  # with replacement
        return self.cols.gather(idx, is_demo=True)


def _concat_batches(a: Batch, b: Batch) -> Batch:
    return Batch(*[np.concatenate([getattr(a, f), getattr(b, f)])
                   for f in Batch.__slots__])


def sample_mixed_batch(rb: ReplayBuffer, db: DemoBuffer | None, spec: BatchSpec, rng):
    """Draw round(demo_fraction*B) demo rows and fill the rest from replay.

    Returns None while the replay buffer is empty (not-ready signal).
    """
    if rb.size == 0:
        return None
    n_demo = int(round(spec.demo_fraction * spec.batch_size))
    if n_demo > 0 and db is None:
        raise ValueError("demo_fraction > 0 requires a demo buffer")
    train = rb.sample(spec.batch_size - n_demo, rng)
    if n_demo == 0:
        return train
    return _concat_batches(db.sample(n_demo, rng), train)


def relabel(batch: Batch, fraction, goals: GoalSequence, rng):
    """Rewrite a fraction of the replay rows to their achieved outcome.

    The goal becomes the projection of the next state (reward 1, success),
    and the next index shifts onto the true next goal in the sequence so the
    bootstrapped target still points down the chain.  Demo rows are never
    touched.  Mutates and returns the batch.
    """
    candidates = np.flatnonzero(~batch.is_demo)
    count = int(round(fraction * candidates.size))
    if count == 0:
        return batch
    rows = rng.choice(candidates, size=count, replace=False)
    n = goals.n_goal
    garr = goals.as_array()
    batch.g[rows] = batch.s2[rows, :2]
    batch.r[rows] = 1.0
    batch.success[rows] = True
    shifted = np.minimum(batch.i[rows] + 1, n)
    batch.i2[rows] = shifted
    batch.g2[rows] = garr[shifted - 1]
    batch.done[rows] = batch.done[rows] | (batch.i[rows] == n)
    return batch


@dataclass
class NetworkSet:
    """Actor, twin critics with targets, optional value network, temperature."""

    policy: GaussianPolicyHead
    q1: MLP
    q2: MLP
    q1_target: MLP
    q2_target: MLP
    v: MLP | None
    v_target: MLP | None
    log_alpha: float

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha))

    def as_dict(self):
        nets = {"policy": self.policy.net, "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target}
        if self.v is not None:
            nets["v"] = self.v
            nets["v_target"] = self.v_target
        return nets


def build_networks(obs_dim, hidden, action_bound, rng, with_value=False,
                   alpha_init=0.2) -> NetworkSet:
    sizes_pi = (obs_dim, *hidden, 2)
    sizes_q = (obs_dim + 1, *hidden, 1)
    policy = GaussianPolicyHead(net=MLP(sizes_pi, rng=rng), action_dim=1,
                                bound=action_bound)
    q1 = MLP(sizes_q, rng=rng)
    q2 = MLP(sizes_q, rng=rng)
    q1_t = q1.copy()
    q2_t = q2.copy()
    v = vt = None
    if with_value:
        v = MLP((obs_dim, *hidden, 1), rng=rng)
        vt = v.copy()
    return NetworkSet(policy=policy, q1=q1, q2=q2, q1_target=q1_t, q2_target=q2_t,
                      v=v, v_target=vt, log_alpha=float(np.log(alpha_init)))


class SACLearner:
    """One training run's networks, buffers and update rules."""

    def __init__(self, encoder: ObsEncoder, goals: GoalSequence, spec: BatchSpec,
                 cfg: LearnerConfig, action_bound, rng,
                 demo_buffer=None, vc_dataset=None):
        self.enc = encoder
        self.goals = goals
        self.spec = spec
        self.cfg = cfg
        self.rng = rng
        self.nets = build_networks(encoder.dim, cfg.hidden, action_bound, rng,
                                   with_value=spec.variant == "vc",
                                   alpha_init=cfg.alpha_init)
        self.rb = ReplayBuffer(cfg.capacity)
        self.db = DemoBuffer(demo_buffer) if demo_buffer else None
        if spec.variant == "db" and self.db is None:
            raise ValueError("db variant requires demonstration transitions")
        if spec.variant == "vc":
            if not vc_dataset:
                raise ValueError("vc variant requires a value dataset")
            self._vc_states = np.array([e.state for e in vc_dataset])
            self._vc_idx = np.array([e.index for e in vc_dataset], dtype=np.int64)
            self._vc_goals = np.array([e.goal for e in vc_dataset])
            self._vc_values = np.array([e.v_demo for e in vc_dataset])
        opt = lambda net: AdamState.for_params(net.theta, lr=cfg.lr)
        self.opt_pi = opt(self.nets.policy.net)
        self.opt_q1 = opt(self.nets.q1)
        self.opt_q2 = opt(self.nets.q2)
        self.opt_v = opt(self.nets.v) if self.nets.v is not None else None
        critic_demo = spec.demo_fraction if spec.variant == "db" else 0.0
        self._critic_spec = BatchSpec(
            batch_size=spec.batch_size, demo_fraction=critic_demo,
            relabel_fraction=spec.relabel_fraction, variant=spec.variant,
            ags=spec.ags)

    # -- rollout-facing closures -------------------------------------------

    def policy_fn(self, state, index, goal, rng):
        x = self.enc.encode(state, index, goal)
        a, _ = self.nets.policy.sample(x, rng)
        return float(a[0])

    def mean_policy_fn(self, state, index, goal, rng=None):
        x = self.enc.encode(state, index, goal)
        return float(self.nets.policy.mean_action(x)[0])

    def target_q_fn(self, state, index, goal, action):
        x = self.enc.encode(state, index, goal)
        xin = np.concatenate([x, [action]])
        return float(min(self.nets.q1_target.forward(xin)[0],
                         self.nets.q2_target.forward(xin)[0]))

    def add_transition(self, tr: AugmentedTransition):
        self.rb.add(tr)

    def ready(self):
        return self.rb.size >= self.cfg.warmup

    # -- updates ------------------------------------------------------------

    def _critic_targets(self, batch: Batch):
        x2 = self.enc.encode_batch(batch.s2, batch.i2, batch.g2)
        a2, logp2 = self.nets.policy.sample(x2, self.rng)
        xin2 = np.concatenate([x2, a2], axis=1)
        if self.spec.variant == "vc":
            boot = self.nets.v_target.forward(x2)[:, 0]
        else:
            tq = np.minimum(self.nets.q1_target.forward(xin2),
                            self.nets.q2_target.forward(xin2))[:, 0]
            boot = tq - self.nets.alpha * logp2
        return batch.r + self.cfg.gamma * (~batch.done) * boot

    def critic_loss(self, batch: Batch, y):
        """Summed MSE of both online critics against the target column ``y``."""
        x = self.enc.encode_batch(batch.s, batch.i, batch.g)
        xin = np.concatenate([x, batch.a], axis=1)
        target = ad.constant(y)
        return ad.add(ad.mean(ad.square(ad.sub(self.nets.q1.apply(xin), target))),
                      ad.mean(ad.square(ad.sub(self.nets.q2.apply(xin), target))))

    def critic_update(self, batch: Batch):
        """Regress both online critics to the shared bootstrapped target."""
        y = self._critic_targets(batch)[:, None]
        self.nets.q1.zero_grad()
        self.nets.q2.zero_grad()
        loss = self.critic_loss(batch, y)
        loss.backward()
        optimizer_step(self.nets.q1.theta, self.nets.q1.grad, self.opt_q1)
        optimizer_step(self.nets.q2.theta, self.nets.q2.grad, self.opt_q2)
        return float(loss.data) / 2.0

    def actor_loss(self, batch: Batch, noise):
        """E[alpha * log pi - min Q] with gradients only into the policy."""
        x = self.enc.encode_batch(batch.s, batch.i, batch.g)
        xc = ad.constant(x)
        a_t, logp_t = self.nets.policy.sample_t(xc, noise)
        qin = ad.concat_cols(xc, a_t)
        qmin = ad.minimum(self.nets.q1.apply_frozen(qin),
                          self.nets.q2.apply_frozen(qin))
        return ad.mean(ad.sub(ad.mul(logp_t, self.nets.alpha), qmin)), logp_t

    def actor_update(self, batch: Batch):
        """Ascend E[min-Q - alpha * log pi] through reparameterized actions."""
        noise = self.rng.standard_normal((batch.size, 1))
        pi = self.nets.policy
        pi.net.zero_grad()
        loss, logp_t = self.actor_loss(batch, noise)
        loss.backward()
        optimizer_step(pi.net.theta, pi.net.grad, self.opt_pi)
        entropy = float(-np.mean(logp_t.data))
        return float(loss.data), entropy

    def vc_value_update(self):
        """Regress V toward on-policy soft values on replay states and toward
        the theoretical returns on demonstrated states."""
        n_vc = int(round(self.spec.demo_fraction * self.spec.batch_size))
        n_rb = self.spec.batch_size - n_vc
        xs = []
        targets = []
        if n_rb > 0:
            if self.rb.size == 0:
                return None
            b = self.rb.sample(n_rb, self.rng)
            x = self.enc.encode_batch(b.s, b.i, b.g)
            a, logp = self.nets.policy.sample(x, self.rng)
            xin = np.concatenate([x, a], axis=1)
            qmin = np.minimum(self.nets.q1.forward(xin),
                              self.nets.q2.forward(xin))[:, 0]
            xs.append(x)
            targets.append(qmin - self.nets.alpha * logp)
        if n_vc > 0:
            pick = self.rng.integers(0, self._vc_values.size, size=n_vc)
            xs.append(self.enc.encode_batch(self._vc_states[pick],
                                            self._vc_idx[pick],
                                            self._vc_goals[pick]))
            targets.append(self._vc_values[pick])
        x_all = np.concatenate(xs) if len(xs) > 1 else xs[0]
        y = np.concatenate(targets)[:, None] if len(targets) > 1 else targets[0][:, None]
        self.nets.v.zero_grad()
        loss = self.value_loss(x_all, y)
        loss.backward()
        optimizer_step(self.nets.v.theta, self.nets.v.grad, self.opt_v)
        return float(loss.data)

    def value_loss(self, x, y):
        """MSE of the value network against the target column ``y``."""
        return ad.mean(ad.square(ad.sub(self.nets.v.apply(x), ad.constant(y))))

    def temperature_update(self, entropy):
        # gradient of alpha * (entropy - target) wrt log alpha, stepped down:
        # excess entropy shrinks alpha, deficit grows it
        if self.cfg.alpha_auto:
            self.nets.log_alpha -= self.cfg.lr * (entropy - self.cfg.target_entropy)
        return self.nets.alpha

    def polyak_targets(self):
        polyak_update(self.nets.q1_target.theta, self.nets.q1.theta, self.cfg.tau)
        polyak_update(self.nets.q2_target.theta, self.nets.q2.theta, self.cfg.tau)
        if self.nets.v is not None:
            polyak_update(self.nets.v_target.theta, self.nets.v.theta, self.cfg.tau)

    def train_step(self):
        """One full update: critic, actor, (value), temperature, targets."""
        if not self.ready():
            return {"skipped": True}
        batch = sample_mixed_batch(self.rb, self.db, self._critic_spec, self.rng)
        if batch is None:
            return {"skipped": True}
        relabel(batch, self.spec.relabel_fraction, self.goals, self.rng)
        critic_loss = self.critic_update(batch)
        actor_loss, entropy = self.actor_update(batch)
        metrics = {"skipped": False, "critic_loss": critic_loss,
                   "actor_loss": actor_loss, "entropy": entropy}
        if self.spec.variant == "vc":
            vloss = self.vc_value_update()
            metrics["value_loss"] = vloss if vloss is not None else np.nan
        metrics["alpha"] = self.temperature_update(entropy)
        self.polyak_targets()
        return metrics
