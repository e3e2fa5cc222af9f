"""Deterministic Dubins-car simulator in a 2-D walled maze.

The car moves at constant forward speed; the only control is the turning
rate.  Integration is first-order: each step is a straight displacement of
``v * dt`` followed by a heading change of ``a * dt``.  Collision checking
is continuous along the displacement segment, so walls cannot be tunneled
through at any timestep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


class InvalidResetError(ValueError):
    """reset_to() was asked to place the car inside a wall or out of bounds."""


class EpisodeOverError(RuntimeError):
    """step() was called after a terminal collision without reset."""


def wrap_angle(theta):
    """Wrap an angle to (-pi, pi]."""
    w = theta % TWO_PI
    if w > math.pi:
        w -= TWO_PI
    return w


@dataclass(frozen=True)
class DubinsState:
    x: float
    y: float
    theta: float

    def __getitem__(self, k):
        return (self.x, self.y, self.theta)[k]

    def as_array(self):
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class EnvConfig:
    """Scalar environment parameters."""

    v: float = 0.5                 # forward speed, units per second
    dt: float = 0.2                # integration step, seconds
    action_bound: float = 1.0      # |turn rate| limit, rad/s
    eps_success: float = 0.2       # goal ball radius (closed)
    t_max: int = 400               # step budget per sub-task clock

    def __post_init__(self):
        for name in ("v", "dt", "eps_success"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.t_max <= 0:
            raise ValueError("t_max must be > 0")

    def to_dict(self):
        return {"v": self.v, "dt": self.dt, "action_bound": self.action_bound,
                "eps_success": self.eps_success, "t_max": self.t_max}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class MazeLayout:
    """Axis-aligned wall segments inside a solid bounding box.

    ``walls`` is a list of (x1, y1, x2, y2) segments.  Walls have a
    thickness; anything closer than thickness/2 to a wall centerline (or to
    the bounding box edge) is in collision.
    """

    def __init__(self, bounds, walls, thickness=0.1):
        self.bounds = tuple(float(v) for v in bounds)  # (x_min, x_max, y_min, y_max)
        x0, x1, y0, y1 = self.bounds
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate bounds {bounds}")
        self.walls = [tuple(float(v) for v in w) for w in walls]
        self.thickness = float(thickness)
        for w in self.walls:
            for px, py in ((w[0], w[1]), (w[2], w[3])):
                if not (x0 <= px <= x1 and y0 <= py <= y1):
                    raise ValueError(f"wall {w} outside bounds {self.bounds}")
        border = [
            (x0, y0, x1, y0),
            (x1, y0, x1, y1),
            (x1, y1, x0, y1),
            (x0, y1, x0, y0),
        ]
        segs = np.array(self.walls + border, dtype=np.float64).reshape(-1, 4)
        self._a = segs[:, 0:2]
        self._b = segs[:, 2:4]
        self._ab = self._b - self._a
        self._ab_len2 = np.maximum((self._ab ** 2).sum(axis=1), 1e-300)
        self.radius = self.thickness / 2.0

    def to_dict(self):
        return {"bounds": list(self.bounds),
                "walls": [list(w) for w in self.walls],
                "thickness": self.thickness}

    @classmethod
    def from_dict(cls, d):
        return cls(d["bounds"], d["walls"], d.get("thickness", 0.1))

    def point_clearance(self, p):
        """Distance from point ``p`` to the nearest wall centerline."""
        p = np.asarray(p, dtype=np.float64)
        ap = p[None, :] - self._a
        t = np.clip((ap * self._ab).sum(axis=1) / self._ab_len2, 0.0, 1.0)
        closest = self._a + t[:, None] * self._ab
        d = np.sqrt(((p[None, :] - closest) ** 2).sum(axis=1))
        return float(d.min())

    def segment_clearance(self, p, q):
        """Min distance from segment p->q to every wall segment.

        Returns 0.0 when the segment properly crosses a wall.  Because the
        truncated segment contains all earlier points, this function is
        non-increasing as q moves along a fixed motion direction.
        """
        p = np.asarray(p, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64)
        a, b = self._a, self._b
        r = q - p
        d1 = _cross(r, a - p)
        d2 = _cross(r, b - p)
        d3 = _cross(self._ab, p - a)
        d4 = _cross(self._ab, q - a)
        crossing = (d1 * d2 < 0) & (d3 * d4 < 0)
        if crossing.any():
            return 0.0
        dists = np.minimum(
            np.minimum(_point_seg_dist(a, p, q), _point_seg_dist(b, p, q)),
            np.minimum(self._pt_to_walls(p), self._pt_to_walls(q)),
        )
        return float(dists.min())

    def _pt_to_walls(self, p):
        ap = p[None, :] - self._a
        t = np.clip((ap * self._ab).sum(axis=1) / self._ab_len2, 0.0, 1.0)
        closest = self._a + t[:, None] * self._ab
        return np.sqrt(((p[None, :] - closest) ** 2).sum(axis=1))

    def in_collision(self, p):
        return self.point_clearance(p) < self.radius

    def blocks(self, p, q):
        """True when the motion segment p->q hits a wall.

        A proper crossing always blocks, even for zero-thickness walls.
        """
        clear = self.segment_clearance(p, q)
        return clear < self.radius or clear == 0.0

    def contains(self, p):
        x0, x1, y0, y1 = self.bounds
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _point_seg_dist(pts, p, q):
    """Distance from each row of ``pts`` to segment p->q."""
    pq = q - p
    len2 = max(float(pq @ pq), 1e-300)
    t = np.clip(((pts - p) @ pq) / len2, 0.0, 1.0)
    closest = p[None, :] + t[:, None] * pq[None, :]
    return np.sqrt(((pts - closest) ** 2).sum(axis=1))


def project(state):
    """Goal-space projection: drop the heading."""
    return (state.x, state.y)


def is_success(state, goal, eps_success):
    """Closed-ball success test in goal space."""
    dx = state.x - goal[0]
    dy = state.y - goal[1]
    return dx * dx + dy * dy <= eps_success * eps_success


class DubinsMazeEnv:
    """One rollout's worth of simulator state."""

    def __init__(self, layout: MazeLayout, config: EnvConfig, start: DubinsState):
        self.layout = layout
        self.config = config
        self.start = DubinsState(start.x, start.y, wrap_angle(start.theta))
        if not layout.contains((start.x, start.y)) or layout.in_collision((start.x, start.y)):
            raise InvalidResetError(f"start state {start} is not collision-free")
        self.state = self.start
        self.done = False
        self.reset_to_calls = 0

    def reset(self):
        """Return to the single configured initial state."""
        self.state = self.start
        self.done = False
        return self.state

    def reset_to(self, state: DubinsState):
        """Place the car at an arbitrary collision-free state."""
        p = (state.x, state.y)
        if not self.layout.contains(p):
            raise InvalidResetError(f"state {state} outside maze bounds")
        if self.layout.in_collision(p):
            raise InvalidResetError(f"state {state} is inside a wall")
        self.reset_to_calls += 1
        self.state = DubinsState(state.x, state.y, wrap_angle(state.theta))
        self.done = False
        return self.state

    def step(self, action):
        """Advance one step; returns (state, env_done).

        On collision the car stops at the first contact point (heading
        integrated proportionally to the traveled fraction) and the episode
        is terminal.
        """
        if self.done:
            raise EpisodeOverError("step() after collision; call reset() first")
        cfg = self.config
        a = min(max(float(action), -cfg.action_bound), cfg.action_bound)
        s = self.state
        dx = cfg.v * math.cos(s.theta) * cfg.dt
        dy = cfg.v * math.sin(s.theta) * cfg.dt
        p = np.array([s.x, s.y])
        q = np.array([s.x + dx, s.y + dy])
        if not self.layout.blocks(p, q):
            self.state = DubinsState(s.x + dx, s.y + dy, wrap_angle(s.theta + a * cfg.dt))
            return self.state, False
        # Bisect the earliest contact fraction: the blocked predicate over the
        # truncated segment is monotone in tau.
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self.layout.blocks(p, p + mid * (q - p)):
                hi = mid
            else:
                lo = mid
        tau = lo
        self.state = DubinsState(s.x + tau * dx, s.y + tau * dy,
                                 wrap_angle(s.theta + a * cfg.dt * tau))
        self.done = True
        return self.state, True

    def project(self, state=None):
        return project(state if state is not None else self.state)

    def is_success(self, state, goal):
        return is_success(state, goal, self.config.eps_success)


def serpentine_maze():
    """Default 5x5 maze: three horizontal baffles forming an S corridor.

    Corridor width is 1.25 (the even 4-way split of the box); the car's
    minimum turning diameter at v=0.5, |a|<=1 is 1.0, which leaves 0.25 of
    clearance for the U-turns around the baffle ends.
    """
    return MazeLayout(
        bounds=(0.0, 5.0, 0.0, 5.0),
        walls=[
            (0.0, 1.25, 3.75, 1.25),
            (1.25, 2.5, 5.0, 2.5),
            (0.0, 3.75, 3.75, 3.75),
        ],
        thickness=0.1,
    )


def default_start():
    return DubinsState(0.5, 0.625, 0.0)
