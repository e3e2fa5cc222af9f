import math

import numpy as np
import pytest

from goalchain.dubins import (
    DubinsMazeEnv,
    DubinsState,
    EnvConfig,
    EpisodeOverError,
    InvalidResetError,
    MazeLayout,
    default_start,
    is_success,
    project,
    serpentine_maze,
    wrap_angle,
)


def open_env(v=0.5, dt=0.2, start=DubinsState(0.0, 0.0, 0.0), **kw):
    layout = MazeLayout(bounds=(-100, 100, -100, 100), walls=[], thickness=0.1)
    cfg = EnvConfig(v=v, dt=dt, **kw)
    return DubinsMazeEnv(layout, cfg, start)


class TestReset:
    def test_reset_returns_start(self):
        env = DubinsMazeEnv(serpentine_maze(), EnvConfig(), default_start())
        assert env.reset() == default_start()

    def test_two_resets_identical(self):
        env = open_env()
        assert env.reset() == env.reset()

    def test_reset_after_collision(self):
        layout = MazeLayout(bounds=(0, 2, 0, 2), walls=[(1.0, 0.0, 1.0, 2.0)])
        env = DubinsMazeEnv(layout, EnvConfig(), DubinsState(0.9, 1.0, 0.0))
        _, done = env.step(0.0)
        assert done
        assert env.reset() == DubinsState(0.9, 1.0, 0.0)

    def test_reset_to_initial_matches_reset(self):
        env = DubinsMazeEnv(serpentine_maze(), EnvConfig(), default_start())
        assert env.reset_to(default_start()) == env.reset()

    def test_reset_to_then_dynamics(self):
        env = open_env()
        s = DubinsState(1.0, 2.0, 0.7)
        env.reset_to(s)
        x, y, th = s.x, s.y, s.theta
        for _ in range(5):
            x += 0.5 * math.cos(th) * 0.2
            y += 0.5 * math.sin(th) * 0.2
            got, done = env.step(0.0)
            assert not done
            assert got.x == pytest.approx(x, abs=1e-12)
            assert got.y == pytest.approx(y, abs=1e-12)
            assert got.theta == pytest.approx(th, abs=1e-12)

    def test_reset_to_wall_rejected(self):
        env = DubinsMazeEnv(serpentine_maze(), EnvConfig(), default_start())
        with pytest.raises(InvalidResetError):
            env.reset_to(DubinsState(1.0, 1.25, 0.0))
        with pytest.raises(InvalidResetError):
            env.reset_to(DubinsState(99.0, 0.0, 0.0))


class TestStep:
    def test_straight_motion(self):
        env = open_env()
        s, done = env.step(0.0)
        assert not done
        assert s.x == pytest.approx(0.1, abs=1e-15)
        assert s.y == pytest.approx(0.0, abs=1e-15)
        assert s.theta == 0.0

    def test_heading_up(self):
        env = open_env(start=DubinsState(0.0, 0.0, math.pi / 2))
        s, _ = env.step(0.0)
        assert s.x == pytest.approx(0.0, abs=1e-15)
        assert s.y == pytest.approx(0.1, abs=1e-12)

    def test_head_on_collision(self):
        # wall 0.05 ahead, step length 0.1 -> must terminate at contact
        layout = MazeLayout(bounds=(-2, 2, -2, 2), walls=[(1.05, -1.0, 1.05, 1.0)],
                            thickness=0.0)
        env = DubinsMazeEnv(layout, EnvConfig(), DubinsState(1.0, 0.0, 0.0))
        s, done = env.step(0.0)
        assert done
        assert s.x <= 1.05
        assert s.x == pytest.approx(1.05, abs=1e-9)

    def test_step_after_done_raises(self):
        layout = MazeLayout(bounds=(0, 2, 0, 2), walls=[(1.0, 0.0, 1.0, 2.0)])
        env = DubinsMazeEnv(layout, EnvConfig(), DubinsState(0.9, 1.0, 0.0))
        env.step(0.0)
        with pytest.raises(EpisodeOverError):
            env.step(0.0)

    def test_action_clamped(self):
        env = open_env()
        s, _ = env.step(99.0)  # clamped to +1.0
        assert s.theta == pytest.approx(wrap_angle(1.0 * 0.2), abs=1e-15)

    def test_displacement_magnitude_is_v_dt(self):
        rng = np.random.default_rng(0)
        env = open_env()
        prev = env.reset()
        for _ in range(200):
            s, done = env.step(rng.uniform(-1, 1))
            assert not done
            d = math.hypot(s.x - prev.x, s.y - prev.y)
            assert d == pytest.approx(0.5 * 0.2, abs=1e-12)
            prev = s

    def test_theta_stays_wrapped(self):
        env = open_env()
        for _ in range(500):
            s, _ = env.step(1.0)
            assert -math.pi < s.theta <= math.pi

    def test_determinism(self):
        rng = np.random.default_rng(4)
        actions = rng.uniform(-1, 1, size=300)
        traj = []
        for _ in range(2):
            env = DubinsMazeEnv(serpentine_maze(), EnvConfig(), default_start())
            states = [env.reset()]
            for a in actions:
                s, done = env.step(a)
                states.append(s)
                if done:
                    break
            traj.append(states)
        assert traj[0] == traj[1]


class TestGoalSpace:
    def test_project_drops_theta(self):
        assert project(DubinsState(1.2, 3.4, 0.7)) == (1.2, 3.4)

    def test_project_theta_invariant(self):
        for th in (-3.0, 0.0, 1.5):
            assert project(DubinsState(1.0, 2.0, th)) == (1.0, 2.0)

    def test_success_at_goal(self):
        assert is_success(DubinsState(1.0, 1.0, 0.3), (1.0, 1.0), 0.2)

    def test_success_boundary_closed(self):
        assert is_success(DubinsState(1.2, 1.0, 0.0), (1.0, 1.0), 0.2)

    def test_just_outside_fails(self):
        assert not is_success(DubinsState(1.2 + 1e-9, 1.0, 0.0), (1.0, 1.0), 0.2)


class TestNoTunneling:
    def test_against_fine_substep_oracle(self):
        rng = np.random.default_rng(12)
        checked = 0
        for _ in range(300):
            walls = []
            for _ in range(rng.integers(1, 4)):
                x1, y1 = rng.uniform(-4, 2.5, size=2)
                length = rng.uniform(0.5, 2.0)
                if rng.random() < 0.5:
                    walls.append((x1, y1, x1 + length, y1))
                else:
                    walls.append((x1, y1, x1, y1 + length))
            layout = MazeLayout(bounds=(-5, 5, -5, 5), walls=walls, thickness=0.1)
            p = rng.uniform(-4.0, 2.0, size=2)
            if layout.point_clearance(p) < layout.radius + 1e-3:
                continue
            th = rng.uniform(-math.pi, math.pi)
            # long step to stress the continuous check
            cfg = EnvConfig(v=2.0, dt=1.0)
            env = DubinsMazeEnv(layout, cfg, DubinsState(p[0], p[1], th))
            _, done = env.step(0.0)

            # brute-force oracle: dense point samples along the nominal segment
            q = p + 2.0 * np.array([math.cos(th), math.sin(th)])
            taus = np.linspace(0.0, 1.0, 2001)
            pts = p[None, :] + taus[:, None] * (q - p)[None, :]
            clear = np.full(pts.shape[0], np.inf)
            for (wx1, wy1, wx2, wy2) in layout.walls + [
                (-5, -5, 5, -5), (5, -5, 5, 5), (5, 5, -5, 5), (-5, 5, -5, -5)]:
                a = np.array([wx1, wy1], dtype=float)
                b = np.array([wx2, wy2], dtype=float)
                ab = b - a
                t = np.clip(((pts - a) @ ab) / max(ab @ ab, 1e-300), 0.0, 1.0)
                d = np.linalg.norm(pts - (a + t[:, None] * ab), axis=1)
                clear = np.minimum(clear, d)
            min_clear = float(clear.min())
            if abs(min_clear - layout.radius) < 1e-3:
                continue  # too close to the decision boundary for a sampled oracle
            assert done == (min_clear < layout.radius)
            checked += 1
        assert checked > 100


class TestLayout:
    def test_wall_outside_bounds_rejected(self):
        with pytest.raises(ValueError):
            MazeLayout(bounds=(0, 1, 0, 1), walls=[(0, 0, 2, 0)])

    def test_roundtrip_dict(self):
        m = serpentine_maze()
        m2 = MazeLayout.from_dict(m.to_dict())
        assert m2.bounds == m.bounds
        assert m2.walls == m.walls
        assert m2.thickness == m.thickness

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EnvConfig(v=-1.0)
        with pytest.raises(ValueError):
            EnvConfig(t_max=0)
