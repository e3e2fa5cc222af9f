"""Run configuration: defaults, config-file/flag merging, validation.

Precedence, lowest to highest: built-in defaults, command-line flags, then
the config file.  The output root may also come from the GOALCHAIN_OUT
environment variable when neither a flag nor the file supplies one.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

from .dubins import DubinsState, EnvConfig, MazeLayout, default_start, serpentine_maze

OUT_ENV_VAR = "GOALCHAIN_OUT"

VARIANTS = ("vanilla", "db", "vc")
RESET_MODES = ("single", "demonstrated")


class ConfigError(ValueError):
    """A run configuration field is missing or out of range."""


@dataclass
class RunConfig:
    """Everything a training run needs, frozen into its run directory."""

    variant: str = "db"
    ags: bool = True
    reset_mode: str = "single"          # "demonstrated" resets along the demo
    seed: int = 0
    n_goal: int = 17
    total_steps: int = 200_000
    demo_path: str = ""
    out_dir: str = ""

    # world
    env: dict = field(default_factory=lambda: EnvConfig().to_dict())
    maze: dict = field(default_factory=lambda: serpentine_maze().to_dict())
    start: list = field(default_factory=lambda: [0.5, 0.625, 0.0])

    # learner scalars
    batch_size: int = 256
    demo_fraction: float = 0.2
    relabel_fraction: float = 0.5
    gamma: float = 0.99
    lr: float = 3e-4
    tau: float = 0.005
    hidden: list = field(default_factory=lambda: [64, 64])
    alpha_init: float = 0.2
    alpha_auto: bool = True
    target_entropy: float = -1.0
    warmup: int = 1000
    capacity: int = 1_000_000
    ags_k: int = 2

    # harness cadence
    eval_interval: int = 2000
    eval_episodes: int = 1
    log_interval: int = 100
    checkpoint_interval: int = 50_000
    stop_on_solve: bool = False
    solve_extra_steps: int = 0

    def env_config(self) -> EnvConfig:
        return EnvConfig.from_dict(self.env)

    def maze_layout(self) -> MazeLayout:
        return MazeLayout.from_dict(self.maze)

    def start_state(self) -> DubinsState:
        return DubinsState(*self.start)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return tuple(cls.__dataclass_fields__)


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"variant: expected one of {VARIANTS}, got {cfg.variant!r}")
    if cfg.reset_mode not in RESET_MODES:
        raise ConfigError(
            f"reset_mode: expected one of {RESET_MODES}, got {cfg.reset_mode!r}")
    if cfg.n_goal < 1:
        raise ConfigError("n_goal: must be >= 1")
    if cfg.total_steps < 0:
        raise ConfigError("total_steps: must be >= 0")
    if cfg.batch_size < 1:
        raise ConfigError("batch_size: must be >= 1")
    if not 0.0 <= cfg.demo_fraction < 1.0:
        raise ConfigError("demo_fraction: must be in [0, 1)")
    if not 0.0 <= cfg.relabel_fraction <= 1.0:
        raise ConfigError("relabel_fraction: must be in [0, 1]")
    if not 0.0 < cfg.gamma < 1.0:
        raise ConfigError("gamma: must be in (0, 1)")
    if cfg.lr <= 0:
        raise ConfigError("lr: must be > 0")
    if not 0.0 < cfg.tau <= 1.0:
        raise ConfigError("tau: must be in (0, 1]")
    if cfg.ags_k < 0:
        raise ConfigError("ags_k: must be >= 0")
    if cfg.eval_interval < 1:
        raise ConfigError("eval_interval: must be >= 1")
    if cfg.eval_episodes < 0:
        raise ConfigError("eval_episodes: must be >= 0")
    if cfg.warmup < 1:
        raise ConfigError("warmup: must be >= 1")
    try:
        cfg.env_config()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"env: {e}")
    try:
        cfg.maze_layout()
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"maze: {e}")
    if len(cfg.start) != 3:
        raise ConfigError("start: expected [x, y, theta]")
    return cfg


def build_config(flag_values: dict | None = None, config_path=None) -> RunConfig:
    """Merge defaults, flags and the config file (file wins)."""
    merged = RunConfig().to_dict()
    known = set(RunConfig.field_names())
    if flag_values:
        for key, val in flag_values.items():
            if val is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown config field {key!r}")
            merged[key] = val
    if config_path:
        try:
            with open(config_path) as f:
                doc = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{config_path}: invalid JSON at line {e.lineno}: {e.msg}")
        if not isinstance(doc, dict):
            raise ConfigError(f"{config_path}: top level must be an object")
        for key, val in doc.items():
            if key not in known:
                raise ConfigError(f"{config_path}: unknown field {key!r}")
            merged[key] = val
    if not merged["out_dir"]:
        merged["out_dir"] = os.environ.get(OUT_ENV_VAR, "runs")
    return validate(RunConfig(**merged))


def save_config(cfg: RunConfig, path):
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2)


def load_config(path) -> RunConfig:
    return build_config(config_path=path)
