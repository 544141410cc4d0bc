"""Navigation environment: differential-drive robot, sensors, rewards, episodes.

Action indices are fixed project-wide: 0 = Forward, 1 = TurnLeft, 2 = TurnRight.
Rewards follow the two shaping schemes
    distance:    r = 1 - exp(eta1 * d)          (0 at the target, negative away)
    orientation: r = 1 - exp(eta2 * |heading error|)
with r_reached / r_crashed overriding on terminal steps.  Timeouts pay the
plain shaping reward.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import ContractViolation
from .world import (
    LAYOUT_IDS,
    WorldMap,
    camera_angles,
    make_layout,
    path_collides,
    point_clear,
    point_in_free_interior,
    raycast_batch,
)

CAMERA_FOV = np.pi / 3.0  # 60 degrees


class Action(IntEnum):
    Forward = 0
    TurnLeft = 1
    TurnRight = 2


N_ACTIONS = 3


def normalize_angle(theta: float) -> float:
    """Wrap into (-pi, pi]."""
    t = (theta + np.pi) % (2.0 * np.pi) - np.pi
    if t == -np.pi:
        t = np.pi
    return float(t)


@dataclass
class Pose:
    x: float
    y: float
    theta: float


@dataclass
class Observation:
    lidar: np.ndarray  # (n_beams,) ranges in meters
    camera: np.ndarray  # (n_px, 3) rgb in [0, 1]
    target_xy: tuple[float, float] | None = None  # multi-target mode only


@dataclass
class Truth:
    """Simulator ground truth, for analysis only; never fed to learners."""

    pose: Pose
    distance: float
    target_id: int


@dataclass
class StepResult:
    observation: Observation
    reward: float
    terminal: str  # none | reached | crashed | timeout
    truth: Truth


@dataclass
class EnvConfig:
    layout: str = "Env1"
    reward: str = "distance"  # distance | orientation
    eta1: float = 0.5
    eta2: float = 0.5
    d_min: float = 0.25
    r_reached: float = 100.0
    r_crashed: float = -100.0
    max_range: float = 5.0
    n_beams: int = 36
    n_px: int = 32
    robot_radius: float = 0.15
    step_length: float = 0.15
    turn_angle: float = np.deg2rad(15.0)
    max_steps: int = 500
    multi_target: bool = False

    def __post_init__(self):
        if self.layout not in LAYOUT_IDS:
            raise ContractViolation(
                f"unknown layout {self.layout!r}; expected one of {LAYOUT_IDS}"
            )
        if self.eta1 <= 0 or self.eta2 <= 0:
            raise ContractViolation("eta1 and eta2 must be positive")
        if self.d_min <= 0:
            raise ContractViolation("d_min must be positive")
        if self.max_steps <= 0:
            raise ContractViolation("max_steps must be positive")
        if self.reward not in ("distance", "orientation"):
            raise ContractViolation(f"unknown reward kind {self.reward!r}")


def reward_distance(d: float, terminal: str, cfg: EnvConfig) -> float:
    if terminal == "reached":
        return cfg.r_reached
    if terminal == "crashed":
        return cfg.r_crashed
    return 1.0 - np.exp(cfg.eta1 * d)


def reward_orientation(theta_err: float, d: float, terminal: str, cfg: EnvConfig) -> float:
    if terminal == "reached":
        return cfg.r_reached
    if terminal == "crashed":
        return cfg.r_crashed
    return 1.0 - np.exp(cfg.eta2 * abs(theta_err))


class NavEnv:
    """Deterministic stepping; all randomness enters through reset(rng)."""

    def __init__(self, cfg: EnvConfig, world: WorldMap | None = None):
        self.cfg = cfg
        self.world = world if world is not None else make_layout(cfg.layout)
        if not self.world.targets:
            raise ContractViolation("world has no targets")
        self.pose: Pose | None = None
        self.target_id = 0
        self.step_count = 0
        self.terminal = "none"
        # fixed beam/pixel offsets relative to the heading; both sensors are
        # cast in one batch per observation
        self._angle_offsets = np.concatenate(
            [
                2.0 * np.pi * np.arange(cfg.n_beams) / cfg.n_beams,
                camera_angles(0.0, cfg.n_px, CAMERA_FOV),
            ]
        )

    @property
    def active_target(self) -> tuple[float, float]:
        return self.world.targets[self.target_id]

    def _distance_to_target(self, pose: Pose) -> float:
        tx, ty = self.active_target
        return float(np.hypot(tx - pose.x, ty - pose.y))

    def _heading_error(self, pose: Pose) -> float:
        tx, ty = self.active_target
        bearing = np.arctan2(ty - pose.y, tx - pose.x)
        return normalize_angle(bearing - pose.theta)

    def _observe(self) -> Observation:
        cfg = self.cfg
        ranges, idx = raycast_batch(
            self.world,
            (self.pose.x, self.pose.y),
            self.pose.theta + self._angle_offsets,
            cfg.max_range,
        )
        lidar = ranges[: cfg.n_beams]
        cam_idx = idx[cfg.n_beams :]
        camera = np.zeros((cfg.n_px, 3))
        hit = cam_idx >= 0
        camera[hit] = self.world.colors[cam_idx[hit]]
        target_xy = self.active_target if cfg.multi_target else None
        return Observation(lidar, camera, target_xy)

    def _truth(self) -> Truth:
        return Truth(
            Pose(self.pose.x, self.pose.y, self.pose.theta),
            self._distance_to_target(self.pose),
            self.target_id,
        )

    def current_truth(self) -> Truth:
        """Ground-truth pose and target distance at the current step."""
        if self.pose is None:
            raise ContractViolation("no episode in progress")
        return self._truth()

    def current_heading_error(self) -> float:
        """Signed angle from the robot heading to the target bearing."""
        if self.pose is None:
            raise ContractViolation("no episode in progress")
        return self._heading_error(self.pose)

    def reset(self, rng: np.random.Generator) -> Observation:
        """Spawn uniformly in the spawn rectangle with uniform heading.

        Draw order is fixed (x, y, theta, then target in multi-target mode)
        so a given rng state always produces the same episode start.  Draws
        that would start inside a wall or already at the target are rejected
        and redrawn, which matters for layouts whose spawn region spans the
        whole floor.
        """
        sx0, sy0, sx1, sy1 = self.world.spawn
        for _ in range(1000):
            x = rng.uniform(sx0, sx1)
            y = rng.uniform(sy0, sy1)
            theta = normalize_angle(rng.uniform(-np.pi, np.pi))
            if self.cfg.multi_target:
                self.target_id = int(rng.integers(len(self.world.targets)))
            else:
                self.target_id = 0
            pose = Pose(x, y, theta)
            if not point_clear(self.world, (x, y), self.cfg.robot_radius):
                continue
            # point_clear only measures wall distance; a point deep inside a
            # closed obstacle loop passes it, so containment needs its own test
            if not point_in_free_interior(self.world, (x, y)):
                continue
            if self._distance_to_target(pose) <= self.cfg.d_min:
                continue
            self.pose = pose
            self.step_count = 0
            self.terminal = "none"
            return self._observe()
        raise ContractViolation("could not draw a free spawn pose")

    def step(self, action: int) -> StepResult:
        if self.pose is None:
            raise ContractViolation("step before reset")
        if self.terminal != "none":
            raise ContractViolation("step after terminal")
        cfg = self.cfg
        crashed = False
        if action == Action.Forward:
            nx = self.pose.x + cfg.step_length * np.cos(self.pose.theta)
            ny = self.pose.y + cfg.step_length * np.sin(self.pose.theta)
            # swept-circle test along the whole translation, so a wall thinner
            # than the step length cannot be tunneled through
            if path_collides(self.world, (self.pose.x, self.pose.y), (nx, ny), cfg.robot_radius):
                crashed = True
            else:
                self.pose = Pose(nx, ny, self.pose.theta)
        elif action == Action.TurnLeft:
            self.pose = Pose(self.pose.x, self.pose.y, normalize_angle(self.pose.theta + cfg.turn_angle))
        elif action == Action.TurnRight:
            self.pose = Pose(self.pose.x, self.pose.y, normalize_angle(self.pose.theta - cfg.turn_angle))
        else:
            raise ContractViolation(f"unknown action {action!r}")
        self.step_count += 1

        d = self._distance_to_target(self.pose)
        if crashed:
            self.terminal = "crashed"
        elif d <= cfg.d_min:
            self.terminal = "reached"
        elif self.step_count >= cfg.max_steps:
            self.terminal = "timeout"
        else:
            self.terminal = "none"

        terminal_for_reward = self.terminal if self.terminal in ("reached", "crashed") else "none"
        if cfg.reward == "distance":
            reward = reward_distance(d, terminal_for_reward, cfg)
        else:
            reward = reward_orientation(self._heading_error(self.pose), d, terminal_for_reward, cfg)
        return StepResult(self._observe(), float(reward), self.terminal, self._truth())


# -- trajectory export -----------------------------------------------------

TRAJECTORY_COLUMNS = ["step", "x", "y", "theta", "action", "reward", "terminal"]


def write_trajectory_csv(rows: list[dict], path) -> None:
    """rows: dicts with the TRAJECTORY_COLUMNS keys, one per step."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for k in ("x", "y", "theta", "reward"):
                out[k] = repr(float(out[k]))  # repr round-trips float64 exactly
            writer.writerow(out)


def rollout_trajectory(env: NavEnv, policy, rng: np.random.Generator) -> list[dict]:
    """Run one episode under policy(obs, rng) -> action; collect CSV rows."""
    obs = env.reset(rng)
    rows = []
    while True:
        action = int(policy(obs, rng))
        result = env.step(action)
        rows.append(
            {
                "step": env.step_count,
                "x": result.truth.pose.x,
                "y": result.truth.pose.y,
                "theta": result.truth.pose.theta,
                "action": action,
                "reward": result.reward,
                "terminal": result.terminal,
            }
        )
        obs = result.observation
        if result.terminal != "none":
            return rows
