"""The Circles environment: a point agent in the plane with three circular behaviour modes.

The state is the agent's last five positions, oldest first (10 numbers).
Actions are planar displacements clipped to ``max_action_norm``. Every
reference circle passes through the origin, which is the common start point,
so the start state alone never reveals the mode.

Modes are 0-based indices into ``mode_circles``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import atomic_write_text

HISTORY = 5
STATE_DIM = 2 * HISTORY
ANGULAR_STEP = 2 * np.pi / 100


@dataclass(frozen=True)
class ModeCircle:
    center: tuple
    radius: float = 1.0
    orientation: int = 1  # +1 counter-clockwise, -1 clockwise

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64)

    def start_point(self) -> np.ndarray:
        """Perimeter point nearest the origin (the origin itself for the default circles)."""
        c = self.c
        n = np.linalg.norm(c)
        if n == 0:
            return c + np.array([self.radius, 0.0])
        return c - c / n * self.radius


DEFAULT_CIRCLES = (
    ModeCircle((0.0, 1.0)),
    ModeCircle((0.866, -0.5)),
    ModeCircle((-0.866, -0.5)),
)


@dataclass
class CirclesConfig:
    mode_circles: tuple = DEFAULT_CIRCLES
    episode_length: int = 1000
    noise_frac: float = 0.10
    max_action_norm: float = 0.1
    bandwidth: float = 0.2

    def __post_init__(self):
        if self.episode_length < 0:
            raise ValueError("episode_length must be >= 0")
        if not self.max_action_norm > 0:
            raise ValueError("max_action_norm must be positive")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.noise_frac < 0:
            raise ValueError("noise_frac must be >= 0")

    @property
    def n_modes(self) -> int:
        return len(self.mode_circles)


def clip_actions(actions: np.ndarray, max_norm: float) -> np.ndarray:
    a = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    n = np.linalg.norm(a, axis=1, keepdims=True)
    scale = np.where(n > max_norm, max_norm / np.where(n > 0, n, 1.0), 1.0)
    return a * scale


class CirclesEnv:
    """``n_envs`` independent copies stepped together.

    ``reset`` and ``step`` return states of shape ``(n_envs, 10)``.
    """

    def __init__(self, config: CirclesConfig | None = None, n_envs: int = 1, seed: int = 0):
        self.config = config if config is not None else CirclesConfig()
        self.n_envs = n_envs
        self.rng = np.random.default_rng(seed)
        self.history = np.zeros((n_envs, HISTORY, 2))
        self.t = 0

    @property
    def positions(self) -> np.ndarray:
        return self.history[:, -1, :].copy()

    def state(self) -> np.ndarray:
        return self.history.reshape(self.n_envs, STATE_DIM).copy()

    def reset(self, modes=None) -> np.ndarray:
        """Put every copy at its mode circle's start point (origin when ``modes`` is None)."""
        if modes is None:
            start = np.zeros((self.n_envs, 2))
        else:
            modes = np.broadcast_to(np.asarray(modes, dtype=np.int64), (self.n_envs,))
            start = np.stack([self.config.mode_circles[m].start_point() for m in modes])
        self.history = np.repeat(start[:, None, :], HISTORY, axis=1)
        self.t = 0
        return self.state()

    def step(self, actions) -> tuple[np.ndarray, bool]:
        a = np.asarray(actions, dtype=np.float64).reshape(self.n_envs, 2)
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite action")
        if self.t >= self.config.episode_length:
            raise RuntimeError("episode already finished; call reset()")
        move = clip_actions(a, self.config.max_action_norm)
        new = self.history[:, -1, :] + move
        self.history = np.concatenate([self.history[:, 1:, :], new[:, None, :]], axis=1)
        self.t += 1
        return self.state(), self.t >= self.config.episode_length


def circle_distance(positions, circle: ModeCircle) -> np.ndarray:
    p = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    return np.abs(np.linalg.norm(p - circle.c, axis=1) - circle.radius)


def circle_reward(positions, circle: ModeCircle, bandwidth: float = 0.2) -> np.ndarray:
    """Gaussian kernel ``exp(-dist^2 / (2 h^2))`` of the distance to the perimeter."""
    d = circle_distance(positions, circle)
    return np.exp(-(d * d) / (2 * bandwidth * bandwidth))


def chord_length(radius: float) -> float:
    return 2 * radius * np.sin(ANGULAR_STEP / 2)


def expert_target(positions, circle: ModeCircle) -> np.ndarray:
    """Point ``2 pi / 100`` rad ahead of each position's nearest perimeter point."""
    p = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    rel = p - circle.c
    ang = np.arctan2(rel[:, 1], rel[:, 0]) + circle.orientation * ANGULAR_STEP
    return circle.c + circle.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def expert_action(env: CirclesEnv, modes, rng: np.random.Generator | None = None, noise: bool = True) -> np.ndarray:
    """Scripted expert: head for the target point, plus Gaussian noise.

    The noise std per coordinate is ``noise_frac`` times the chord length of
    the mode circle. On the perimeter the noise-free action is exactly that
    chord.
    """
    rng = rng if rng is not None else env.rng
    modes = np.broadcast_to(np.asarray(modes, dtype=np.int64), (env.n_envs,))
    pos = env.positions
    out = np.empty((env.n_envs, 2))
    for m in np.unique(modes):
        sel = modes == m
        circle = env.config.mode_circles[m]
        out[sel] = expert_target(pos[sel], circle) - pos[sel]
    if noise and env.config.noise_frac > 0:
        radii = np.array([env.config.mode_circles[m].radius for m in modes])
        std = env.config.noise_frac * np.array([chord_length(r) for r in radii])
        out += std[:, None] * rng.standard_normal((env.n_envs, 2))
    return out


# --------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """One episode with a single latent code.

    ``states[t]`` is observed before ``actions[t]``; the state after the last
    action is ``final_state``. ``rewards`` are optional.
    """

    states: np.ndarray
    actions: np.ndarray
    latent: np.ndarray
    final_state: np.ndarray | None = None
    rewards: np.ndarray | None = None
    mode: int | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2:
            self.states = self.states.reshape(-1, STATE_DIM)
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(-1, 2)
        self.latent = np.atleast_1d(np.asarray(self.latent, dtype=np.float64))
        if self.states.shape[0] != self.actions.shape[0]:
            raise ValueError(f"{self.states.shape[0]} states but {self.actions.shape[0]} actions")
        if self.rewards is not None:
            self.rewards = np.asarray(self.rewards, dtype=np.float64).reshape(-1)
            if self.rewards.shape[0] != self.actions.shape[0]:
                raise ValueError("one reward per action required")
        if self.final_state is not None:
            self.final_state = np.asarray(self.final_state, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return self.actions.shape[0]

    def positions(self) -> np.ndarray:
        """Current positions along the path, including the final one when stored."""
        pts = self.states[:, -2:]
        if self.final_state is not None:
            pts = np.vstack([pts, self.final_state[-2:]])
        return pts

    def to_record(self) -> dict:
        rec = {
            "latent": self.latent.tolist(),
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
        }
        if self.mode is not None:
            rec["mode"] = int(self.mode)
        if self.final_state is not None:
            rec["final_state"] = self.final_state.tolist()
        if self.rewards is not None:
            rec["rewards"] = self.rewards.tolist()
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Trajectory":
        if not isinstance(rec, dict):
            raise ValueError("trajectory record must be a JSON object")
        for key in ("latent", "states", "actions"):
            if key not in rec:
                raise ValueError(f"missing key {key!r}")
        states = np.asarray(rec["states"], dtype=np.float64)
        if states.size and (states.ndim != 2 or states.shape[1] not in (2, STATE_DIM)):
            raise ValueError(f"states must have 2 or {STATE_DIM} columns")
        actions = np.asarray(rec["actions"], dtype=np.float64)
        if actions.size and (actions.ndim != 2 or actions.shape[1] != 2):
            raise ValueError("actions must have 2 columns")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(actions))):
            raise ValueError("non-finite values")
        return cls(
            states if states.ndim == 2 else states.reshape(0, STATE_DIM),
            actions.reshape(-1, 2),
            rec["latent"],
            rec.get("final_state"),
            rec.get("rewards"),
            rec.get("mode"),
        )


def trajectories_to_jsonl(trajs) -> str:
    return "".join(json.dumps(t.to_record(), sort_keys=True) + "\n" for t in trajs)


def save_trajectories(path, trajs) -> Path:
    return atomic_write_text(path, trajectories_to_jsonl(trajs))


def parse_trajectories(text: str) -> list[Trajectory]:
    """Parse JSON lines; a malformed record raises ``ValueError`` naming its index."""
    out = []
    for i, line in enumerate(l for l in text.splitlines() if l.strip()):
        try:
            out.append(Trajectory.from_record(json.loads(line)))
        except (ValueError, TypeError) as exc:
            raise ValueError(f"record {i}: {exc}") from exc
    return out


def load_trajectories(path) -> list[Trajectory]:
    return parse_trajectories(Path(path).read_text(encoding="utf-8"))


def generate_expert_dataset(
    config: CirclesConfig | None = None,
    per_mode: int = 10,
    seed: int = 0,
    noise: bool = True,
) -> list[Trajectory]:
    """``per_mode`` expert episodes for each mode, mode-major order, latent = one-hot mode."""
    config = config if config is not None else CirclesConfig()
    k = config.n_modes
    modes = np.repeat(np.arange(k), per_mode)
    env = CirclesEnv(config, n_envs=modes.size, seed=seed)
    env.reset(modes)
    T = config.episode_length
    states = np.empty((T, modes.size, STATE_DIM))
    actions = np.empty((T, modes.size, 2))
    rewards = np.empty((T, modes.size))
    for t in range(T):
        states[t] = env.state()
        actions[t] = expert_action(env, modes, noise=noise)
        env.step(actions[t])
        pos = env.positions
        for m in range(k):
            sel = modes == m
            rewards[t, sel] = circle_reward(pos[sel], config.mode_circles[m], config.bandwidth)
    final = env.state()
    eye = np.eye(k)
    return [
        Trajectory(states[:, i], actions[:, i], eye[modes[i]], final[i], rewards[:, i], int(modes[i]))
        for i in range(modes.size)
    ]
