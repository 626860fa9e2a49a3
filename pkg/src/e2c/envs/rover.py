"""Multi-rover exploration: rovers must jointly observe points of interest (POIs).

A POI counts as observed at a step when at least ``coupling`` rovers are
within its observation radius at the same time. The team reward, the summed
value of every POI observed at least once, arrives on the final step only.
Collisions (rover distance below twice the rover radius) are cost events.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .base import StepResult, TrajectoryRecorder, check_actions, pair_events

# stay + 8 compass directions
_MOVES = np.array([[0.0, 0.0]] + [[math.cos(a), math.sin(a)] for a in np.arange(8) * math.pi / 4])


@dataclass
class RoverConfig:
    n_rovers: int = 4
    n_pois: int = 4
    coupling: int = 2
    arena: float = 30.0
    obs_radius: float = 4.0
    rover_radius: float = 0.5
    max_step: float = 1.0
    horizon: int = 80
    spawn_side: float = 6.0
    poi_margin: float = 2.0
    poi_min_separation: float = 4.0
    sensor_scale: float = 5.0
    action_mode: str = "discrete"

    def __post_init__(self):
        if self.n_rovers < 1 or self.n_pois < 1 or self.horizon < 1:
            raise ConfigError("rover world needs at least one rover, one POI and a positive horizon")
        if not 1 <= self.coupling <= self.n_rovers:
            raise ConfigError(f"coupling {self.coupling} must lie in [1, n_rovers={self.n_rovers}]")
        if self.action_mode not in ("discrete", "continuous"):
            raise ConfigError(f"unknown action_mode {self.action_mode!r}")
        if self.spawn_side > self.arena or 2 * self.poi_margin >= self.arena:
            raise ConfigError("spawn square and POI margin must fit inside the arena")


class RoverWorld:
    obs_dim = 10
    extra_dim = 1
    channels = ("collision",)

    def __init__(self, cfg=None, seed=None):
        self.cfg = cfg or RoverConfig()
        self.n_agents = self.cfg.n_rovers
        self.action_mode = self.cfg.action_mode
        self.n_actions = len(_MOVES)
        self.action_dim = 2
        self.horizon = self.cfg.horizon
        self.rng = np.random.default_rng(seed)
        self.recorder = None
        self.t = 0

    # -- setup ------------------------------------------------------------
    def _place_pois(self, rng):
        c = self.cfg
        lo, hi = c.poi_margin, c.arena - c.poi_margin
        centre = np.full(2, c.arena / 2)
        pois = []
        for _ in range(1000 * c.n_pois):
            p = rng.uniform(lo, hi, size=2)
            # keep POIs out of the spawn square
            if np.all(np.abs(p - centre) < c.spawn_side / 2 + c.obs_radius):
                continue
            if all(np.linalg.norm(p - q) >= c.poi_min_separation for q in pois):
                pois.append(p)
                if len(pois) == c.n_pois:
                    return np.array(pois)
        raise ConfigError(f"could not place {c.n_pois} POIs with separation {c.poi_min_separation} in the arena")

    def reset(self, seed=None):
        rng = self.rng if seed is None else np.random.default_rng(seed)
        if seed is not None:
            self.rng = rng
        c = self.cfg
        self.poi_pos = self._place_pois(rng)
        self.poi_value = rng.integers(1, 6, size=c.n_pois).astype(np.float64)
        half = c.spawn_side / 2
        self.pos = c.arena / 2 + rng.uniform(-half, half, size=(c.n_rovers, 2))
        self.heading = rng.uniform(-math.pi, math.pi, size=c.n_rovers)
        self.observed = np.zeros(c.n_pois, dtype=bool)
        self.t = 0
        if self.recorder is not None:
            self.recorder.records.clear()
        return self.observations()

    def record(self, on=True):
        self.recorder = TrajectoryRecorder() if on else None

    # -- sensing ----------------------------------------------------------
    def _quadrant(self, delta):
        ang = np.arctan2(delta[..., 1], delta[..., 0]) % (2 * math.pi)
        return np.minimum((ang // (math.pi / 2)).astype(np.int64), 3)

    def observations(self):
        """Per rover: 4 quadrant rover densities, 4 quadrant POI densities, x/L, y/L."""
        c = self.cfg
        n = c.n_rovers
        obs = np.zeros((n, self.obs_dim))
        rows = np.arange(n)[:, None]
        d_r = self.pos[None, :, :] - self.pos[:, None, :]
        w_r = np.exp(-np.sqrt((d_r ** 2).sum(-1)) / c.sensor_scale)
        w_r[np.arange(n), np.arange(n)] = 0.0
        np.add.at(obs, (np.broadcast_to(rows, (n, n)), self._quadrant(d_r)), w_r)
        d_p = self.poi_pos[None, :, :] - self.pos[:, None, :]
        w_p = self.poi_value / 5.0 * np.exp(-np.sqrt((d_p ** 2).sum(-1)) / c.sensor_scale)
        np.add.at(obs, (np.broadcast_to(rows, w_p.shape), 4 + self._quadrant(d_p)), w_p)
        obs[:, :8] = np.minimum(obs[:, :8], 1.0)
        obs[:, 8:] = self.pos / c.arena
        return obs

    def global_features(self):
        return np.array([self.t / self.horizon])

    def poi_coverage(self):
        """(P, N) boolean: rover n within POI p's observation radius."""
        d = np.sqrt(((self.poi_pos[:, None, :] - self.pos[None, :, :]) ** 2).sum(-1))
        return d <= self.cfg.obs_radius

    def betas(self):
        """Per rover: value of the most valuable POI it is currently near, else 1."""
        cov = self.poi_coverage()
        vals = np.where(cov, self.poi_value[:, None], 0.0).max(axis=0)
        return np.where(cov.any(axis=0), vals, 1.0)

    # -- dynamics ---------------------------------------------------------
    def step(self, actions):
        c = self.cfg
        a = check_actions(actions, c.n_rovers, self.action_mode, 2)
        disp = _MOVES[a] * c.max_step if self.action_mode == "discrete" else a * c.max_step
        self.pos = np.clip(self.pos + disp, 0.0, c.arena)
        moving = np.any(disp != 0.0, axis=1)
        self.heading = np.where(moving, np.arctan2(disp[:, 1], disp[:, 0]), self.heading)
        self.t += 1

        cov = self.poi_coverage()
        now = cov.sum(axis=1) >= c.coupling
        self.observed |= now
        hits = pair_events(self.pos, np.full(c.n_rovers, c.rover_radius))
        per_agent = (hits.sum(0) + hits.sum(1)).astype(np.float64)
        team = float(hits.sum())
        done = self.t >= self.horizon
        reward = float(self.poi_value[self.observed].sum()) if done else 0.0
        obs = self.observations()
        info = {"collisions": per_agent, "beta": self.betas(), "pois_observed": self.observed.copy(),
                "pois_now": now}
        if self.recorder is not None:
            self.recorder.add(step=self.t, positions=self.pos, actions=np.asarray(actions), reward=reward,
                              costs=per_agent, team_cost=team, poi_positions=self.poi_pos,
                              poi_values=self.poi_value)
        return StepResult(obs, reward, {"collision": per_agent}, {"collision": team}, done, False, info)


def replay_terminal_reward(records, coupling, obs_radius):
    """Recompute the terminal team reward from a trajectory dump by brute force."""
    seen = set()
    for rec in records:
        for p, (px, py) in enumerate(rec["poi_positions"]):
            near = sum(1 for (x, y) in rec["positions"] if math.hypot(x - px, y - py) <= obs_radius)
            if near >= coupling:
                seen.add(p)
    values = records[-1]["poi_values"]
    return float(sum(values[p] for p in sorted(seen)))
