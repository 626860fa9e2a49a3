"""Particle-world tasks: physical deception, keep-away and predator-prey.

Three cooperative agents and one adversary move as point masses with linear
damping and soft contact forces. Cooperative agents pay a cost for each
collision event they take part in; the adversary learns separately.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..approximator import sample_action
from ..errors import ConfigError
from .base import StepResult, TrajectoryRecorder, check_actions, pair_events

TASKS = ("physical_deception", "keep_away", "predator_prey")
# noop, +x, -x, +y, -y
_DIRS = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


@dataclass
class ParticleConfig:
    task: str = "physical_deception"
    n_good: int = 3
    n_landmarks: int = 2
    horizon: int = 80
    dt: float = 0.1
    damping: float = 0.25
    mass: float = 1.0
    good_accel: float = 3.0
    adversary_accel: float | None = None
    good_max_speed: float = 1.0
    adversary_max_speed: float | None = None
    agent_size: float = 0.075
    adversary_size: float | None = None
    landmark_size: float | None = None
    contact_force: float = 100.0
    contact_margin: float = 1e-3
    adversary_collisions_cost: bool = True
    action_mode: str = "discrete"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"particle task must be one of {TASKS}, got {self.task!r}")
        if not 0.0 < self.damping < 1.0 or self.dt <= 0 or self.mass <= 0:
            raise ConfigError("need 0 < damping < 1, dt > 0 and mass > 0")
        if self.n_good < 1 or self.n_landmarks < 1:
            raise ConfigError("need at least one good agent and one landmark")
        if self.action_mode not in ("discrete", "continuous"):
            raise ConfigError(f"unknown action_mode {self.action_mode!r}")
        prey = self.task == "predator_prey"
        # task-dependent defaults: the prey is faster and smaller; obstacles are large
        if self.adversary_accel is None:
            self.adversary_accel = 4.0 if prey else self.good_accel
        if self.adversary_max_speed is None:
            self.adversary_max_speed = 1.3 if prey else self.good_max_speed
        if self.adversary_size is None:
            self.adversary_size = 0.05 if prey else self.agent_size
        if self.landmark_size is None:
            self.landmark_size = 0.2 if prey else 0.08


def _bound_penalty(x):
    x = abs(x)
    if x < 0.9:
        return 0.0
    if x < 1.0:
        return (x - 0.9) * 10
    return min(float(np.exp(2 * x - 2)), 10.0)


class ParticleWorld:
    """Entities are ordered: good agents, adversary, landmarks."""

    extra_dim = 1
    channels = ("collision",)

    def __init__(self, cfg=None, seed=None):
        self.cfg = c = cfg or ParticleConfig()
        self.n_agents = c.n_good
        self.adv = c.n_good
        self.n_movable = c.n_good + 1
        self.n_entities = self.n_movable + c.n_landmarks
        self.action_mode = c.action_mode
        self.n_actions = len(_DIRS)
        self.action_dim = 2
        self.horizon = c.horizon
        self.rng = np.random.default_rng(seed)
        self.recorder = None
        self.radii = np.array([c.agent_size] * c.n_good + [c.adversary_size] + [c.landmark_size] * c.n_landmarks)
        self.max_speed = np.array([c.good_max_speed] * c.n_good + [c.adversary_max_speed])
        self.accel = np.array([c.good_accel] * c.n_good + [c.adversary_accel])
        solid = c.task == "predator_prey"
        self.collidable = np.array([True] * self.n_movable + [solid] * c.n_landmarks)
        lm = c.n_landmarks
        self.obs_dim = 4 + 2 * lm + 2 * c.n_good + 2
        self.adversary_obs_dim = 4 + 2 * lm + 2 * c.n_good
        self.t = 0

    def record(self, on=True):
        self.recorder = TrajectoryRecorder() if on else None

    def reset(self, seed=None):
        rng = self.rng if seed is None else np.random.default_rng(seed)
        if seed is not None:
            self.rng = rng
        c = self.cfg
        self.pos = np.concatenate([rng.uniform(-1, 1, size=(self.n_movable, 2)),
                                   rng.uniform(-0.9, 0.9, size=(c.n_landmarks, 2))])
        self.vel = np.zeros((self.n_movable, 2))
        self.target = int(rng.integers(c.n_landmarks))
        self.t = 0
        if self.recorder is not None:
            self.recorder.records.clear()
        return self.observations()

    # -- observations -----------------------------------------------------
    def _base_obs(self, i):
        p = self.pos[i]
        lms = (self.pos[self.n_movable:] - p).ravel()
        others = (np.delete(self.pos[:self.n_movable], i, axis=0) - p).ravel()
        return np.concatenate([self.vel[i], p, lms, others])

    def observations(self):
        obs = np.zeros((self.n_agents, self.obs_dim))
        for i in range(self.n_agents):
            if self.cfg.task == "predator_prey":
                extra = self.vel[self.adv]
            else:
                extra = self.pos[self.n_movable + self.target] - self.pos[i]
            obs[i] = np.concatenate([self._base_obs(i), extra])
        return obs

    def adversary_observation(self):
        return self._base_obs(self.adv)

    def global_features(self):
        return np.array([self.t / self.horizon])

    # -- physics ----------------------------------------------------------
    def contact_forces(self):
        c = self.cfg
        f = np.zeros((self.n_entities, 2))
        for a in range(self.n_entities):
            for b in range(a + 1, self.n_entities):
                if not (self.collidable[a] and self.collidable[b]) or (a >= self.n_movable and b >= self.n_movable):
                    continue
                delta = self.pos[a] - self.pos[b]
                dist = float(np.sqrt(delta @ delta))
                k = c.contact_margin
                pen = np.logaddexp(0.0, -(dist - self.radii[a] - self.radii[b]) / k) * k
                if pen == 0.0:
                    continue
                force = c.contact_force * delta / max(dist, 1e-12) * pen
                f[a] += force
                f[b] -= force
        return f[:self.n_movable]

    def integrate(self, applied):
        """One damped Euler tick for the movable entities given applied forces (n_movable, 2)."""
        c = self.cfg
        force = applied + self.contact_forces()
        self.vel = self.vel * (1.0 - c.damping) + force / c.mass * c.dt
        speed = np.sqrt((self.vel ** 2).sum(1))
        scale = np.where(speed > self.max_speed, self.max_speed / np.maximum(speed, 1e-12), 1.0)
        self.vel = self.vel * scale[:, None]
        self.pos[:self.n_movable] = self.pos[:self.n_movable] + self.vel * c.dt

    def _forces(self, actions, adv_action):
        if self.action_mode == "discrete":
            u = _DIRS[np.concatenate([actions, [adv_action]]).astype(np.int64)]
        else:
            u = np.concatenate([actions, np.asarray(adv_action, dtype=np.float64).reshape(1, 2)])
        return u * self.accel[:, None]

    # -- rewards / costs --------------------------------------------------
    def _dist(self, a, b):
        d = self.pos[a] - self.pos[b]
        return float(np.sqrt(d @ d))

    def _rewards(self, touching_adv):
        c = self.cfg
        goal = self.n_movable + self.target
        good = range(c.n_good)
        if c.task == "physical_deception":
            r_i = -min(self._dist(i, goal) for i in good) + self._dist(self.adv, goal)
            return c.n_good * r_i, -self._dist(self.adv, goal)
        if c.task == "keep_away":
            dists = [self._dist(i, goal) for i in good]
            return -float(sum(dists)), min(dists) - self._dist(self.adv, goal)
        n_touch = float(touching_adv.sum())
        adv_r = -10.0 * n_touch - sum(_bound_penalty(x) for x in self.pos[self.adv])
        return 10.0 * n_touch, adv_r

    def step(self, actions, adversary_action=None):
        c = self.cfg
        acts = check_actions(actions, c.n_good, self.action_mode, 2)
        if adversary_action is None:
            adversary_action = 0 if self.action_mode == "discrete" else np.zeros(2)
        elif self.action_mode == "continuous":
            adversary_action = np.clip(np.asarray(adversary_action, dtype=np.float64), -1, 1)
        self.integrate(self._forces(acts, adversary_action))
        self.t += 1

        mask = np.zeros((self.n_entities, self.n_entities), dtype=bool)
        good = np.arange(self.n_entities) < c.n_good
        mask |= good[:, None] | good[None, :]
        if not c.adversary_collisions_cost:
            mask[:, self.adv] = mask[self.adv, :] = False
        mask &= self.collidable[:, None] & self.collidable[None, :]
        hits = pair_events(self.pos, self.radii, mask)
        sym = hits | hits.T
        per_agent = sym[:c.n_good].sum(1).astype(np.float64)
        team = float(hits.sum())
        touching = pair_events(self.pos, self.radii)
        touching = (touching | touching.T)[:c.n_good, self.adv]
        reward, adv_reward = self._rewards(touching)
        done = self.t >= self.horizon
        info = {"collisions": per_agent, "adversary_reward": adv_reward,
                "adversary_obs": self.adversary_observation()}
        if self.recorder is not None:
            self.recorder.add(step=self.t, positions=self.pos, actions=np.asarray(actions),
                              adversary_action=np.asarray(adversary_action), reward=reward,
                              costs=per_agent, team_cost=team)
        return StepResult(self.observations(), reward, {"collision": per_agent}, {"collision": team},
                          done, done, info)


def adversary_policy_step(net, observation, rng=None, mode="stochastic"):
    """Action for the adversary from its own policy network."""
    out, _ = net.step(observation)
    action, _, _ = sample_action(out, net.head, mode, rng, net.log_std)
    return action
