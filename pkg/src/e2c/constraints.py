"""Cost constraints and Lagrange multiplier bookkeeping for individual and team scopes."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError

SCOPES = ("individual", "team")
DISCOUNTING = ("episodic", "discounted")


@dataclass
class ConstraintSpec:
    """One cost constraint.

    ``threshold`` is the team budget. For individual scope each agent gets
    ``threshold / n_agents`` unless ``agent_thresholds`` lists them explicitly.
    """

    name: str = "collision"
    scope: str = "team"
    threshold: float = 20.0
    channel: str = "collision"
    discounting: str = "episodic"
    agent_thresholds: list | None = None

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise ConfigError(f"constraint scope must be one of {SCOPES}, got {self.scope!r}")
        if self.discounting not in DISCOUNTING:
            raise ConfigError(f"constraint discounting must be one of {DISCOUNTING}, got {self.discounting!r}")
        if self.threshold < 0 or any(t < 0 for t in self.agent_thresholds or ()):
            raise ConfigError("constraint thresholds must be non-negative")

    def thresholds(self, n_agents, exact=False):
        """Per-constraint-holder thresholds; exact=True keeps the rational shares."""
        cast = Fraction if exact else float
        if self.scope == "team":
            return [cast(self.threshold)]
        if self.agent_thresholds is not None:
            if len(self.agent_thresholds) != n_agents:
                raise ConfigError(f"constraint {self.name!r}: {len(self.agent_thresholds)} agent thresholds for {n_agents} agents")
            return [cast(t) for t in self.agent_thresholds]
        return [cast(s) for s in split_threshold(self.threshold, n_agents)]


def split_threshold(team_threshold, n_agents):
    """Fair per-agent shares of a team budget, as exact rationals summing to it."""
    if n_agents < 1:
        raise ConfigError("need at least one agent")
    total = Fraction(team_threshold)
    return [total / n_agents] * n_agents


def accumulate_cost(costs, gamma=1.0, discounting="episodic"):
    """Episodic cost return of a (T,) or (T, N) cost stream."""
    c = np.asarray(costs, dtype=np.float64)
    if discounting == "episodic":
        return c.sum(axis=0)
    if discounting != "discounted":
        raise ConfigError(f"unknown discounting {discounting!r}")
    w = gamma ** np.arange(c.shape[0], dtype=np.float64)
    return np.tensordot(w, c, axes=(0, 0))


@dataclass
class MultiplierState:
    value: float = 1.0
    lr: float = 0.05
    init: float = 1.0
    last_cost: float = 0.0

    def update(self, cost_return, threshold):
        """Projected step lambda <- max(0, lambda + lr * (J_c - l))."""
        self.last_cost = float(cost_return)
        self.value = max(0.0, self.value + self.lr * (self.last_cost - threshold))
        return self.value


def update_multiplier(state, cost_return, threshold):
    if threshold < 0:
        raise ConfigError("threshold must be non-negative")
    return state.update(cost_return, threshold)


def lagrangian_penalty(lambdas, cost_advantages):
    """Per-sample sum_j lambda_j * A_cj.

    ``lambdas`` has shape (m,) or (m, B) (per-sample multipliers, e.g. each
    sample's own agent multiplier); ``cost_advantages`` has shape (m, B).
    """
    lam = np.asarray(lambdas, dtype=np.float64)
    adv = np.asarray(cost_advantages, dtype=np.float64)
    if adv.ndim == 1:
        adv = adv[None, :]
    if lam.shape[0] != adv.shape[0]:
        raise ConfigError(f"{lam.shape[0]} multipliers for {adv.shape[0]} cost-advantage streams")
    if lam.ndim == 1:
        lam = lam[:, None]
    return (lam * adv).sum(axis=0)


@dataclass
class ConstraintSet:
    """Instantiated multipliers for a list of constraints and a team size.

    Individual constraints hold one multiplier per agent, team constraints one.
    """

    specs: list
    n_agents: int
    lr: float = 0.05
    init: float = 1.0
    multipliers: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate constraint names in {names}")
        for spec in self.specs:
            ths = spec.thresholds(self.n_agents)
            self.thresholds[spec.name] = ths
            self.multipliers[spec.name] = [MultiplierState(self.init, self.lr, self.init) for _ in ths]

    def lambdas(self, name):
        return np.array([m.value for m in self.multipliers[name]])

    def update(self, name, cost_returns):
        """One multiplier step per slot using batch-mean cost returns (len = slots)."""
        cost_returns = np.atleast_1d(np.asarray(cost_returns, dtype=np.float64))
        slots = self.multipliers[name]
        if cost_returns.shape != (len(slots),):
            raise ConfigError(f"constraint {name!r}: {cost_returns.shape} cost returns for {len(slots)} multipliers")
        for m, jc, th in zip(slots, cost_returns, self.thresholds[name]):
            m.update(jc, th)
        return self.lambdas(name)

    def column_names(self):
        cols = []
        for spec in self.specs:
            if spec.scope == "team":
                cols.append(f"lambda_{spec.name}")
            else:
                cols.extend(f"lambda_{spec.name}_a{i}" for i in range(self.n_agents))
        return cols

    def flat_lambdas(self):
        return [m.value for spec in self.specs for m in self.multipliers[spec.name]]
