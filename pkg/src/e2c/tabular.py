"""Exact evaluation on small cooperative MDPs and numerical checks of the
trust-region cost bound for team constraints.

Joint actions are enumerated in C order over the agents' action counts, so
joint index ``u`` corresponds to ``np.unravel_index(u, action_counts)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, NumericError


@dataclass
class TabularDecMDP:
    transitions: np.ndarray  # (S, U, S)
    rewards: np.ndarray  # (S, U)
    costs: np.ndarray  # (m, S, U), binary
    action_counts: tuple
    gamma: float = 0.9
    initial: np.ndarray | None = None

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.costs = np.asarray(self.costs, dtype=np.float64)
        self.action_counts = tuple(int(a) for a in self.action_counts)
        S, U, S2 = self.transitions.shape
        if S != S2 or U != math.prod(self.action_counts):
            raise ConfigError(f"transition tensor {self.transitions.shape} inconsistent with action counts {self.action_counts}")
        if np.any(self.transitions < 0) or np.max(np.abs(self.transitions.sum(-1) - 1.0)) > 1e-12:
            raise ConfigError("transition rows must be probability distributions")
        if self.costs.ndim != 3 or self.costs.shape[1:] != (S, U):
            raise ConfigError(f"cost tables must have shape (m, {S}, {U})")
        if not np.all((self.costs == 0) | (self.costs == 1)):
            raise ConfigError("cost tables must be binary")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.initial is None:
            self.initial = np.full(S, 1.0 / S)
        self.initial = np.asarray(self.initial, dtype=np.float64)

    @property
    def n_states(self):
        return self.transitions.shape[0]

    @property
    def n_agents(self):
        return len(self.action_counts)


def joint_policy(policies):
    """Product-form joint policy table (S, U) from per-agent tables (S, n_i)."""
    joint = np.asarray(policies[0], dtype=np.float64)
    for p in policies[1:]:
        joint = (joint[:, :, None] * np.asarray(p)[:, None, :]).reshape(joint.shape[0], -1)
    return joint


def check_policy(mdp, policies):
    if len(policies) != mdp.n_agents:
        raise ConfigError(f"{len(policies)} policy tables for {mdp.n_agents} agents")
    for i, (p, n) in enumerate(zip(policies, mdp.action_counts)):
        if p.shape != (mdp.n_states, n) or np.any(p < 0) or np.max(np.abs(p.sum(1) - 1)) > 1e-9:
            raise ConfigError(f"policy table of agent {i} is not a (S, {n}) stochastic matrix")


@dataclass
class CostValues:
    Q: np.ndarray
    V: np.ndarray
    A: np.ndarray
    J: float


def _policy_matrices(mdp, policies):
    pi = joint_policy(policies)
    p_pi = np.einsum("su,sut->st", pi, mdp.transitions)
    return pi, p_pi


def exact_cost_values(mdp, policies, j=0):
    """Solve V = c_pi + gamma P_pi V directly and derive Q, A and J."""
    check_policy(mdp, policies)
    pi, p_pi = _policy_matrices(mdp, policies)
    c = mdp.costs[j]
    c_pi = (pi * c).sum(1)
    M = np.eye(mdp.n_states) - mdp.gamma * p_pi
    V = np.linalg.solve(M, c_pi)
    if not np.all(np.isfinite(V)) or np.max(np.abs(M @ V - c_pi)) >= 1e-10:
        raise NumericError("policy evaluation solve failed its residual check")
    Q = c + mdp.gamma * mdp.transitions @ V
    A = Q - V[:, None]
    return CostValues(Q, V, A, float(mdp.initial @ V))


def occupancy(mdp, policies):
    """Unnormalised discounted state visitation sum_t gamma^t Pr(s_t = s)."""
    _, p_pi = _policy_matrices(mdp, policies)
    return np.linalg.solve((np.eye(mdp.n_states) - mdp.gamma * p_pi).T, mdp.initial)


def surrogate_cost(mdp, policies, new_policy, agent, j=0, values=None):
    """Expected cost advantage of swapping ``agent``'s table for ``new_policy``
    while the others keep theirs, weighted by the discounted visitation of the
    current joint policy."""
    values = values or exact_cost_values(mdp, policies, j)
    mixed = list(policies)
    mixed[agent] = new_policy
    rho = occupancy(mdp, policies)
    return float(rho @ (joint_policy(mixed) * values.A).sum(1))


def _kl_rows(p, q):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    terms = np.where((p > 0) & (q <= 0), np.inf, terms)
    return terms.sum(-1)


@dataclass
class Divergences:
    agent_kl: np.ndarray  # (N, S)
    joint_kl: np.ndarray  # (S,)
    joint_tv: np.ndarray  # (S,)

    @property
    def agent_kl_max(self):
        return self.agent_kl.max(axis=1)

    @property
    def joint_kl_max(self):
        return float(self.joint_kl.max())

    @property
    def joint_tv_max(self):
        return float(self.joint_tv.max())


def policy_divergences(policies, new_policies):
    """Per-state KL(pi || pi_bar) per agent and for the joint product, plus joint TV."""
    agent_kl = np.stack([_kl_rows(np.asarray(p), np.asarray(q)) for p, q in zip(policies, new_policies)])
    a, b = joint_policy(policies), joint_policy(new_policies)
    return Divergences(agent_kl, _kl_rows(a, b), 0.5 * np.abs(a - b).sum(1))


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    slack: float
    nu: float
    j_current: float
    surrogate: float
    agent: int
    agent_kl: list = field(default_factory=list)
    tv_max: float = 0.0
    kl_joint_max: float = 0.0
    single_agent: bool = True
    kl_infinite: bool = False

    def to_dict(self):
        return asdict(self)


def bound_coefficient(values, gamma):
    return 4.0 * gamma * float(np.max(np.abs(values.A))) / (1.0 - gamma) ** 2


def verify_team_bound(mdp, policies, new_policies, j=0, agent=None):
    """Evaluate both sides of
    J(pi_bar) <= J(pi) + L(pi_bar^i) + nu * sum_h max_s KL(pi^h, pi_bar^h).

    ``agent`` defaults to the single agent whose table changed (agent 0 if
    none did). When several tables changed the report is still produced but
    ``single_agent`` is False.
    """
    check_policy(mdp, policies)
    check_policy(mdp, new_policies)
    changed = [h for h, (p, q) in enumerate(zip(policies, new_policies)) if not np.array_equal(p, q)]
    if agent is None:
        agent = changed[0] if changed else 0
    cur = exact_cost_values(mdp, policies, j)
    new = exact_cost_values(mdp, new_policies, j)
    L = surrogate_cost(mdp, policies, new_policies[agent], agent, j, values=cur)
    div = policy_divergences(policies, new_policies)
    kl_max = div.agent_kl_max
    nu = bound_coefficient(cur, mdp.gamma)
    kl_sum = float(kl_max.sum())
    infinite = not math.isfinite(kl_sum)
    penalty = nu * kl_sum if kl_sum > 0 else 0.0
    rhs = cur.J + L + penalty
    return BoundReport(
        lhs=new.J, rhs=rhs, slack=rhs - new.J, nu=nu, j_current=cur.J, surrogate=L, agent=agent,
        agent_kl=[float(x) for x in kl_max], tv_max=div.joint_tv_max, kl_joint_max=div.joint_kl_max,
        single_agent=len(changed) <= 1, kl_infinite=infinite,
    )


# -- random instances -------------------------------------------------------

def random_policy(rng, n_states, n_actions, floor=1e-6):
    p = rng.dirichlet(np.ones(n_actions), size=n_states)
    p = np.maximum(p, floor)
    return p / p.sum(1, keepdims=True)


def random_mdp(rng, n_states, action_counts, n_costs=1, gamma=0.9):
    U = math.prod(action_counts)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, U))
    # dirichlet rows can be off from 1 by a few ulps
    P /= P.sum(-1, keepdims=True)
    costs = (rng.random((n_costs, n_states, U)) < 0.5).astype(np.float64)
    return TabularDecMDP(P, rng.standard_normal((n_states, U)), costs, tuple(action_counts),
                         gamma, rng.dirichlet(np.ones(n_states)))


def random_instance(rng, max_states=5, max_agents=3, max_actions=3, gamma=0.9):
    """Random (mdp, pi, pi_bar) with pi_bar differing from pi in one agent."""
    S = int(rng.integers(1, max_states + 1))
    N = int(rng.integers(1, max_agents + 1))
    counts = tuple(int(x) for x in rng.integers(1, max_actions + 1, size=N))
    mdp = random_mdp(rng, S, counts, gamma=gamma)
    pols = [random_policy(rng, S, n) for n in counts]
    agent = int(rng.integers(N))
    u = rng.uniform(0.0, 0.5)
    new = list(pols)
    new[agent] = (1 - u) * pols[agent] + u * random_policy(rng, S, counts[agent])
    return mdp, pols, new, agent


def monte_carlo_cost(mdp, policies, j=0, episodes=100_000, rng=None, tol=1e-9, method="discounted"):
    """Monte-Carlo estimate of J_j and its standard error.

    ``discounted`` sums gamma^t c_t and truncates episodes once
    gamma^t / (1 - gamma) drops below ``tol`` (bias at most ``tol`` per unit
    cost). ``termination`` treats 1 - gamma as a per-step stopping
    probability and sums undiscounted costs until the stop; it is unbiased,
    so its standard error stays meaningful even when costs are constant.
    """
    rng = rng or np.random.default_rng()
    if method not in ("discounted", "termination"):
        raise ConfigError(f"unknown Monte-Carlo method {method!r}")
    cdf_pi = [np.cumsum(p, axis=1) for p in policies]
    cdf_p = np.cumsum(mdp.transitions, axis=-1)
    strides = np.array([math.prod(mdp.action_counts[i + 1:]) for i in range(mdp.n_agents)])
    s = np.minimum((np.cumsum(mdp.initial)[None, :] < rng.random((episodes, 1))).sum(1), mdp.n_states - 1)
    ret = np.zeros(episodes)

    def step(s):
        u = np.zeros(len(s), dtype=np.int64)
        for cdf, n, stride in zip(cdf_pi, mdp.action_counts, strides):
            a = np.minimum((cdf[s] < rng.random((len(s), 1))).sum(1), n - 1)
            u += a * stride
        nxt = np.minimum((cdf_p[s, u] < rng.random((len(s), 1))).sum(1), mdp.n_states - 1)
        return mdp.costs[j, s, u], nxt

    if method == "discounted":
        horizon = 1 if mdp.gamma == 0 else int(math.ceil(math.log(tol * (1 - mdp.gamma)) / math.log(mdp.gamma)))
        disc = 1.0
        for _ in range(horizon):
            c, s = step(s)
            ret += disc * c
            disc *= mdp.gamma
    else:
        alive = np.arange(episodes)
        while len(alive):
            c, nxt = step(s[alive])
            ret[alive] += c
            s[alive] = nxt
            alive = alive[rng.random(len(alive)) < mdp.gamma]
    return float(ret.mean()), float(ret.std(ddof=1) / math.sqrt(episodes))


def verification_suite(n_instances=1000, seed=0, gamma=0.9, max_states=5, max_agents=3, max_actions=3):
    """Run the randomized bound check; yields one record per instance."""
    for k in range(n_instances):
        rng = np.random.default_rng([seed, k])
        mdp, pols, new, agent = random_instance(rng, max_states, max_agents, max_actions, gamma)
        rep = verify_team_bound(mdp, pols, new, 0, agent)
        div = policy_divergences(pols, new)
        yield {
            "seed": [seed, k],
            "states": mdp.n_states,
            "action_counts": list(mdp.action_counts),
            **rep.to_dict(),
            "pinsker_ok": bool(np.all(div.joint_tv ** 2 <= div.joint_kl + 1e-15)),
            "kl_sum_identity_err": float(np.max(np.abs(div.joint_kl - div.agent_kl.sum(0)))),
        }


def summarize(records):
    records = list(records)
    slacks = [r["slack"] for r in records]
    return {
        "instances": len(records),
        "min_slack": min(slacks) if slacks else None,
        "violations": sum(s < -1e-9 for s in slacks),
        "pinsker_failures": sum(not r["pinsker_ok"] for r in records),
        "max_kl_identity_err": max((r["kl_sum_identity_err"] for r in records), default=0.0),
    }
