"""Episode collection.

Episode ``e`` of environment worker ``w`` resets with seed
(run seed, iteration, w, e) and draws its action noise from a generator
seeded by (run seed, iteration, w, e, 1), so a batch is the same whichever
process collects it. Episodes are merged in (worker, episode) order.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..approximator import sample_action
from ..envs import make_env


@dataclass
class Episode:
    obs: np.ndarray  # (T+1, N, d)
    extras: np.ndarray  # (T+1, e)
    actions: np.ndarray  # (T, N) or (T, N, 2)
    logp: np.ndarray  # (T, N)
    reward: np.ndarray  # (T,)
    costs: dict  # channel -> (T, N)
    team_costs: dict  # channel -> (T,)
    terminated: bool
    betas: np.ndarray | None = None  # (T, N)
    hidden: np.ndarray | None = None  # (T, N, H) actor state before each step
    adv_obs: np.ndarray | None = None
    adv_actions: np.ndarray | None = None
    adv_logp: np.ndarray | None = None
    adv_reward: np.ndarray | None = None

    @property
    def length(self):
        return self.reward.shape[0]


@dataclass
class RolloutBatch:
    episodes: list = field(default_factory=list)

    @property
    def transitions(self):
        return sum(ep.length for ep in self.episodes)

    def __len__(self):
        return len(self.episodes)


def actor_inputs(obs, agent_id=True):
    """Local observations, optionally with an agent one-hot appended (shared weights)."""
    if not agent_id:
        return obs
    n = obs.shape[-2]
    eye = np.broadcast_to(np.eye(n), obs.shape[:-1] + (n,))
    return np.concatenate([obs, eye], axis=-1)


class _Recorder:
    """Accumulates one episode's per-step streams."""

    def __init__(self, env, obs):
        self.obs = [obs]
        self.extras = [env.global_features()]
        self.acts, self.logps, self.rews, self.hiddens, self.betas = [], [], [], [], []
        self.costs = {ch: [] for ch in env.channels}
        self.team = {ch: [] for ch in env.channels}
        self.adv_o, self.adv_a, self.adv_lp, self.adv_r = [], [], [], []
        self.terminated = False

    def episode(self, with_adversary):
        ep = Episode(
            obs=np.stack(self.obs), extras=np.stack(self.extras), actions=np.stack(self.acts),
            logp=np.stack(self.logps), reward=np.array(self.rews),
            costs={k: np.stack(v) for k, v in self.costs.items()},
            team_costs={k: np.array(v) for k, v in self.team.items()}, terminated=self.terminated,
            betas=np.stack(self.betas) if self.betas else None,
            hidden=np.stack(self.hiddens) if self.hiddens else None,
        )
        if with_adversary:
            ep.adv_obs, ep.adv_actions = np.stack(self.adv_o), np.stack(self.adv_a)
            ep.adv_logp, ep.adv_reward = np.array(self.adv_lp), np.array(self.adv_r)
        return ep


def run_episodes(envs, actor, rngs, reset_seeds, agent_id=True, adversary=None, mode="stochastic",
                 team_policy=None):
    """Play one episode in each env, stepping them in lockstep.

    Actor (and adversary) outputs for all running episodes come from one
    batched forward pass; action noise for episode ``e`` is drawn from
    ``rngs[e]`` only, so an episode does not depend on its batch mates.
    ``team_policy(obs, rng)`` overrides the actor (e.g. a random team).
    """
    E = len(envs)
    env0 = envs[0]
    N = env0.n_agents
    obs = [env.reset(seed=s) for env, s in zip(envs, reset_seeds)]
    recs = [_Recorder(env, o) for env, o in zip(envs, obs)]
    has_adv = hasattr(env0, "adversary_observation")
    with_adv = has_adv and adversary is not None
    adv_obs = [env.adversary_observation() for env in envs] if has_adv else None
    if with_adv:
        for r, o in zip(recs, adv_obs):
            r.adv_o.append(o)
    h = None
    if team_policy is None and actor.recurrent:
        h = np.zeros((E, N, actor.gru.hidden_size))
    active = list(range(E))
    for _ in range(env0.horizon):
        if not active:
            break
        A = len(active)
        if team_policy is None:
            X = np.stack([actor_inputs(obs[e], agent_id) for e in active]).reshape(A * N, -1)
            hs = None if h is None else h[active].reshape(A * N, -1)
            out, h_new = actor.step(X, hs)
            out = out.reshape(A, N, -1)
            if h is not None:
                for j, e in enumerate(active):
                    recs[e].hiddens.append(h[e].copy())
                h[active] = h_new.reshape(A, N, -1)
        adv_out = None
        if with_adv:
            adv_out, _ = adversary.step(np.stack([adv_obs[e] for e in active]))
        for j, e in enumerate(active):
            rec, rng = recs[e], rngs[e]
            if team_policy is not None:
                a, lp = team_policy(obs[e], rng)
            else:
                a, lp, _ = sample_action(out[j], actor.head, mode, rng, actor.log_std)
            adv_action = None
            if with_adv:
                adv_action, lp_a, _ = sample_action(adv_out[j], adversary.head, mode, rng, adversary.log_std)
                rec.adv_a.append(adv_action)
                rec.adv_lp.append(lp_a)
            res = envs[e].step(a, adv_action) if has_adv else envs[e].step(a)
            rec.acts.append(a)
            rec.logps.append(lp)
            rec.rews.append(res.reward)
            for ch in env0.channels:
                rec.costs[ch].append(res.costs[ch])
                rec.team[ch].append(res.team_costs[ch])
            if "beta" in res.info:
                rec.betas.append(res.info["beta"])
            if has_adv:
                adv_obs[e] = res.info["adversary_obs"]
                if with_adv:
                    rec.adv_o.append(adv_obs[e])
                    rec.adv_r.append(res.info["adversary_reward"])
            obs[e] = res.obs
            rec.obs.append(res.obs)
            rec.extras.append(envs[e].global_features())
            if res.done:
                rec.terminated = not res.truncated
        active = [e for e in active if not (recs[e].rews and _done(envs[e], recs[e]))]
    return [r.episode(with_adv) for r in recs]


def _done(env, rec):
    return rec.terminated or len(rec.rews) >= env.horizon


def run_episode(env, actor, rng, reset_seed, agent_id=True, adversary=None, mode="stochastic",
                team_policy=None):
    """Play a single episode (see :func:`run_episodes`)."""
    return run_episodes([env], actor, [rng], [reset_seed], agent_id, adversary, mode, team_policy)[0]


def episodes_per_env(batch_size, horizon, num_envs):
    return max(1, math.ceil(batch_size / (horizon * num_envs)))


def _collect_env(args):
    kind, params, actor, adversary, seed, iteration, w, n_eps, agent_id, mode, team_policy = args
    envs = [make_env(kind, params) for _ in range(n_eps)]
    rngs = [np.random.default_rng([seed, iteration, w, e, 1]) for e in range(n_eps)]
    seeds = [[seed, iteration, w, e] for e in range(n_eps)]
    return run_episodes(envs, actor, rngs, seeds, agent_id, adversary, mode, team_policy)


def collect_rollouts(env_kind, env_params, actor, hp, seed, iteration, adversary=None, pool=None,
                     mode="stochastic", team_policy=None, horizon=None):
    """Gather whole episodes until at least ``hp.batch_size`` joint transitions.

    With a process ``pool`` the per-environment jobs run in parallel; the
    result is identical to the sequential one.
    """
    if horizon is None:
        horizon = make_env(env_kind, env_params).horizon
    n_eps = episodes_per_env(hp.batch_size, horizon, hp.num_envs)
    jobs = [(env_kind, env_params, actor, adversary, seed, iteration, w, n_eps, hp.agent_id, mode, team_policy)
            for w in range(hp.num_envs)]
    results = pool.map(_collect_env, jobs) if pool is not None else map(_collect_env, jobs)
    batch = RolloutBatch()
    for eps in results:
        batch.episodes.extend(eps)
    return batch


def make_pool(workers):
    return ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
