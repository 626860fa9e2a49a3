"""Unconstrained PPO learner for the particle-world adversary."""
from __future__ import annotations

import numpy as np

from ..approximator import Adam, DenseNet, PolicyNet
from .advantages import gae_episode, normalize
from .rollout import collect_rollouts
from .update import critic_update, policy_update


class AdversaryLearner:
    def __init__(self, env, hp, seed):
        head = "categorical" if env.action_mode == "discrete" else "gaussian"
        out = env.n_actions if head == "categorical" else env.action_dim
        self.hp = hp
        self.actor = PolicyNet(env.adversary_obs_dim, out, hp.actor_hidden, head, 0,
                               rng=np.random.default_rng([seed, 11]))
        self.critic = DenseNet([env.adversary_obs_dim + env.extra_dim, *hp.critic_hidden, 1],
                               rng=np.random.default_rng([seed, 12]))
        self.actor_opt = Adam(self.actor.n_params, hp.actor_lr)
        self.critic_opt = Adam(self.critic.n_params, hp.critic_lr)
        self.actor_rng = np.random.default_rng([seed, 13])
        self.critic_rng = np.random.default_rng([seed, 14])

    def update(self, episodes):
        hp = self.hp
        X, A, LP, ADV, XC, TG = [], [], [], [], [], []
        for ep in episodes:
            xc = np.concatenate([ep.adv_obs, ep.extras], axis=1)
            v = self.critic.forward(xc)[:, 0]
            if ep.terminated:
                v[-1] = 0.0
            adv, tgt = gae_episode(ep.adv_reward, v, hp.gamma, hp.gae_lambda)
            X.append(ep.adv_obs[:-1])
            A.append(ep.adv_actions)
            LP.append(ep.adv_logp)
            ADV.append(adv)
            XC.append(xc[:-1])
            TG.append(tgt)
        adv = normalize(np.concatenate(ADV))
        data = {"X": np.concatenate(X), "actions": np.concatenate(A), "old_logp": np.concatenate(LP),
                "adv": adv, "penalty": np.zeros_like(adv)}
        stats = policy_update(self.actor, self.actor_opt, data, hp, self.actor_rng, hp.adversary_entropy_coef)
        stats["value_loss"] = critic_update(self.critic, self.critic_opt, np.concatenate(XC), np.concatenate(TG),
                                            hp, self.critic_rng)
        return stats


def train_adversary_alone(env_params, hp, iterations, seed):
    """Train only the adversary against a frozen uniformly random team.

    Returns the adversary's mean episodic reward per iteration.
    """
    from ..envs import make_env

    env = make_env("particle", env_params)
    learner = AdversaryLearner(env, hp, seed)
    n_good, n_act = env.n_agents, env.n_actions

    def random_team(obs, rng):
        a = rng.integers(0, n_act, size=n_good)
        return a, np.full(n_good, -np.log(n_act))

    history = []
    for k in range(iterations):
        batch = collect_rollouts("particle", env_params, None, hp, seed, k, adversary=learner.actor,
                                 team_policy=random_team, horizon=env.horizon)
        history.append(float(np.mean([ep.adv_reward.sum() for ep in batch.episodes])))
        learner.update(batch.episodes)
    return history
