from __future__ import annotations

import numpy as np

from ..errors import UsageError


def gae_episode(rewards, values, gamma, lam):
    """GAE for one episode.

    ``values`` has one more row than ``rewards``: the last row is the
    bootstrap value (0 when the episode truly terminated). Trailing
    dimensions (agents, ...) are handled elementwise.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    T = rewards.shape[0]
    if values.shape != (T + 1,) + rewards.shape[1:]:
        raise UsageError(f"values shape {values.shape} must be rewards shape {rewards.shape} plus one bootstrap row")
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv, adv + values[:T]


def gae(values, rewards, gamma, lam, episode_bounds, last_values):
    """GAE over a concatenated stream split into episodes.

    ``episode_bounds`` lists (start, end) pairs that must tile
    ``[0, len(rewards))`` in order; ``last_values[e]`` bootstraps episode e.
    Returns (advantages, return targets).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != rewards.shape:
        raise UsageError("values and rewards must be aligned")
    if len(last_values) != len(episode_bounds):
        raise UsageError("need one bootstrap value per episode")
    pos = 0
    for s, e in episode_bounds:
        if s != pos or e <= s:
            raise UsageError(f"episode bounds must tile the stream in order; got ({s}, {e}) at {pos}")
        pos = e
    if pos != rewards.shape[0]:
        raise UsageError("episode bounds do not cover the whole stream")
    adv = np.empty_like(rewards)
    targets = np.empty_like(rewards)
    for (s, e), boot in zip(episode_bounds, last_values):
        v = np.concatenate([values[s:e], np.asarray(boot, dtype=np.float64)[None, ...]])
        adv[s:e], targets[s:e] = gae_episode(rewards[s:e], v, gamma, lam)
    return adv, targets


def normalize(x, eps=1e-8):
    return (x - x.mean()) / (x.std() + eps)
