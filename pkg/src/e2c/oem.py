"""Observation-entropy exploration bonuses (count-based and k-nearest-neighbour).

Buffers are episode scoped: call :meth:`ObservationBuffer.clear` (or build a
fresh one) at each episode boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

ESTIMATORS = ("count_based", "knn_approximation")
BETA_MODES = ("none", "poi_values")
MIXING_MODES = ("pure", "mixed")


@dataclass
class OEMConfig:
    estimator: str = "count_based"
    k: int = 5
    beta: str = "none"
    mixing: str = "pure"
    psi: float = 0.3
    quantization: int = 1

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"oem.estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.beta not in BETA_MODES:
            raise ConfigError(f"oem.beta must be one of {BETA_MODES}, got {self.beta!r}")
        if self.mixing not in MIXING_MODES:
            raise ConfigError(f"oem.mixing must be one of {MIXING_MODES}, got {self.mixing!r}")
        if int(self.k) < 1 or int(self.quantization) < 1:
            raise ConfigError("oem.k and oem.quantization must be positive integers")


def quantize(obs, level=1):
    """Map each coordinate (expected in [0, 1]) to one of ``level + 1`` bins.

    Level 1 is binary: values >= 0.5 map to 1.
    """
    x = np.clip(np.asarray(obs, dtype=np.float64), 0.0, 1.0)
    return tuple(np.minimum(np.floor(x * (level + 1)), level).astype(np.int64).tolist())


class ObservationBuffer:
    """Observations seen so far in one episode, with an exact quantized-count index."""

    def __init__(self, dim, quantization=1, capacity=2048):
        self.dim = dim
        self.quantization = quantization
        self._data = np.empty((capacity, dim))
        self._n = 0
        self._counts = {}

    def __len__(self):
        return self._n

    @property
    def data(self):
        return self._data[:self._n]

    def clear(self):
        self._n = 0
        self._counts.clear()

    def count(self, key):
        return self._counts.get(key, 0)

    def add(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        if self._n == len(self._data):
            self._data = np.concatenate([self._data, np.empty_like(self._data)])
        self._data[self._n] = obs
        self._n += 1
        key = quantize(obs, self.quantization)
        self._counts[key] = self._counts.get(key, 0) + 1


def count_reward(buffer, obs):
    """1 / (number of earlier visits to the same quantized observation + 1)."""
    return 1.0 / (buffer.count(quantize(obs, buffer.quantization)) + 1)


def kth_distance(points, obs, k):
    """Euclidean distance from ``obs`` to its k-th nearest row of ``points``.

    Squared differences are accumulated one coordinate at a time so results
    are reproducible bit for bit regardless of dimension. With fewer than k
    rows the farthest row is used; with none the distance is 0.
    """
    n = len(points)
    if n == 0:
        return 0.0
    diff = points - obs
    d2 = np.zeros(n)
    for j in range(diff.shape[1]):
        d2 += diff[:, j] * diff[:, j]
    d = np.sqrt(d2)
    if n <= k:
        return float(d.max())
    return float(np.partition(d, k - 1)[k - 1])


def knn_reward(buffer, obs, k):
    return math.log(kth_distance(buffer.data, np.asarray(obs, dtype=np.float64), k) + 1.0)


def shape_reward(cfg, bonus, beta=1.0, extrinsic=0.0):
    r = bonus
    if cfg.beta != "none":
        r = beta * r
    if cfg.mixing == "mixed":
        return extrinsic + cfg.psi * r
    return r


def _prior_counts(obs, level):
    """For each row, how many earlier rows share its quantized cell."""
    x = np.clip(np.asarray(obs, dtype=np.float64), 0.0, 1.0)
    cells = np.minimum(np.floor(x * (level + 1)), level).astype(np.int64)
    _, key = np.unique(cells, axis=0, return_inverse=True)
    key = key.reshape(-1)
    order = np.argsort(key, kind="stable")
    sk = key[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sk)) + 1]
    group_start = np.repeat(starts, np.diff(np.r_[starts, len(sk)]))
    out = np.empty(len(key), dtype=np.int64)
    out[order] = np.arange(len(key)) - group_start
    return out


def episode_bonuses(cfg, next_obs):
    """Raw per-agent bonuses for one episode.

    ``next_obs`` has shape (T, N, d): the observation each agent received
    after acting at step t. Each agent has its own buffer, filled in order.
    """
    T, N, d = next_obs.shape
    out = np.zeros((T, N))
    if cfg.estimator == "count_based":
        for i in range(N):
            out[:, i] = 1.0 / (_prior_counts(next_obs[:, i], cfg.quantization) + 1)
        return out
    for i in range(N):
        buf = ObservationBuffer(d, cfg.quantization, capacity=max(T, 1))
        for t in range(T):
            o = next_obs[t, i]
            if cfg.estimator == "count_based":
                out[t, i] = count_reward(buf, o)
            else:
                out[t, i] = knn_reward(buf, o, cfg.k)
            buf.add(o)
    return out


def shape_episode(cfg, next_obs, extrinsic, betas=None, bonus=None):
    """Per-agent shaped reward streams (T, N) for one episode.

    ``extrinsic`` is the joint reward per step (T,); ``betas`` (T, N) are the
    per-observation weights used when ``cfg.beta`` is active.
    """
    if bonus is None:
        bonus = episode_bonuses(cfg, next_obs)
    T, N = bonus.shape
    if cfg.beta != "none":
        if betas is None:
            raise ConfigError("beta weighting requested but the environment provides no beta values")
        bonus = np.asarray(betas) * bonus
    ext = np.broadcast_to(np.asarray(extrinsic, dtype=np.float64)[:, None], (T, N))
    if cfg.mixing == "mixed":
        return ext + cfg.psi * bonus
    return bonus.copy()
