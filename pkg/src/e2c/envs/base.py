from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError


@dataclass
class StepResult:
    obs: np.ndarray  # (N, obs_dim)
    reward: float  # joint team reward
    costs: dict  # channel -> (N,) per-agent event counts
    team_costs: dict  # channel -> joint event count
    done: bool
    truncated: bool = False
    info: dict = field(default_factory=dict)


def pair_events(pos, radii, mask=None):
    """Upper-triangular boolean matrix of overlapping pairs (distance < sum of radii)."""
    d = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
    hit = d < (radii[:, None] + radii[None, :])
    hit = np.triu(hit, 1)
    if mask is not None:
        hit &= mask
    return hit


class TrajectoryRecorder:
    """Collects per-step records and writes them as JSON lines."""

    def __init__(self):
        self.records = []

    def add(self, **rec):
        self.records.append({k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in rec.items()})

    def dump(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")


def read_trajectory(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def check_actions(actions, n, mode, dim):
    a = np.asarray(actions)
    if mode == "discrete":
        if a.shape != (n,):
            raise UsageError(f"expected {n} discrete actions, got shape {a.shape}")
        return a.astype(np.int64)
    if a.shape != (n, dim):
        raise UsageError(f"expected actions of shape {(n, dim)}, got {a.shape}")
    return np.clip(a.astype(np.float64), -1.0, 1.0)
