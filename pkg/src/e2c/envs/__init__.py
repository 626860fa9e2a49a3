from .base import StepResult, read_trajectory
from .particle import ParticleConfig, ParticleWorld, adversary_policy_step
from .rover import RoverConfig, RoverWorld, replay_terminal_reward


def make_env(kind, params=None, seed=None):
    """Build an environment from its config-block name and keyword parameters."""
    params = dict(params or {})
    if kind == "rover":
        return RoverWorld(RoverConfig(**params), seed)
    if kind == "particle":
        return ParticleWorld(ParticleConfig(**params), seed)
    from ..errors import ConfigError
    raise ConfigError(f"unknown environment kind {kind!r}; expected 'rover' or 'particle'")
