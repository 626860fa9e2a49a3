from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigError


@dataclass(frozen=True)
class Variant:
    constrained: bool
    scope: str | None
    oem: bool
    policy_entropy: bool


VARIANTS = {
    "mappo": Variant(False, None, False, False),
    "c-mappo": Variant(True, "individual", False, False),
    "c-mappo-pe": Variant(True, "individual", False, True),
    "e2c": Variant(True, "individual", True, False),
    "e2c-team": Variant(True, "team", True, False),
}


def get_variant(name):
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}") from None


@dataclass
class HyperParams:
    clip: float = 0.2
    gamma: float = 0.9
    gae_lambda: float = 0.95
    entropy_coef: float = 1e-3  # only used by the policy-entropy baseline
    adversary_entropy_coef: float = 1e-3
    batch_size: int = 4096
    epochs: int = 4
    minibatches: int = 4
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    lagrangian_lr: float = 0.05
    lagrangian_init: float = 1.0
    actor_hidden: list = field(default_factory=lambda: [128, 128])
    critic_hidden: list = field(default_factory=lambda: [128, 128])
    gru_hidden: int = 0
    max_grad_norm: float = 10.0
    num_envs: int = 1
    workers: int = 1
    agent_id: bool = True
    penalty_normalization: bool = False

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ConfigError("clip must lie in (0, 1)")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        for name in ("batch_size", "epochs", "minibatches", "num_envs", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.lagrangian_lr < 0 or self.lagrangian_init < 0:
            raise ConfigError("lagrangian_lr and lagrangian_init must be non-negative")
