"""Run configuration files.

A run config is one YAML document::

    name: rover-e2c-team
    variant: e2c-team          # mappo | c-mappo | c-mappo-pe | e2c | e2c-team
    seeds: [0, 1, 2]
    iterations: 100
    output_dir: runs/rover     # relative paths resolve against $E2C_OUTPUT_ROOT if set
    checkpoint_every: 50       # 0 = final checkpoint only
    env:
      kind: rover              # rover | particle
      params: {n_rovers: 4, coupling: 2}
    constraints:               # ignored by mappo
      - {name: collision, threshold: 20, channel: collision, discounting: episodic}
    oem: {estimator: count_based, beta: poi_values, mixing: mixed, psi: 0.3}
    hyperparameters: {batch_size: 4096, gamma: 0.9}

Unknown keys anywhere are rejected with the offending line number.
"""
from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..constraints import ConstraintSpec
from ..envs.particle import ParticleConfig
from ..envs.rover import RoverConfig
from ..errors import ConfigError
from ..oem import OEMConfig
from ..trainer.config import HyperParams, get_variant

OUTPUT_ROOT_ENV = "E2C_OUTPUT_ROOT"
TOP_KEYS = {"name", "variant", "seeds", "iterations", "output_dir", "checkpoint_every", "env",
            "constraints", "oem", "hyperparameters"}
ENV_PARAMS = {"rover": RoverConfig, "particle": ParticleConfig}


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


@dataclass
class RunConfig:
    name: str = "run"
    variant: str = "e2c-team"
    env_kind: str = "rover"
    env_params: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    oem: OEMConfig = field(default_factory=OEMConfig)
    hp: HyperParams = field(default_factory=HyperParams)
    seeds: list = field(default_factory=lambda: [0])
    iterations: int = 10
    output_dir: str = "runs"
    checkpoint_every: int = 0
    source_text: str = ""

    def __post_init__(self):
        get_variant(self.variant)
        if self.env_kind not in ENV_PARAMS:
            raise ConfigError(f"unknown env kind {self.env_kind!r}")
        if self.iterations < 1 or not self.seeds:
            raise ConfigError("need iterations >= 1 and at least one seed")

    @property
    def config_hash(self):
        return hashlib.sha256(self.source_text.encode()).hexdigest()

    def constraint_specs(self):
        """Constraint specs with scope forced by the variant (empty for mappo)."""
        v = get_variant(self.variant)
        if not v.constrained:
            return []
        return [dataclasses.replace(c, scope=v.scope) for c in self.constraints]

    def resolved_output_dir(self, override=None):
        out = Path(override or self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute() and override is None:
            out = Path(root) / out
        return out

    def with_changes(self, **kw):
        return dataclasses.replace(self, **kw)


def _err(node, msg, source):
    line = node.start_mark.line + 1 if node is not None else "?"
    return ConfigError(f"{source}:{line}: {msg}")


def _mapping(node, source, what):
    if not isinstance(node, yaml.MappingNode):
        raise _err(node, f"{what} must be a mapping", source)
    return {k.value: (k, v) for k, v in node.value}


def _check_keys(node, allowed, source, what):
    items = _mapping(node, source, what)
    for key, (knode, _) in items.items():
        if key not in allowed:
            raise _err(knode, f"unknown key {key!r} in {what}; allowed: {sorted(allowed)}", source)
    return items


def _build(cls, data, node, source, what):
    try:
        return cls(**(data or {}))
    except (ConfigError, TypeError, ValueError) as exc:
        raise _err(node, f"invalid {what}: {exc}", source) from None


def parse_config(text, source="<config>"):
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else "?"
        raise ConfigError(f"{source}:{line}: YAML syntax error: {exc}") from None
    if root is None:
        raise ConfigError(f"{source}:1: empty config")
    items = _check_keys(root, TOP_KEYS, source, "run config")
    for req in ("variant", "env"):
        if req not in items:
            raise _err(root, f"missing required key {req!r}", source)

    env_node = items["env"][1]
    env_items = _check_keys(env_node, {"kind", "params"}, source, "env block")
    kind = data["env"].get("kind", "rover")
    if kind not in ENV_PARAMS:
        raise _err(env_items.get("kind", (env_node, env_node))[1], f"unknown env kind {kind!r}", source)
    params = data["env"].get("params") or {}
    if "params" in env_items:
        _check_keys(env_items["params"][1], _fields(ENV_PARAMS[kind]), source, f"{kind} env params")
        _build(ENV_PARAMS[kind], params, env_items["params"][1], source, f"{kind} env params")

    constraints = []
    if "constraints" in items:
        cnode = items["constraints"][1]
        if not isinstance(cnode, yaml.SequenceNode):
            raise _err(cnode, "constraints must be a list", source)
        for sub, entry in zip(cnode.value, data["constraints"]):
            _check_keys(sub, _fields(ConstraintSpec), source, "constraint")
            constraints.append(_build(ConstraintSpec, entry, sub, source, "constraint"))

    oem = OEMConfig()
    if "oem" in items:
        _check_keys(items["oem"][1], _fields(OEMConfig), source, "oem block")
        oem = _build(OEMConfig, data["oem"], items["oem"][1], source, "oem block")
    hp = HyperParams()
    if "hyperparameters" in items:
        _check_keys(items["hyperparameters"][1], _fields(HyperParams), source, "hyperparameters block")
        hp = _build(HyperParams, data["hyperparameters"], items["hyperparameters"][1], source,
                    "hyperparameters block")

    top = {k: data[k] for k in ("name", "variant", "iterations", "output_dir", "checkpoint_every") if k in data}
    if "seeds" in data:
        seeds = data["seeds"]
        top["seeds"] = [seeds] if isinstance(seeds, int) else list(seeds)
        if not all(isinstance(s, int) for s in top["seeds"]):
            raise _err(items["seeds"][1], "seeds must be integers", source)
    try:
        return RunConfig(env_kind=kind, env_params=dict(params), constraints=constraints, oem=oem, hp=hp,
                         source_text=text, **top)
    except (ConfigError, TypeError, ValueError) as exc:
        node = items.get("variant", (root, root))[1]
        raise _err(node, str(exc), source) from None


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(), str(path))
