"""Training loop: collect, shape, update multipliers, estimate advantages, update.

One ``Trainer`` owns one seed of one run config. Every learner consumes its
own random stream, so switching a component off (multipliers pinned at 0, OEM
bonus scaled by 0) leaves every other stream untouched.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from pathlib import Path

import numpy as np

from ..approximator import Adam, DenseNet, PolicyNet, load_checkpoint, save_checkpoint
from ..constraints import ConstraintSet, accumulate_cost
from ..envs import make_env
from ..errors import E2CError, UsageError
from ..oem import shape_episode
from .adversary import AdversaryLearner
from .advantages import gae_episode, normalize
from .config import get_variant
from .rollout import actor_inputs, collect_rollouts, make_pool
from .update import critic_update, policy_update

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
EPISODES_FILE = "episodes.csv"
CHECKPOINT_DIR = "checkpoints"
EVAL_STREAM = 1_000_003  # iteration index reserved for evaluation rollouts


def reward_critic_inputs(obs, extras):
    """(T+1, N, N*d + e + N): joint observation, global extras and an agent one-hot."""
    T1, N, d = obs.shape
    joint = np.concatenate([obs.reshape(T1, N * d), extras], axis=1)
    joint = np.broadcast_to(joint[:, None, :], (T1, N, joint.shape[1]))
    eye = np.broadcast_to(np.eye(N), (T1, N, N))
    return np.concatenate([joint, eye], axis=2)


def team_critic_inputs(obs, extras):
    T1 = obs.shape[0]
    return np.concatenate([obs.reshape(T1, -1), extras], axis=1)


def local_critic_inputs(obs, extras, agent):
    return np.concatenate([obs[:, agent], extras], axis=1)


def _values(net, xs):
    """Evaluate ``net`` on a list of (T+1, ..., D) inputs in one pass."""
    flat = np.concatenate([x.reshape(-1, x.shape[-1]) for x in xs])
    v = net.forward(flat)[:, 0]
    out, pos = [], 0
    for x in xs:
        n = int(np.prod(x.shape[:-1]))
        out.append(v[pos:pos + n].reshape(x.shape[:-1]))
        pos += n
    return out


def _advantages(net, inputs, streams, episodes, hp):
    vals = _values(net, inputs)
    advs, tgts = [], []
    for v, r, ep in zip(vals, streams, episodes):
        v = v.copy()
        if ep.terminated:
            v[-1] = 0.0
        a, t = gae_episode(r, v, hp.gamma, hp.gae_lambda)
        advs.append(a)
        tgts.append(t)
    return advs, tgts


class Learners:
    """Actor, critics, optimizers and multipliers for one run.

    mappo has no multipliers and no cost critics. A team-scope constraint
    gets one joint-input cost critic; an individual one gets a local-input
    critic per agent.
    """

    def __init__(self, env, variant, hp, specs, seed):
        self.variant = variant
        N, d, e = env.n_agents, env.obs_dim, env.extra_dim
        head = "categorical" if env.action_mode == "discrete" else "gaussian"
        out = env.n_actions if head == "categorical" else env.action_dim
        in_size = d + (N if hp.agent_id else 0)
        self.actor = PolicyNet(in_size, out, hp.actor_hidden, head, hp.gru_hidden,
                               rng=np.random.default_rng([seed, 1]))
        self.critic = DenseNet([N * d + e + N, *hp.critic_hidden, 1], rng=np.random.default_rng([seed, 2]))
        self.actor_opt = Adam(self.actor.n_params, hp.actor_lr)
        self.critic_opt = Adam(self.critic.n_params, hp.critic_lr)
        self.specs = list(specs) if variant.constrained else []
        self.constraints = ConstraintSet(self.specs, N, hp.lagrangian_lr, hp.lagrangian_init) if self.specs else None
        self.cost_critics, self.cost_opts = {}, {}
        for j, spec in enumerate(self.specs):
            if spec.scope == "team":
                sizes = [[N * d + e, *hp.critic_hidden, 1]]
            else:
                sizes = [[d + e, *hp.critic_hidden, 1]] * N
            nets = [DenseNet(s, rng=np.random.default_rng([seed, 3, j, i])) for i, s in enumerate(sizes)]
            self.cost_critics[spec.name] = nets
            self.cost_opts[spec.name] = [Adam(n.n_params, hp.critic_lr) for n in nets]
        self.adversary = AdversaryLearner(env, hp, seed) if hasattr(env, "adversary_observation") else None
        self.rngs = {
            "actor": np.random.default_rng([seed, 101]),
            "critic": np.random.default_rng([seed, 102]),
        }
        for j, spec in enumerate(self.specs):
            for i in range(len(self.cost_critics[spec.name])):
                self.rngs[f"cost_{spec.name}_{i}"] = np.random.default_rng([seed, 103, j, i])

    def _modules(self):
        mods = {"actor": (self.actor, self.actor_opt), "critic": (self.critic, self.critic_opt)}
        for name, nets in self.cost_critics.items():
            for i, (n, o) in enumerate(zip(nets, self.cost_opts[name])):
                mods[f"cost_{name}_{i}"] = (n, o)
        if self.adversary is not None:
            mods["adv_actor"] = (self.adversary.actor, self.adversary.actor_opt)
            mods["adv_critic"] = (self.adversary.critic, self.adversary.critic_opt)
        return mods

    def _rngs(self):
        rngs = dict(self.rngs)
        if self.adversary is not None:
            rngs["adv_actor"] = self.adversary.actor_rng
            rngs["adv_critic"] = self.adversary.critic_rng
        return rngs

    def state(self):
        arrays, meta = {}, {"adam_t": {}, "rng": {}, "multipliers": {}}
        for key, (net, opt) in self._modules().items():
            arrays[f"{key}/params"] = net.params
            arrays[f"{key}/adam_m"] = opt.m
            arrays[f"{key}/adam_v"] = opt.v
            meta["adam_t"][key] = opt.t
        for key, rng in self._rngs().items():
            meta["rng"][key] = rng.bit_generator.state
        if self.constraints is not None:
            for name, slots in self.constraints.multipliers.items():
                meta["multipliers"][name] = [[m.value, m.last_cost] for m in slots]
        return arrays, meta

    def load_state(self, arrays, meta):
        for key, (net, opt) in self._modules().items():
            net.params[:] = arrays[f"{key}/params"]
            opt.m[:] = arrays[f"{key}/adam_m"]
            opt.v[:] = arrays[f"{key}/adam_v"]
            opt.t = int(meta["adam_t"][key])
        for key, rng in self._rngs().items():
            rng.bit_generator.state = meta["rng"][key]
        if self.constraints is not None:
            for name, slots in self.constraints.multipliers.items():
                for m, (value, last) in zip(slots, meta["multipliers"][name]):
                    m.value, m.last_cost = value, last


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


class Trainer:
    """Runs the iterations of one (config, seed) pair and writes its logs.

    ``record_wall_time`` fills the ``wall_time_s`` column; it is off by
    default so that reruns produce byte-identical CSVs (elapsed time goes to
    the manifest instead).
    """

    def __init__(self, cfg, seed=None, out_dir=None, record_wall_time=False, pool=None):
        self.cfg = cfg
        self.seed = cfg.seeds[0] if seed is None else int(seed)
        self.hp = cfg.hp
        self.variant = get_variant(cfg.variant)
        self.env = make_env(cfg.env_kind, cfg.env_params)
        self.learners = Learners(self.env, self.variant, self.hp, cfg.constraint_specs(), self.seed)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.record_wall_time = record_wall_time
        self.pool = pool
        self.iteration = 0
        self.history = []
        self.ent_coef = self.hp.entropy_coef if self.variant.policy_entropy else 0.0
        if self.variant.oem and cfg.oem.beta != "none" and cfg.env_kind != "rover":
            raise E2CError("beta weighting needs POI values, which only the rover world provides")

    @property
    def columns(self):
        cols = ["iteration", "episodes", "mean_reward"]
        cols += [f"mean_cost_{ch}" for ch in self.env.channels]
        if self.learners.constraints is not None:
            cols += self.learners.constraints.column_names()
        cols += ["policy_loss", "value_loss"]
        cols += [f"cost_value_loss_{s.name}" for s in self.learners.specs]
        cols += ["wall_time_s"]
        return cols

    def episode_columns(self):
        return ["iteration", "episode", "reward"] + [f"cost_{ch}" for ch in self.env.channels]

    # -- one iteration -------------------------------------------------
    def shaped_rewards(self, episodes):
        """Per-agent (T, N) reward streams; OEM bonuses only enter the reward stream."""
        out = []
        for ep in episodes:
            if self.variant.oem:
                out.append(shape_episode(self.cfg.oem, ep.obs[1:], ep.reward, ep.betas))
            else:
                out.append(np.repeat(ep.reward[:, None], self.env.n_agents, axis=1))
        return out

    def update_multipliers(self, episodes):
        cs = self.learners.constraints
        if cs is None:
            return
        for spec in self.learners.specs:
            if spec.scope == "team":
                J = np.mean([accumulate_cost(ep.team_costs[spec.channel], self.hp.gamma, spec.discounting)
                             for ep in episodes])
            else:
                J = np.mean([accumulate_cost(ep.costs[spec.channel], self.hp.gamma, spec.discounting)
                             for ep in episodes], axis=0)
            cs.update(spec.name, J)

    def step(self):
        """Run one iteration and return its metrics row."""
        t0 = time.perf_counter()
        k, hp, L = self.iteration, self.hp, self.learners
        N = self.env.n_agents
        adversary = L.adversary.actor if L.adversary is not None else None
        batch = collect_rollouts(self.cfg.env_kind, self.cfg.env_params, L.actor, hp, self.seed, k,
                                 adversary=adversary, pool=self.pool, horizon=self.env.horizon)
        eps = batch.episodes
        rewards = self.shaped_rewards(eps)
        self.update_multipliers(eps)

        r_adv, r_tgt = _advantages(L.critic, [reward_critic_inputs(ep.obs, ep.extras) for ep in eps],
                                   rewards, eps, hp)
        penalty = [np.zeros((ep.length, N)) for ep in eps]
        lam_sum = [np.zeros((ep.length, N)) for ep in eps]
        cost_data = {}
        for spec in L.specs:
            lam = L.constraints.lambdas(spec.name)
            nets = L.cost_critics[spec.name]
            if spec.scope == "team":
                xs = [team_critic_inputs(ep.obs, ep.extras) for ep in eps]
                streams = [ep.team_costs[spec.channel] for ep in eps]
                a, t = _advantages(nets[0], xs, streams, eps, hp)
                cost_data[spec.name] = [(xs, t)]
                for p, s, ai in zip(penalty, lam_sum, a):
                    p += lam[0] * ai[:, None]
                    s += lam[0]
            else:
                cost_data[spec.name] = []
                per_agent = []
                for i in range(N):
                    xs = [local_critic_inputs(ep.obs, ep.extras, i) for ep in eps]
                    streams = [ep.costs[spec.channel][:, i] for ep in eps]
                    a, t = _advantages(nets[i], xs, streams, eps, hp)
                    cost_data[spec.name].append((xs, t))
                    per_agent.append(a)
                for e, (p, s) in enumerate(zip(penalty, lam_sum)):
                    p += lam[None, :] * np.stack([per_agent[i][e] for i in range(N)], axis=1)
                    s += lam[None, :]

        stats = policy_update(L.actor, L.actor_opt, self._actor_data(eps, r_adv, penalty, lam_sum), hp,
                              L.rngs["actor"], self.ent_coef)
        value_loss = critic_update(
            L.critic, L.critic_opt,
            np.concatenate([reward_critic_inputs(ep.obs, ep.extras)[:-1].reshape(-1, L.critic.sizes[0])
                            for ep in eps]),
            np.concatenate([t.reshape(-1) for t in r_tgt]), hp, L.rngs["critic"])
        cost_losses = {}
        for spec in L.specs:
            losses = []
            for i, (xs, tg) in enumerate(cost_data[spec.name]):
                X = np.concatenate([x[:-1] for x in xs])
                losses.append(critic_update(L.cost_critics[spec.name][i], L.cost_opts[spec.name][i], X,
                                            np.concatenate(tg), hp, L.rngs[f"cost_{spec.name}_{i}"]))
            cost_losses[spec.name] = float(np.mean(losses))
        if L.adversary is not None:
            L.adversary.update(eps)

        row = {"iteration": k, "episodes": len(eps),
               "mean_reward": float(np.mean([ep.reward.sum() for ep in eps]))}
        for ch in self.env.channels:
            row[f"mean_cost_{ch}"] = float(np.mean([ep.team_costs[ch].sum() for ep in eps]))
        if L.constraints is not None:
            row.update(zip(L.constraints.column_names(), L.constraints.flat_lambdas()))
        row["policy_loss"] = stats["policy_loss"]
        row["value_loss"] = value_loss
        for name, v in cost_losses.items():
            row[f"cost_value_loss_{name}"] = v
        row["wall_time_s"] = time.perf_counter() - t0
        self._episodes = [(k, e, ep.reward.sum(), *[ep.team_costs[ch].sum() for ch in self.env.channels])
                          for e, ep in enumerate(eps)]
        self.iteration += 1
        self.history.append(row)
        return row

    def _actor_data(self, eps, r_adv, penalty, lam_sum):
        adv_all = normalize(np.concatenate([a.reshape(-1) for a in r_adv]))
        sizes = [a.size for a in r_adv]
        adv = np.split(adv_all, np.cumsum(sizes)[:-1])
        adv = [a.reshape(r.shape) for a, r in zip(adv, r_adv)]
        agent_id = self.hp.agent_id
        fields = {
            "X": [actor_inputs(ep.obs[:-1], agent_id) for ep in eps],
            "actions": [ep.actions for ep in eps],
            "old_logp": [ep.logp for ep in eps],
            "adv": adv,
            "penalty": penalty,
        }
        if self.hp.penalty_normalization:
            fields["weights"] = [1.0 / (1.0 + s) for s in lam_sum]
        if self.learners.actor.recurrent:
            if len({ep.length for ep in eps}) != 1:
                raise UsageError("recurrent actors need equal-length episodes in a batch")
            # (T, E*N, ...): each (episode, agent) sequence is one unit
            return {k: np.concatenate(v, axis=1) for k, v in fields.items()}
        return {k: np.concatenate([x.reshape((-1,) + x.shape[2:]) for x in v]) for k, v in fields.items()}

    # -- persistence ---------------------------------------------------
    def checkpoint(self, path):
        arrays, meta = self.learners.state()
        meta.update(iteration=self.iteration, seed=self.seed, variant=self.cfg.variant,
                    config_hash=self.cfg.config_hash, env_kind=self.cfg.env_kind)
        save_checkpoint(path, arrays, meta)

    def restore(self, path, check_hash=True):
        arrays, meta = load_checkpoint(path)
        if check_hash and meta.get("config_hash") != self.cfg.config_hash:
            raise E2CError(f"{path}: checkpoint was written by a different config")
        self.learners.load_state(arrays, meta)
        self.iteration = int(meta["iteration"])
        return meta

    def _open_logs(self, resume_from):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        mpath, epath = self.out_dir / METRICS_FILE, self.out_dir / EPISODES_FILE
        if resume_from:
            # keep only rows written before the checkpoint
            for path, key in ((mpath, "iteration"), (epath, "iteration")):
                rows = list(csv.reader(path.open())) if path.exists() else []
                kept = [r for r in rows[1:] if int(r[0]) < self.iteration]
                with path.open("w", newline="") as f:
                    w = csv.writer(f, lineterminator="\n")
                    w.writerow(self.columns if path == mpath else self.episode_columns())
                    w.writerows(kept)
            mode = "a"
        else:
            mode = "w"
        self._mf = mpath.open(mode, newline="")
        self._ef = epath.open(mode, newline="")
        self._mw = csv.writer(self._mf, lineterminator="\n")
        self._ew = csv.writer(self._ef, lineterminator="\n")
        if not resume_from:
            self._mw.writerow(self.columns)
            self._ew.writerow(self.episode_columns())

    def _write_row(self, row):
        vals = []
        for c in self.columns:
            if c == "wall_time_s" and not self.record_wall_time:
                vals.append("")
            else:
                vals.append(_fmt(row[c]))
        self._mw.writerow(vals)
        self._ew.writerows([[_fmt(x) for x in r] for r in self._episodes])
        self._mf.flush()
        self._ef.flush()

    def run(self, iterations=None, resume=False):
        """Train to ``iterations`` total iterations, logging and checkpointing.

        With ``resume`` the newest checkpoint in the output directory is
        restored first and logs after it are discarded, so a resumed run
        writes the same bytes as an uninterrupted one.
        """
        total = self.cfg.iterations if iterations is None else int(iterations)
        ckpt_dir = self.out_dir / CHECKPOINT_DIR if self.out_dir is not None else None
        resumed = False
        manifest = self.out_dir / "manifest.json" if self.out_dir is not None else None
        if resume and manifest is not None and manifest.exists():
            old = json.loads(manifest.read_text()).get("config_hash")
            if old != self.cfg.config_hash:
                raise E2CError(f"{manifest}: written by a different config; refusing to resume over it")
        if resume and ckpt_dir is not None and ckpt_dir.exists():
            ckpts = sorted(ckpt_dir.glob("iter_*.ckpt"))
            if ckpts:
                self.restore(ckpts[-1])
                resumed = True
        if self.out_dir is not None:
            self._open_logs(resumed)
        start = time.perf_counter()
        every = self.cfg.checkpoint_every
        try:
            while self.iteration < total:
                row = self.step()
                if self.out_dir is not None:
                    self._write_row(row)
                    if (every and self.iteration % every == 0) or self.iteration == total:
                        ckpt_dir.mkdir(exist_ok=True)
                        self.checkpoint(ckpt_dir / f"iter_{self.iteration:06d}.ckpt")
        except Exception:
            log.exception("run %s seed %d failed at iteration %d", self.cfg.name, self.seed, self.iteration)
            raise
        finally:
            if self.out_dir is not None:
                self._mf.close()
                self._ef.close()
        elapsed = time.perf_counter() - start
        if self.out_dir is not None:
            self.write_manifest(elapsed)
        return self.history

    def write_manifest(self, elapsed):
        from .. import __version__

        ckpts = sorted(p.name for p in (self.out_dir / CHECKPOINT_DIR).glob("iter_*.ckpt"))
        manifest = {
            "name": self.cfg.name, "variant": self.cfg.variant, "seed": self.seed,
            "config_hash": self.cfg.config_hash, "code_version": __version__,
            "iterations": self.iteration, "wall_time_s": elapsed,
            "metrics": METRICS_FILE, "episodes": EPISODES_FILE,
            "checkpoints": [f"{CHECKPOINT_DIR}/{c}" for c in ckpts], "complete": True,
        }
        (self.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def train(cfg, seed=None, out_dir=None, iterations=None, resume=False, record_wall_time=False):
    """Train one seed of ``cfg``; returns the per-iteration metrics rows."""
    pool = make_pool(cfg.hp.workers)
    try:
        trainer = Trainer(cfg, seed, out_dir, record_wall_time, pool)
        return trainer.run(iterations, resume)
    finally:
        if pool is not None:
            pool.shutdown()


def evaluate(cfg, checkpoint, episodes=20, seed=0, mode="greedy"):
    """Mean episodic reward and per-channel cost of a checkpointed policy."""
    path = Path(checkpoint)
    if not path.exists():
        raise UsageError(f"checkpoint {path} not found")
    trainer = Trainer(cfg, seed)
    trainer.restore(path, check_hash=False)
    eval_hp = dataclasses.replace(cfg.hp, batch_size=episodes * trainer.env.horizon, num_envs=1)
    L = trainer.learners
    adversary = L.adversary.actor if L.adversary is not None else None
    batch = collect_rollouts(cfg.env_kind, cfg.env_params, L.actor, eval_hp, seed, EVAL_STREAM,
                             adversary=adversary, mode=mode, horizon=trainer.env.horizon)
    eps = batch.episodes[:episodes]
    out = {"episodes": len(eps), "mean_reward": float(np.mean([ep.reward.sum() for ep in eps]))}
    for ch in trainer.env.channels:
        out[f"mean_cost_{ch}"] = float(np.mean([ep.team_costs[ch].sum() for ep in eps]))
    return out
