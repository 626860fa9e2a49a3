import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from e2c.approximator import DenseNet, PolicyNet, log_prob
from e2c.constraints import ConstraintSpec
from e2c.envs import make_env
from e2c.errors import ConfigError, UsageError
from e2c.harness.config import RunConfig
from e2c.oem import OEMConfig
from e2c.trainer import HyperParams, Trainer, evaluate, train
from e2c.trainer.advantages import gae, gae_episode
from e2c.trainer.rollout import collect_rollouts, episodes_per_env, make_pool
from e2c.trainer.update import actor_objective, critic_update, regression_loss

SMALL = dict(batch_size=96, epochs=2, minibatches=2, actor_hidden=[16], critic_hidden=[16])


def small_config(variant="e2c-team", env_kind="rover", oem=None, text=None, **hp):
    params = {"horizon": 12, "n_rovers": 3, "n_pois": 3} if env_kind == "rover" else {"horizon": 12}
    return RunConfig(
        name="t", variant=variant, env_kind=env_kind, env_params=params,
        constraints=[ConstraintSpec("collision", threshold=2.0)],
        oem=oem or OEMConfig(beta="poi_values" if env_kind == "rover" else "none", mixing="mixed"),
        hp=HyperParams(**{**SMALL, **hp}), iterations=3, source_text=text or variant,
    )


# -- advantages -----------------------------------------------------------

def test_gae_one_step_terminal():
    adv, tgt = gae_episode([1.0], [0.0, 0.0], 0.9, 0.95)
    assert adv[0] == 1.0 and tgt[0] == 1.0


def test_gae_td0_reduction():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=7), rng.normal(size=8)
    adv, _ = gae_episode(r, v, 0.9, 0.0)
    assert np.array_equal(adv, r + 0.9 * v[1:] - v[:-1])


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_gae_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    T, g, lam = 10, 0.9, 0.95
    r, v = rng.normal(size=T), rng.normal(size=T + 1)
    delta = [r[t] + g * v[t + 1] - v[t] for t in range(T)]
    oracle = [sum((g * lam) ** k * delta[t + k] for k in range(T - t)) for t in range(T)]
    adv, tgt = gae_episode(r, v, g, lam)
    assert np.max(np.abs(adv - oracle)) < 1e-10
    assert np.max(np.abs(tgt - (np.array(oracle) + v[:-1]))) < 1e-10


def test_gae_stream_bounds():
    r, v = np.ones(5), np.zeros(5)
    adv, _ = gae(v, r, 0.9, 1.0, [(0, 2), (2, 5)], [0.0, 0.0])
    assert np.allclose(adv, [1.9, 1.0, 2.71, 1.9, 1.0])
    with pytest.raises(UsageError):
        gae(v, r, 0.9, 1.0, [(0, 2), (3, 5)], [0.0, 0.0])
    with pytest.raises(UsageError):
        gae(v, r, 0.9, 1.0, [(0, 5)], [0.0, 0.0])
    with pytest.raises(UsageError):
        gae_episode(r, v, 0.9, 1.0)


# -- policy objective -------------------------------------------------------

def _actor_batch(seed=0, n=12, head="categorical"):
    rng = np.random.default_rng(seed)
    net = PolicyNet(5, 4 if head == "categorical" else 2, (8,), head, rng=rng, out_gain=1.0)
    X = rng.normal(size=(n, 5))
    a = rng.integers(0, 4, size=n) if head == "categorical" else rng.normal(size=(n, 2))
    return net, X, a, rng


def test_clip_arithmetic():
    net, X, a, _ = _actor_batch()
    logp = log_prob(net.head, net.forward(X), a, net.log_std)
    adv = np.full(len(X), 2.0)
    loss, _, stats = actor_objective(net, X, a, logp - np.log(1.3), adv, np.zeros(len(X)), 0.2)
    assert abs(loss + 1.2 * 2.0) < 1e-12
    assert stats["clip_frac"] == 1.0


@pytest.mark.parametrize("head", ["categorical", "gaussian"])
def test_ratio_one_is_vanilla_policy_gradient(head):
    net, X, a, rng = _actor_batch(1, head=head)
    adv, pen = rng.normal(size=len(X)), rng.normal(size=len(X))
    logp = log_prob(net.head, net.forward(X), a, net.log_std)
    _, grad, stats = actor_objective(net, X, a, logp, adv, pen, 0.2)
    assert stats["clip_frac"] == 0.0
    # finite differences of -mean(logp * (A - penalty))
    p0 = net.params.copy()
    fd = np.zeros_like(p0)
    for i in range(len(p0)):
        vals = []
        for h in (1e-6, -1e-6):
            net.params[:] = p0
            net.params[i] += h
            lp = log_prob(net.head, net.forward(X), a, net.log_std)
            vals.append(-np.mean(lp * (adv - pen)))
        fd[i] = (vals[0] - vals[1]) / 2e-6
    net.params[:] = p0
    assert np.max(np.abs(fd - grad)) < 1e-7


@given(st.floats(-3, 3), st.floats(-5, 5), st.floats(0.05, 0.5))
def test_surrogate_clip_bound(log_ratio, adv, eps):
    q = np.exp(log_ratio)
    s = min(q * adv, np.clip(q, 1 - eps, 1 + eps) * adv)
    assert s <= (1 + eps) * abs(adv) + 1e-12


def test_zero_penalty_matches_unconstrained_bitwise():
    net, X, a, rng = _actor_batch(2)
    adv = rng.normal(size=len(X))
    old = log_prob(net.head, net.forward(X), a, net.log_std) + rng.normal(0, 0.1, len(X))
    l0, g0, _ = actor_objective(net, X, a, old, adv, np.zeros(len(X)), 0.2)
    l1, g1, _ = actor_objective(net, X, a, old, adv, 0.0 * -np.abs(adv), 0.2)
    assert l0 == l1 and np.array_equal(g0, g1)


# -- critics ----------------------------------------------------------------

def test_critic_zero_loss_at_own_predictions():
    net = DenseNet([3, 8, 1], rng=np.random.default_rng(0))
    X = np.random.default_rng(1).normal(size=(20, 3))
    loss, grad = regression_loss(net, X, net.forward(X)[:, 0].copy())
    assert loss == 0.0 and not grad.any()


@pytest.mark.parametrize("target", [0.0, 3.0])
def test_critic_regresses_to_constant(target):
    from e2c.approximator import Adam

    hp = HyperParams(critic_lr=1e-2, epochs=4, minibatches=1)
    net = DenseNet([3, 16, 1], rng=np.random.default_rng(0), out_gain=0.0)
    opt = Adam(net.n_params, hp.critic_lr)
    X = np.random.default_rng(1).normal(size=(64, 3))
    y = np.full(64, target)
    rng = np.random.default_rng(2)
    errs = []
    for _ in range(300):
        critic_update(net, opt, X, y, hp, rng)
        errs.append(np.mean((net.forward(X)[:, 0] - target) ** 2))
    assert errs[-1] <= errs[0]
    assert np.max(np.abs(net.forward(X)[:, 0] - target)) < 0.05


# -- collection -------------------------------------------------------------

def test_episodes_per_batch():
    assert episodes_per_env(4096, 80, 1) == 52
    assert episodes_per_env(4096, 80, 4) == 13
    env = make_env("rover", {})
    net = PolicyNet(env.obs_dim + env.n_agents, env.n_actions, (8,), rng=np.random.default_rng(0))
    batch = collect_rollouts("rover", {}, net, HyperParams(), 0, 0)
    assert len(batch) == 52 and batch.transitions >= 4096
    assert all(ep.length == 80 and ep.terminated for ep in batch.episodes)


def test_collected_logp_are_policy_densities():
    env = make_env("rover", {"horizon": 10})
    net = PolicyNet(env.obs_dim + env.n_agents, env.n_actions, (8,), rng=np.random.default_rng(0))
    batch = collect_rollouts("rover", {"horizon": 10}, net, HyperParams(batch_size=30), 0, 0)
    from e2c.trainer.rollout import actor_inputs

    for ep in batch.episodes:
        out = net.forward(actor_inputs(ep.obs[:-1]).reshape(-1, net.in_size))
        lp = log_prob(net.head, out, ep.actions.reshape(-1), None).reshape(ep.logp.shape)
        assert np.allclose(lp, ep.logp, atol=1e-12)


def test_collection_independent_of_workers():
    params = {"horizon": 10}
    env = make_env("rover", params)
    net = PolicyNet(env.obs_dim + env.n_agents, env.n_actions, (8,), rng=np.random.default_rng(0))
    hp = HyperParams(batch_size=60, num_envs=3)
    a = collect_rollouts("rover", params, net, hp, 5, 2)
    pool = make_pool(2)
    try:
        b = collect_rollouts("rover", params, net, hp, 5, 2, pool=pool)
    finally:
        pool.shutdown()
    assert len(a) == len(b) == 6
    for x, y in zip(a.episodes, b.episodes):
        assert np.array_equal(x.obs, y.obs) and np.array_equal(x.actions, y.actions)
        assert np.array_equal(x.logp, y.logp)


# -- variant gates -----------------------------------------------------------

def test_mappo_has_no_multipliers_or_cost_critics():
    tr = Trainer(small_config("mappo"))
    assert tr.learners.constraints is None and tr.learners.cost_critics == {}
    assert not any(c.startswith(("lambda", "cost_value")) for c in tr.columns)
    assert "mean_cost_collision" in tr.columns
    row = tr.step()
    assert row["mean_cost_collision"] >= 0


def test_team_scope_has_one_multiplier_and_joint_critic():
    tr = Trainer(small_config("e2c-team"))
    L = tr.learners
    assert len(L.constraints.multipliers["collision"]) == 1
    (net,) = L.cost_critics["collision"]
    assert net.sizes[0] == tr.env.n_agents * tr.env.obs_dim + tr.env.extra_dim


def test_individual_scope_has_per_agent_critics():
    tr = Trainer(small_config("e2c"))
    L = tr.learners
    assert len(L.constraints.multipliers["collision"]) == 3
    nets = L.cost_critics["collision"]
    assert len(nets) == 3 and all(n.sizes[0] == tr.env.obs_dim + tr.env.extra_dim for n in nets)
    assert tr.columns.count("lambda_collision_a0") == 1


def test_actor_reads_local_observation_only():
    tr = Trainer(small_config("e2c-team"))
    assert tr.learners.actor.in_size == tr.env.obs_dim + tr.env.n_agents


def test_entropy_coefficient_only_for_pe_baseline():
    assert Trainer(small_config("c-mappo-pe")).ent_coef == 1e-3
    for v in ("mappo", "c-mappo", "e2c", "e2c-team"):
        assert Trainer(small_config(v)).ent_coef == 0.0


# -- reductions and determinism -----------------------------------------------

def _csv(tmp_path, cfg, name, **kw):
    out = tmp_path / name
    train(cfg, 0, out, **kw)
    return (out / "metrics.csv").read_bytes(), (out / "episodes.csv").read_bytes()


def test_e2c_without_bonus_equals_c_mappo(tmp_path):
    oem = OEMConfig(beta="poi_values", mixing="mixed", psi=0.0)
    a = _csv(tmp_path, small_config("e2c", oem=oem), "e2c")
    b = _csv(tmp_path, small_config("c-mappo"), "cm")
    assert a == b


def test_c_mappo_with_zero_multipliers_equals_mappo():
    pinned = small_config("c-mappo", lagrangian_init=0.0, lagrangian_lr=0.0)
    a, b = Trainer(pinned), Trainer(small_config("mappo"))
    for _ in range(3):
        ra, rb = a.step(), b.step()
        for key in ("mean_reward", "mean_cost_collision", "policy_loss", "value_loss"):
            assert ra[key] == rb[key]
    assert np.array_equal(a.learners.actor.params, b.learners.actor.params)
    assert np.array_equal(a.learners.critic.params, b.learners.critic.params)


def test_rerun_and_workers_are_byte_identical(tmp_path):
    cfg = small_config("e2c-team", num_envs=2)
    first = _csv(tmp_path, cfg, "a")
    assert first == _csv(tmp_path, cfg, "b")
    cfg2 = dataclasses.replace(cfg, hp=dataclasses.replace(cfg.hp, workers=2))
    assert first == _csv(tmp_path, cfg2, "c")


def test_resume_matches_uninterrupted(tmp_path):
    cfg = small_config("e2c", text="resume")
    cfg = dataclasses.replace(cfg, checkpoint_every=1)
    full = _csv(tmp_path, cfg, "full")
    out = tmp_path / "part"
    train(cfg, 0, out, iterations=2)
    train(cfg, 0, out, resume=True)
    assert ((out / "metrics.csv").read_bytes(), (out / "episodes.csv").read_bytes()) == full


def test_multiplier_tracks_batch_cost():
    tr = Trainer(small_config("e2c-team"))
    row = tr.step()
    expected = max(0.0, 1.0 + 0.05 * (row["mean_cost_collision"] - 2.0))
    assert abs(row["lambda_collision"] - expected) < 1e-12


def test_recurrent_and_particle_runs():
    row = Trainer(small_config("e2c-team", gru_hidden=8)).step()
    assert np.isfinite(row["policy_loss"])
    cfg = small_config("c-mappo", env_kind="particle")
    tr = Trainer(cfg)
    assert tr.learners.adversary is not None
    assert np.isfinite(tr.step()["value_loss"])


def test_checkpoint_and_evaluate(tmp_path):
    cfg = small_config("e2c-team")
    train(cfg, 0, tmp_path, iterations=1)
    ckpt = tmp_path / "checkpoints" / "iter_000001.ckpt"
    res = evaluate(cfg, ckpt, episodes=4)
    assert res["episodes"] == 4 and np.isfinite(res["mean_reward"])
    with pytest.raises(UsageError):
        evaluate(cfg, tmp_path / "missing.ckpt")


def test_beta_weighting_needs_rover():
    with pytest.raises(Exception):
        Trainer(small_config("e2c", env_kind="particle", oem=OEMConfig(beta="poi_values")))
    with pytest.raises(ConfigError):
        HyperParams(clip=1.5)


def test_adversary_alone_improves():
    from e2c.trainer.adversary import train_adversary_alone

    hp = HyperParams(batch_size=500, epochs=5, minibatches=2, actor_hidden=[32], critic_hidden=[32],
                     actor_lr=3e-3, critic_lr=3e-3)
    for seed in range(5):
        h = train_adversary_alone({"horizon": 25}, hp, 30, seed)
        assert np.polyfit(np.arange(len(h)), h, 1)[0] > 0, seed
        assert np.mean(h[-5:]) > np.mean(h[:5]), seed
