"""Clipped Lagrangian policy updates and critic regression."""
from __future__ import annotations

import logging

import numpy as np

from ..approximator import clip_grad_norm, entropy, entropy_grads, log_prob, log_prob_grads
from ..errors import NumericError

log = logging.getLogger(__name__)


def actor_objective(actor, X, actions, old_logp, adv, penalty, clip, ent_coef=0.0, weights=None):
    """Loss (negated objective) and its parameter gradient for one minibatch.

    Per sample the objective is
    min(q A, clip(q, 1-eps, 1+eps) A) - q * penalty + ent_coef * H,
    with q = exp(logp - old_logp) and ``penalty`` = sum_j lambda_j A_cj.
    ``weights`` optionally rescales each sample's objective.
    """
    out = actor.forward(X)
    head, log_std = actor.head, actor.log_std
    logp = log_prob(head, out, actions, log_std)
    ratio = np.exp(logp - old_logp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    unclipped = surr1 <= surr2
    obj = np.where(unclipped, surr1, surr2) - ratio * penalty
    d_obj = np.where(unclipped, ratio * adv, 0.0) - ratio * penalty
    ent = None
    if ent_coef:
        ent = entropy(head, out, log_std)
        obj = obj + ent_coef * ent
    w = np.ones_like(obj) if weights is None else weights
    n = obj.size
    loss = -float((w * obj).sum() / n)
    dlogp = -(w * d_obj) / n
    g_out, g_ls = log_prob_grads(head, out, actions, log_std)
    g_out = g_out * dlogp[..., None]
    if g_ls is not None:
        g_ls = g_ls * dlogp[..., None]
    if ent_coef:
        ge, gels = entropy_grads(head, out, log_std)
        g_out = g_out - (ent_coef * w / n)[..., None] * ge
        if gels is not None:
            g_ls = g_ls - (ent_coef * w / n)[..., None] * gels
    if g_ls is not None:
        g_ls = g_ls.reshape(-1, g_ls.shape[-1]).sum(axis=0)
    grad = actor.backward(g_out, g_ls)
    stats = {
        "clip_frac": float(np.mean(~unclipped)),
        "approx_kl": float(np.mean(old_logp - logp)),
        "entropy": float(np.mean(ent)) if ent is not None else float("nan"),
    }
    return loss, grad, stats


def _minibatches(rng, n_units, n_mb):
    perm = rng.permutation(n_units)
    return [perm[k::n_mb] for k in range(n_mb)] if n_mb > 1 else [perm]


def policy_update(actor, opt, data, hp, rng, ent_coef=0.0):
    """Run ``hp.epochs`` x ``hp.minibatches`` clipped updates.

    ``data`` holds arrays ``X, actions, old_logp, adv, penalty`` (and optional
    ``weights``) whose first axis indexes independent units: samples for
    feed-forward actors, or (T, units, ...) sequences for recurrent ones.
    """
    seq = actor.recurrent
    n_units = data["adv"].shape[1] if seq else data["adv"].shape[0]
    losses, skipped = [], 0
    for _ in range(hp.epochs):
        for idx in _minibatches(rng, n_units, min(hp.minibatches, n_units)):
            mb = {k: (v[:, idx] if seq else v[idx]) for k, v in data.items() if v is not None}
            loss, grad, _ = actor_objective(actor, mb["X"], mb["actions"], mb["old_logp"], mb["adv"],
                                            mb["penalty"], hp.clip, ent_coef, mb.get("weights"))
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                skipped += 1
                log.warning("non-finite policy loss; minibatch update skipped")
                continue
            opt.step(actor.params, clip_grad_norm(grad, hp.max_grad_norm))
            losses.append(loss)
    return {"policy_loss": float(np.mean(losses)) if losses else float("nan"), "skipped": skipped}


def regression_loss(net, X, targets):
    v = net.forward(X)[:, 0]
    err = v - targets
    loss = float(np.mean(err * err))
    grad = net.backward((2.0 * err / err.size)[:, None])
    return loss, grad


def critic_update(net, opt, X, targets, hp, rng):
    """Mean-squared-error regression of ``net(X)`` onto ``targets``."""
    losses = []
    for _ in range(hp.epochs):
        for idx in _minibatches(rng, len(targets), min(hp.minibatches, len(targets))):
            loss, grad = regression_loss(net, X[idx], targets[idx])
            try:
                if not np.isfinite(loss):
                    raise NumericError("non-finite critic loss")
                opt.step(net.params, clip_grad_norm(grad, hp.max_grad_norm))
            except NumericError:
                log.warning("non-finite critic loss; minibatch update skipped")
                continue
            losses.append(loss)
    return float(np.mean(losses)) if losses else float("nan")
