"""Advantage estimation and the token-masked PPO objective.

gae() computes per-token advantages/value targets from a sparse reward
vector; ppo_loss() is the clipped surrogate over generated tokens with
retrieved tokens masked out of both the sum and the normalizer; value_loss()
regresses the value table against frozen targets; kl_penalty() is the
per-token log-ratio against a frozen reference policy, subtracted from
rewards before GAE.

Loss functions take an episode batch duck-typed as an object with an
`.episodes` list; each episode carries tokens, ctx_keys, gen_mask,
free_mask, old_logp, advantages and value_targets (see trainer.Episode).
Forced scaffold tokens are probability-1 actions: log-prob 0 under every
policy, ratio pinned at 1, no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import TabularPolicy, ValueTable
from .rewards import RewardTensor


class EmptyMask(ValueError):
    """An episode contributes no unmasked tokens to the loss."""


@dataclass(frozen=True)
class AdvantageSet:
    advantages: np.ndarray
    value_targets: np.ndarray
    td_errors: np.ndarray


def _reward_array(rewards) -> np.ndarray:
    if isinstance(rewards, RewardTensor):
        return rewards.per_token
    return np.asarray(rewards, dtype=np.float64)


def gae(rewards, values, gamma: float, lam: float) -> AdvantageSet:
    """Generalized advantage estimation.

    values must carry one extra bootstrap entry (0 at a terminal state):
    delta_t = r_t + gamma * V_{t+1} - V_t, A_t = sum_l (gamma*lam)^l delta_{t+l},
    value targets are A_t + V_t.
    """
    r = _reward_array(rewards)
    v = np.asarray(values, dtype=np.float64)
    if v.shape[0] != r.shape[0] + 1:
        raise ValueError(f"values must have length {r.shape[0] + 1}, got {v.shape[0]}")
    deltas = r + gamma * v[1:] - v[:-1]
    advantages = np.empty_like(deltas)
    acc = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + gamma * lam * acc
        advantages[t] = acc
    return AdvantageSet(
        advantages=advantages, value_targets=advantages + v[:-1], td_errors=deltas
    )


def ppo_loss(
    batch, policy: TabularPolicy, epsilon: float, mask=None
) -> tuple[float, np.ndarray]:
    """Clipped PPO surrogate (negated, for minimization) and its gradient.

    Per episode: -(1 / sum I) * sum_t I_t * min(rho_t A_t, clip(rho_t) A_t),
    averaged over episodes; I masks retrieved tokens. Returns the gradient
    with respect to the policy's allocated logit rows.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    staged = []
    for e, ep in enumerate(batch.episodes):
        gen = np.asarray(mask[e] if mask is not None else ep.gen_mask, dtype=bool)
        n_gen = int(gen.sum())
        if n_gen == 0:
            raise EmptyMask(f"episode {e} has an all-zero token mask")
        free = np.flatnonzero(gen & ep.free_mask)
        rows = np.asarray([policy.row(ep.ctx_keys[i]) for i in free], dtype=np.intp)
        cols = np.asarray([policy.token_index[ep.tokens[i]] for i in free], dtype=np.intp)
        forced_sum = float(ep.advantages[gen & ~ep.free_mask].sum())
        staged.append((n_gen, free, rows, cols, forced_sum, ep))

    grad = np.zeros_like(policy.logits_view())  # after row allocation above
    loss = 0.0
    for n_gen, free, rows, cols, forced_sum, ep in staged:
        # forced generated tokens: ratio == 1 exactly, term == A, no gradient
        loss += forced_sum / n_gen
        if free.size == 0:
            continue
        logps = policy.log_probs_rows(rows)
        logp_new = logps[np.arange(free.size), cols]
        ratio = np.exp(logp_new - ep.old_logp[free])
        a = ep.advantages[free]
        unclipped = ratio * a
        clipped = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * a
        loss += float(np.minimum(unclipped, clipped).sum()) / n_gen
        # gradient flows only where the unclipped branch is selected (ties included);
        # d term / d logits = coeff * (onehot - softmax), negated for minimization
        coeff = np.where(unclipped <= clipped, ratio * a, 0.0) / n_gen
        contrib = coeff[:, None] * np.exp(logps)
        contrib[np.arange(free.size), cols] -= coeff
        np.add.at(grad, rows, contrib)
    n_eps = len(batch.episodes)
    return -loss / n_eps, grad / n_eps


def value_loss(batch, value_fn: ValueTable) -> tuple[float, np.ndarray]:
    """Mean squared error against frozen value targets over generated tokens."""
    staged = []
    count = 0
    for ep in batch.episodes:
        idx = np.flatnonzero(ep.gen_mask)
        rows = np.asarray([value_fn.row(ep.ctx_keys[i]) for i in idx], dtype=np.intp)
        staged.append((rows, ep.value_targets[idx]))
        count += idx.size
    if count == 0:
        raise EmptyMask("batch has no generated tokens")
    grad = np.zeros_like(value_fn.values_view())
    total = 0.0
    for rows, targets in staged:
        residuals = value_fn.values_rows(rows) - targets
        total += float((residuals**2).sum())
        np.add.at(grad, rows, 2.0 * residuals / count)
    return total / count, grad


def kl_penalty(policy: TabularPolicy, ref_policy: TabularPolicy, batch) -> list[np.ndarray]:
    """Per-token log pi_theta - log pi_ref on generated tokens, zero elsewhere.

    The caller scales by beta and subtracts from rewards before GAE; beta=0
    should skip the call entirely so reward tensors stay bit-identical.
    """
    penalties = []
    for ep in batch.episodes:
        k = np.zeros(len(ep.tokens), dtype=np.float64)
        for i in np.flatnonzero(ep.gen_mask & ep.free_mask):
            ctx, tok = ep.ctx_keys[i], ep.tokens[i]
            k[i] = policy.log_prob(ctx, tok) - ref_policy.log_prob(ctx, tok)
        penalties.append(k)
    return penalties


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> None:
    """Plain gradient descent on a mutable parameter view."""
    params[: grad.shape[0]] -= lr * grad
