"""Clipped-surrogate policy optimization with an imitation term.

The policy is a diagonal Gaussian over pre-squash actions ``u``; executed
actions are ``sigmoid(u)`` in ``[0, 1]`` (fractions of the maximum motor
speed). The imitation loss compares the squashed mean with the expert.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import Adam, PolicyNets, sigmoid

LOG_2PI = np.log(2 * np.pi)


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class PpoConfig:
    clip: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 0.99
    epochs: int = 4
    minibatch: int = 2048
    rollout: int = 64
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    lr: float = 3e-4
    max_grad_norm: float = 1.0

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")
        if not (0 < self.gae_lambda <= 1 and 0 < self.gamma <= 1):
            raise ValueError("gamma and lambda must lie in (0, 1]")


def gae(rewards, values, dones, truncated, last_values, gamma=0.99, lam=0.95):
    """Generalized advantage estimates over a ``(T, N)`` rollout.

    ``dones[t]`` ends the episode after step ``t``. Crashes are terminal;
    time-limit ends (``truncated``) bootstrap from the value of the final
    state, approximated by the value at that step.
    """
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros_like(last_values)
    next_value = last_values
    for t in reversed(range(T)):
        boot = np.where(truncated[t], values[t], np.where(dones[t], 0.0, next_value))
        delta = rewards[t] + gamma * boot - values[t]
        last = delta + gamma * lam * np.where(dones[t], 0.0, last)
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


class RunningStat:
    """Streaming mean and variance (parallel-merge form)."""

    def __init__(self):
        self.n, self.mean, self.m2 = 0, 0.0, 0.0

    def update(self, x):
        x = np.ravel(x)
        n = x.size
        if n == 0:
            return
        mean, var = float(np.mean(x)), float(np.var(x))
        delta = mean - self.mean
        tot = self.n + n
        self.mean += delta * n / tot
        self.m2 += var * n + delta**2 * self.n * n / tot
        self.n = tot

    @property
    def std(self):
        return float(np.sqrt(self.m2 / self.n)) if self.n > 1 else 1.0


def gaussian_logp(u, mu, log_std):
    z = (u - mu) / np.exp(log_std)
    return -0.5 * np.sum(z * z, -1) - np.sum(log_std) - 0.5 * u.shape[-1] * LOG_2PI


class Learner:
    """Owns the networks' optimizer and performs blended updates."""

    def __init__(self, nets: PolicyNets, config: PpoConfig = PpoConfig()):
        self.nets = nets
        self.config = config
        self.log_std_grad = np.zeros_like(nets.log_std)
        self.params = nets.policy.params + nets.encoder.params + nets.value.params + [nets.log_std]
        self.opt = Adam(self.params, lr=config.lr, max_grad_norm=config.max_grad_norm)

    def act(self, x_norm, e_norm, rng=None):
        """Pre-squash mean, value and (optionally) a sampled pre-squash action."""
        n = self.nets
        z = n.encoder(e_norm)
        inp = np.concatenate([x_norm, z], -1)
        mu = n.policy(inp)
        v = n.value(inp)[..., 0]
        if rng is None:
            return mu, v, mu
        u = mu + np.exp(n.log_std) * rng.standard_normal(mu.shape)
        return mu, v, u

    def _grads(self):
        n = self.nets
        return n.policy.grads + n.encoder.grads + n.value.grads + [self.log_std_grad]

    def _zero(self):
        for net in (self.nets.policy, self.nets.encoder, self.nets.value):
            net.zero_grad()
        self.log_std_grad[...] = 0.0

    def loss_and_grad(self, mb, alpha: float):
        """Forward/backward on one minibatch; gradients left in the buffers.

        The imitation gradient is rescaled to the norm of the surrogate
        gradient (policy head and log-std) before the two are mixed with
        weights ``(1 - alpha, alpha)``. The normalized-advantage surrogate and
        the action MSE otherwise differ in scale by orders of magnitude, which
        would leave the mixing weight without effect. Pure imitation
        (``alpha == 1``) uses the raw MSE gradient.
        """
        cfg, n = self.config, self.nets
        self._zero()
        B = len(mb["adv"])
        k = mb["x_norm"].shape[-1]
        z = n.encoder.forward(mb["e_norm"])
        inp = np.concatenate([mb["x_norm"], z], -1)
        mu = n.policy.forward(inp)
        v = n.value.forward(inp)[:, 0]
        std = np.exp(n.log_std)
        logp = gaussian_logp(mb["u"], mu, n.log_std)
        ratio = np.exp(logp - mb["logp"])
        A = mb["adv"]
        s1 = ratio * A
        s2 = np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * A
        l_clip = -np.mean(np.minimum(s1, s2))
        entropy = float(np.sum(n.log_std) + 0.5 * len(std) * (1 + LOG_2PI))
        l_v = np.mean((v - mb["ret"]) ** 2)
        a_mean = sigmoid(mu)
        l_il = np.mean((a_mean - mb["expert"]) ** 2)
        w_rl = 1.0 - alpha
        total = w_rl * (l_clip - cfg.entropy_coef * entropy) + cfg.value_coef * l_v + alpha * l_il
        if not np.isfinite(total):
            raise NonFiniteLoss(f"non-finite loss (clip={l_clip}, value={l_v}, il={l_il})")

        # imitation gradient on the policy head
        d_mu_il = 2.0 * (a_mean - mb["expert"]) * a_mean * (1 - a_mean) / (B * a_mean.shape[-1])
        dinp_il = n.policy.backward(d_mu_il)
        g_il = [g.copy() for g in n.policy.grads]
        n.policy.zero_grad()

        # surrogate gradient through whichever clip branch is active
        active = s1 <= s2
        d_logp = np.where(active, -A * ratio, 0.0) / B
        diff = (mb["u"] - mu) / std
        self.log_std_grad += np.sum(d_logp[:, None] * (diff * diff - 1.0), 0) - cfg.entropy_coef
        n.policy.forward(inp)
        dinp_rl = n.policy.backward(d_logp[:, None] * diff / std)

        norm_rl = np.sqrt(sum(float(np.sum(g * g)) for g in n.policy.grads) + float(np.sum(self.log_std_grad**2)))
        norm_il = np.sqrt(sum(float(np.sum(g * g)) for g in g_il))
        scale = norm_rl / norm_il if (w_rl > 0 and norm_il > 0) else 1.0
        w_il = alpha * scale
        for g, gi in zip(n.policy.grads, g_il):
            g *= w_rl
            g += w_il * gi
        self.log_std_grad *= w_rl

        d_v = cfg.value_coef * 2.0 * (v - mb["ret"]) / B
        dinp_v = n.value.backward(d_v[:, None])
        n.encoder.backward(w_rl * dinp_rl[:, k:] + w_il * dinp_il[:, k:] + dinp_v[:, k:])
        return {
            "loss": float(total),
            "clip_loss": float(l_clip),
            "value_loss": float(l_v),
            "il_loss": float(l_il),
            "entropy": entropy,
            "approx_kl": float(np.mean(mb["logp"] - logp)),
            "clip_frac": float(np.mean(np.abs(ratio - 1) > cfg.clip)),
            "grad_norm_rl": float(norm_rl),
            "grad_norm_il": float(norm_il),
        }

    def update(self, batch: dict, alpha: float, rng: np.random.Generator):
        """Several shuffled passes over ``batch``; returns averaged stats."""
        cfg = self.config
        B = len(batch["adv"])
        stats = []
        for _ in range(cfg.epochs):
            order = rng.permutation(B)
            for start in range(0, B, cfg.minibatch):
                idx = order[start : start + cfg.minibatch]
                mb = {k: v[idx] for k, v in batch.items()}
                stats.append(self.loss_and_grad(mb, alpha))
                self.opt.step(self._grads())
        return {k: float(np.mean([s[k] for s in stats])) for k in stats[0]} if stats else {}
