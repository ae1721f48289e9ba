"""Maximum-entropy actor-critic with automatic temperature tuning."""

from __future__ import annotations

import numpy as np

from .. import dist, nn
from .base import AgentBase, build_network, check_finite


class Sac(AgentBase):
    name = "sac"
    on_policy = False

    def __init__(self, params, context):
        super().__init__(params, context)
        if self.spaces.discrete:
            raise ValueError("sac requires a continuous action space")
        self.lr_policy = float(params.get("lr.policy"))
        self.lr_value = float(params.get("lr.value"))
        self.lr_alpha = float(params.get("lr.alpha"))
        self.tau = float(params.get("tau"))
        self.warmup = int(params.get("warmup"))
        self.buffer_size = int(params.get("buffer_size"))
        target_entropy = params.get("target_entropy")
        self.target_entropy = (-float(self.spaces.action_dim)
                               if target_entropy == "auto" else float(target_entropy))
        d, da = self.spaces.obs_dim, self.spaces.action_dim
        # actor emits mean and state-dependent log-std side by side
        self.add_network("actor", build_network(params, "policy", d, 2 * da, self.rng))
        self.add_network("q1", build_network(params, "value", d + da, 1, self.rng))
        self.add_network("q2", build_network(params, "value", d + da, 1, self.rng))
        self.q1_target = self.networks["q1"].copy()
        self.q2_target = self.networks["q2"].copy()
        self.log_alpha = np.array([np.log(float(params.get("init_alpha")))])
        self._alpha_adam = nn.AdamState([self.log_alpha])

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha[0]))

    def _head(self, obs):
        out, cache = nn.mlp_forward(self.networks["actor"], obs)
        da = self.spaces.action_dim
        raw = out[:, da:]
        return out[:, :da], dist.clamp_log_std(raw), cache, raw

    def act(self, obs, explore=True):
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        mean, log_std, _, _ = self._head(obs)
        if explore:
            action, _, _ = dist.tanh_gaussian_sample(mean, log_std, self.rng)
            self.act_rows += obs.shape[0]
        else:
            action = np.tanh(mean)
        return action, {}

    def update(self, batch):
        obs = batch["obs"]
        actions = batch["action"]
        rewards = batch["reward"][:, 0]
        terminal = batch["terminal"][:, 0]
        next_obs = batch["next_obs"]
        n = obs.shape[0]

        # soft target: bootstrap with entropy-regularized next value
        mean_n, log_std_n, _, _ = self._head(next_obs)
        next_action, next_logp, _ = dist.tanh_gaussian_sample(mean_n, log_std_n,
                                                              self.rng)
        xq = np.concatenate([next_obs, next_action], axis=1)
        q1t, _ = nn.mlp_forward(self.q1_target, xq)
        q2t, _ = nn.mlp_forward(self.q2_target, xq)
        soft_next = np.minimum(q1t[:, 0], q2t[:, 0]) - self.alpha * next_logp
        y = rewards + self.gamma * soft_next * (1.0 - terminal)

        x = np.concatenate([obs, actions], axis=1)
        q_loss = 0.0
        for name in ("q1", "q2"):
            q, cache = nn.mlp_forward(self.networks[name], x)
            err = q[:, 0] - y
            grads, _ = nn.mlp_backward(self.networks[name], cache,
                                       (2.0 * err / n)[:, None])
            self.step_network(name, grads, self.lr_value)
            q_loss += float((err ** 2).mean())

        policy_loss, entropy = self._actor_step(obs)
        self._alpha_step(entropy)
        nn.polyak_update(self.q1_target, self.networks["q1"], self.tau)
        nn.polyak_update(self.q2_target, self.networks["q2"], self.tau)
        self.n_updates += 1
        return check_finite({"q_loss": q_loss / 2.0, "policy_loss": policy_loss,
                             "entropy": entropy, "alpha": self.alpha})

    def _actor_step(self, obs):
        """Minimize E[alpha * log pi - min Q] with the reparameterized sample."""
        n = obs.shape[0]
        mean, log_std, cache, raw = self._head(obs)
        std = np.exp(log_std)
        eps = self.rng.standard_normal(mean.shape)
        u = mean + std * eps
        action = np.tanh(u)
        logp = (-0.5 * eps ** 2 - log_std - 0.5 * np.log(2.0 * np.pi)).sum(axis=1)
        logp -= 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u)).sum(axis=1)

        x = np.concatenate([obs, action], axis=1)
        q1, c1 = nn.mlp_forward(self.networks["q1"], x)
        q2, c2 = nn.mlp_forward(self.networks["q2"], x)
        w1 = (q1[:, 0] <= q2[:, 0]).astype(np.float64)[:, None]
        _, dx1 = nn.mlp_backward(self.networks["q1"], c1, -w1 / n)
        _, dx2 = nn.mlp_backward(self.networks["q2"], c2, -(1.0 - w1) / n)
        d_action = (dx1 + dx2)[:, obs.shape[1]:]

        one_m_a2 = 1.0 - action ** 2
        # d logp / du = 2a with eps held fixed; du/dmean = 1, du/dlog_std = std*eps
        d_u = (self.alpha / n) * (2.0 * action) + d_action * one_m_a2
        d_mean = d_u
        d_log_std = d_u * std * eps - (self.alpha / n)
        # the clamp passes no gradient outside its bounds
        d_log_std *= (raw > dist.LOG_STD_MIN) & (raw < dist.LOG_STD_MAX)
        dhead = np.concatenate([d_mean, d_log_std], axis=1)
        grads, _ = nn.mlp_backward(self.networks["actor"], cache, dhead)
        self.step_network("actor", grads, self.lr_policy)

        minq = np.minimum(q1[:, 0], q2[:, 0])
        policy_loss = float((self.alpha * logp - minq).mean())
        return policy_loss, float(-logp.mean())

    def _alpha_step(self, entropy):
        """Gradient step on E[-alpha * (logp + target_entropy)] via log-alpha."""
        mean_logp = -entropy
        grad = np.array([-self.alpha * (mean_logp + self.target_entropy)])
        nn.adam_step(self._alpha_adam, [self.log_alpha], [grad], self.lr_alpha)


def make_sac(params, context):
    return Sac(params, context)
