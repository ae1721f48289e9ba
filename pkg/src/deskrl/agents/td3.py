"""Twin-critic deterministic policy gradient with delayed actor updates."""

from __future__ import annotations

import numpy as np

from .. import nn
from .base import AgentBase, build_network, check_finite


class Td3(AgentBase):
    name = "td3"
    on_policy = False

    def __init__(self, params, context):
        super().__init__(params, context)
        if self.spaces.discrete:
            raise ValueError("td3 requires a continuous action space")
        self.lr_policy = float(params.get("lr.policy"))
        self.lr_value = float(params.get("lr.value"))
        self.sigma = float(params.get("sigma"))
        self.target_sigma = float(params.get("target_sigma"))
        self.noise_clip = float(params.get("noise_clip"))
        self.policy_delay = int(params.get("policy_delay"))
        self.tau = float(params.get("tau"))
        self.warmup = int(params.get("warmup"))
        self.buffer_size = int(params.get("buffer_size"))
        d, da = self.spaces.obs_dim, self.spaces.action_dim
        self.add_network("actor", build_network(params, "policy", d, da, self.rng))
        self.add_network("q1", build_network(params, "value", d + da, 1, self.rng))
        self.add_network("q2", build_network(params, "value", d + da, 1, self.rng))
        self.actor_target = self.networks["actor"].copy()
        self.q1_target = self.networks["q1"].copy()
        self.q2_target = self.networks["q2"].copy()

    def _policy(self, net, obs):
        pre, _ = nn.mlp_forward(net, obs)
        return np.tanh(pre)

    def act(self, obs, explore=True):
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        action = self._policy(self.networks["actor"], obs)
        if explore:
            noise = self.rng.standard_normal(action.shape) * self.sigma
            action = np.clip(action + noise, -1.0, 1.0)
            self.act_rows += obs.shape[0]
        return action, {}

    def update(self, batch):
        obs = batch["obs"]
        actions = batch["action"]
        rewards = batch["reward"][:, 0]
        terminal = batch["terminal"][:, 0]
        next_obs = batch["next_obs"]
        n = obs.shape[0]

        # smoothed target action
        noise = np.clip(self.rng.standard_normal(actions.shape) * self.target_sigma,
                        -self.noise_clip, self.noise_clip)
        next_action = np.clip(self._policy(self.actor_target, next_obs) + noise,
                              -1.0, 1.0)
        xq = np.concatenate([next_obs, next_action], axis=1)
        q1t, _ = nn.mlp_forward(self.q1_target, xq)
        q2t, _ = nn.mlp_forward(self.q2_target, xq)
        y = rewards + self.gamma * np.minimum(q1t[:, 0], q2t[:, 0]) * (1.0 - terminal)

        x = np.concatenate([obs, actions], axis=1)
        q_loss = 0.0
        for name in ("q1", "q2"):
            q, cache = nn.mlp_forward(self.networks[name], x)
            err = q[:, 0] - y
            grads, _ = nn.mlp_backward(self.networks[name], cache,
                                       (2.0 * err / n)[:, None])
            self.step_network(name, grads, self.lr_value)
            q_loss += float((err ** 2).mean())

        self.n_updates += 1
        policy_loss = np.nan
        if self.n_updates % self.policy_delay == 0:
            policy_loss = self._actor_step(obs)
            nn.polyak_update(self.actor_target, self.networks["actor"], self.tau)
            nn.polyak_update(self.q1_target, self.networks["q1"], self.tau)
            nn.polyak_update(self.q2_target, self.networks["q2"], self.tau)
        return check_finite({"q_loss": q_loss / 2.0,
                             "policy_loss": 0.0 if np.isnan(policy_loss)
                             else policy_loss})

    def _actor_step(self, obs):
        """Ascend Q1(s, pi(s)) through the critic's input gradient."""
        n = obs.shape[0]
        pre, acache = nn.mlp_forward(self.networks["actor"], obs)
        action = np.tanh(pre)
        x = np.concatenate([obs, action], axis=1)
        q1, qcache = nn.mlp_forward(self.networks["q1"], x)
        _, dx = nn.mlp_backward(self.networks["q1"], qcache,
                                np.full((n, 1), -1.0 / n))
        d_action = dx[:, obs.shape[1]:]
        d_pre = d_action * (1.0 - action ** 2)
        grads, _ = nn.mlp_backward(self.networks["actor"], acache, d_pre)
        self.step_network("actor", grads, self.lr_policy)
        return float(-q1[:, 0].mean())


def make_td3(params, context):
    return Td3(params, context)
