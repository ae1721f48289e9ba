"""Value-based agent with epsilon-greedy exploration and a target network."""

from __future__ import annotations

import numpy as np

from .. import dist, nn
from .base import AgentBase, build_network, check_finite


class Dqn(AgentBase):
    name = "dqn"
    on_policy = False

    def __init__(self, params, context):
        super().__init__(params, context)
        if not self.spaces.discrete:
            raise ValueError("dqn requires a discrete action space")
        self.lr = float(params.get("lr.value"))
        self.eps_start = float(params.get("eps_start"))
        self.eps_end = float(params.get("eps_end"))
        decay = int(params.get("eps_decay_steps"))
        self.eps_decay_steps = decay if decay > 0 else max(self.n_transitions // 2, 1)
        self.target_sync = params.get("target_sync")
        self.sync_every = int(params.get("sync_every"))
        self.tau = float(params.get("tau"))
        self.warmup = int(params.get("warmup"))
        self.buffer_size = int(params.get("buffer_size"))
        q = self.add_network("q", build_network(params, "value",
                                                self.spaces.obs_dim,
                                                self.spaces.n_actions, self.rng))
        self.target = q.copy()

    def epsilon(self):
        frac = min(self.act_rows / self.eps_decay_steps, 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def act(self, obs, explore=True):
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        q, _ = nn.mlp_forward(self.networks["q"], obs)
        if not explore:
            return q.argmax(axis=1), {}
        eps = self.epsilon()
        actions = np.array([dist.epsilon_greedy(row, eps, self.rng) for row in q],
                           dtype=np.int64)
        self.act_rows += obs.shape[0]
        return actions, {}

    def update(self, batch):
        obs = batch["obs"]
        acts = batch["action"][:, 0].astype(np.int64)
        rewards = batch["reward"][:, 0]
        terminal = batch["terminal"][:, 0]
        next_obs = batch["next_obs"]
        n = obs.shape[0]

        q_next, _ = nn.mlp_forward(self.target, next_obs)
        best_next = q_next.max(axis=1)
        # vectorized td_target: truncation never zeroes the bootstrap
        y = rewards + self.gamma * best_next * (1.0 - terminal)

        q, cache = nn.mlp_forward(self.networks["q"], obs)
        picked = q[np.arange(n), acts]
        err = picked - y
        dq = np.zeros_like(q)
        dq[np.arange(n), acts] = 2.0 * err / n
        grads, _ = nn.mlp_backward(self.networks["q"], cache, dq)
        self.step_network("q", grads, self.lr)

        self.n_updates += 1
        if self.target_sync == "hard":
            if self.n_updates % self.sync_every == 0:
                self.target = self.networks["q"].copy()
        else:
            nn.polyak_update(self.target, self.networks["q"], self.tau)
        return check_finite({"q_loss": float((err ** 2).mean())})


def make_dqn(params, context):
    return Dqn(params, context)
