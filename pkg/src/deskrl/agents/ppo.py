"""Clipped-surrogate policy-gradient agent (discrete and continuous)."""

from __future__ import annotations

import numpy as np

from .. import dist, nn
from ..returns import normalize_advantages
from .base import GRAD_CLIP, AgentBase, build_network, check_finite


class Ppo(AgentBase):
    name = "ppo"
    on_policy = True

    def __init__(self, params, context):
        super().__init__(params, context)
        self.clip_eps = float(params.get("clip_eps"))
        self.gae_lambda = float(params.get("gae_lambda"))
        self.entropy_coef = float(params.get("entropy_coef"))
        self.lr_policy = float(params.get("lr.policy"))
        self.lr_value = float(params.get("lr.value"))
        out = self.spaces.n_actions if self.spaces.discrete else self.spaces.action_dim
        self.add_network("policy", build_network(params, "policy",
                                                 self.spaces.obs_dim, out, self.rng))
        self.add_network("value", build_network(params, "value",
                                                self.spaces.obs_dim, 1, self.rng))
        if not self.spaces.discrete:
            # state-independent log-std, one learned entry per action dim
            self.log_std = np.zeros(self.spaces.action_dim)
            self._log_std_adam = nn.AdamState([self.log_std])

    def value(self, obs):
        v, _ = nn.mlp_forward(self.networks["value"], obs)
        return v[:, 0]

    def act(self, obs, explore=True):
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        head, _ = nn.mlp_forward(self.networks["policy"], obs)
        values = self.value(obs)
        self.act_rows += obs.shape[0]
        if self.spaces.discrete:
            if explore:
                pairs = [dist.categorical_sample(row, self.rng)[:2] for row in head]
                actions = np.array([p[0] for p in pairs], dtype=np.int64)
                logp = np.array([p[1] for p in pairs])
            else:
                actions = head.argmax(axis=1)
                logp = dist.categorical_logp(head, actions)
            return actions, {"logp": logp, "value": values}
        log_std = np.broadcast_to(self.log_std, head.shape)
        if explore:
            actions, logp, _ = dist.gaussian_sample(head, log_std, self.rng)
        else:
            actions = head.copy()
            logp = dist.gaussian_logp(actions, head, log_std)
        return actions, {"logp": logp, "value": values}

    def update(self, batch, n_epochs, batch_size, check_ratio=True):
        """Epochs of shuffled minibatch steps on one drained rollout.

        check_ratio asserts the probability-ratio-one identity on the first
        minibatch; callers disable it when the rollout legitimately carries
        rows collected under an earlier policy (no-bootstrap carryover).
        """
        obs = batch["obs"]
        actions = batch["action"]
        logp_old = batch["logp"][:, 0]
        adv = normalize_advantages(batch["advantage"][:, 0])
        ret = batch["ret"][:, 0]
        n = obs.shape[0]
        report = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0}
        n_batches = 0
        first = check_ratio
        for _ in range(int(n_epochs)):
            order = self.rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                stats = self._minibatch_step(obs[idx], actions[idx],
                                             logp_old[idx], adv[idx], ret[idx],
                                             check_ratio=first)
                first = False
                for key in report:
                    report[key] += stats[key]
                n_batches += 1
        for key in report:
            report[key] /= max(n_batches, 1)
        self.n_updates += 1
        return check_finite(report)

    def _minibatch_step(self, obs, actions, logp_old, adv, ret, check_ratio):
        m = obs.shape[0]
        head, cache = nn.mlp_forward(self.networks["policy"], obs)
        if self.spaces.discrete:
            acts = actions[:, 0].astype(np.int64)
            logp = dist.categorical_logp(head, acts)
        else:
            log_std = np.broadcast_to(self.log_std, head.shape)
            logp = dist.gaussian_logp(actions, head, log_std)
        ratio = np.exp(logp - logp_old)
        if check_ratio and np.max(np.abs(ratio - 1.0)) > 1e-9:
            raise AssertionError(
                "stale rollout: probability ratio differs from 1 before the "
                "first gradient step")
        clipped = np.clip(ratio, 1.0 - self.clip_eps, 1.0 + self.clip_eps)
        s_plain = ratio * adv
        s_clip = clipped * adv
        surrogate = np.minimum(s_plain, s_clip)
        inside = (ratio > 1.0 - self.clip_eps) & (ratio < 1.0 + self.clip_eps)
        active = (s_plain <= s_clip) | inside
        # d(-surrogate)/d(logp), averaged over the minibatch
        dlogp = -np.where(active, ratio * adv, 0.0) / m

        if self.spaces.discrete:
            probs = nn.softmax(head)
            onehot = np.zeros_like(head)
            onehot[np.arange(m), acts] = 1.0
            dhead = dlogp[:, None] * (onehot - probs)
            logm = np.log(np.maximum(probs, 1e-300))
            entropy = float(-(probs * logm).sum(axis=1).mean())
            # entropy bonus: dH/dlogits = -p * (log p + H)
            h_rows = -(probs * logm).sum(axis=1, keepdims=True)
            dhead += (self.entropy_coef / m) * probs * (logm + h_rows)
        else:
            std = np.exp(dist.clamp_log_std(self.log_std))
            z = (actions - head) / std
            dhead = dlogp[:, None] * (z / std)
            d_log_std = (dlogp[:, None] * (z ** 2 - 1.0)).sum(axis=0)
            d_log_std -= self.entropy_coef  # dH/dlog_std = 1 per dim
            entropy = float(dist.gaussian_entropy(self.log_std))
        grads, _ = nn.mlp_backward(self.networks["policy"], cache, dhead)
        if self.spaces.discrete:
            self.step_network("policy", grads, self.lr_policy)
        else:
            glist = grads.as_list() + [d_log_std]
            nn.clip_grads(glist, GRAD_CLIP)
            nn.adam_step(self.adams["policy"],
                         self.networks["policy"].params_list(), glist[:-1],
                         self.lr_policy)
            nn.adam_step(self._log_std_adam, [self.log_std], [glist[-1]],
                         self.lr_policy)
            np.clip(self.log_std, dist.LOG_STD_MIN, dist.LOG_STD_MAX,
                    out=self.log_std)
        policy_loss = float(-surrogate.mean())

        v, vcache = nn.mlp_forward(self.networks["value"], obs)
        err = v[:, 0] - ret
        vgrads, _ = nn.mlp_backward(self.networks["value"], vcache,
                                    (2.0 * err / m)[:, None])
        self.step_network("value", vgrads, self.lr_value)
        value_loss = float((err ** 2).mean())
        return {"policy_loss": policy_loss, "value_loss": value_loss,
                "entropy": entropy}


def make_ppo(params, context):
    return Ppo(params, context)
