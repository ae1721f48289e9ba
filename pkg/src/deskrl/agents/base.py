"""Shared agent plumbing: network construction, optimizer bookkeeping."""

from __future__ import annotations

import numpy as np

from .. import nn

GRAD_CLIP = 10.0  # global-norm guard applied to every update


def build_network(params, which, in_dim, out_dim, rng):
    """Build the named network (policy/value) from its config subtree."""
    hidden = [int(h) for h in params.get(f"networks.{which}.layers")]
    act = params.get(f"networks.{which}.activation")
    sizes = [in_dim] + hidden + [out_dim]
    acts = [act] * len(hidden) + ["linear"]
    return nn.mlp_init(sizes, acts, "xavier_uniform", rng)


class AgentBase:
    """Common state: spaces, discount, named networks and Adam states."""

    name = "agent"
    on_policy = False

    def __init__(self, params, context):
        self.params = params
        self.spaces = context["spaces"]
        self.n_transitions = int(context.get("n_transitions", 0))
        self.rng = context["rng"]
        self.gamma = float(params.get("gamma"))
        self.networks = {}
        self.adams = {}
        self.act_rows = 0
        self.n_updates = 0

    def add_network(self, name, net):
        self.networks[name] = net
        self.adams[name] = nn.AdamState(net.params_list())
        return net

    def step_network(self, name, grads, lr):
        glist = grads.as_list()
        nn.clip_grads(glist, GRAD_CLIP)
        nn.adam_step(self.adams[name], self.networks[name].params_list(),
                     glist, lr)

    def value(self, obs):
        """State values for a batch of observations (agents that have one)."""
        raise NotImplementedError

    def act(self, obs, explore=True):
        raise NotImplementedError

    def update(self, batch):
        raise NotImplementedError

    @property
    def action_dim(self):
        return 1 if self.spaces.discrete else self.spaces.action_dim

    def save(self, directory, prefix):
        """Write one weight file per named network."""
        paths = {}
        for name, net in self.networks.items():
            path = f"{directory}/{prefix}_{name}.dknn"
            nn.save_weights(net, path)
            paths[name] = path
        return paths


def check_finite(report):
    for key, value in report.items():
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite {key} in agent update: {value}")
    return report
