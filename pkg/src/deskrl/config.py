"""Run configuration: JSON parameter trees, string-keyed factories, schema validation.

A run is fully described by one JSON file.  Loading is eager: the whole
schema is validated before anything is constructed, so a bad file fails
before an environment ever spawns.  All defaults live in the DEFAULTS
table below; the file only needs to state what differs.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass


class SchemaError(ValueError):
    """Raised when a run file violates the configuration schema."""


class UnknownKeyError(ValueError):
    """Raised by Factory.create for a key that was never registered."""

    def __init__(self, key):
        super().__init__("Unknown key provided: " + str(key))
        self.key = key


_MISSING = object()


class ParamTree:
    """Nested string-keyed parameter mapping with dotted-path access.

    Values are scalars, strings, bools, lists, or sub-mappings (returned
    wrapped as ParamTree).  Trees are treated as immutable after load and
    are safe to share read-only.
    """

    def __init__(self, data=None):
        self._data = dict(data) if data else {}

    def get(self, path, default=_MISSING):
        """Return the value at dotted `path`, or `default` when given.

        A lookup fails (KeyError without a default) when any intermediate
        node is missing or is not a sub-mapping.
        """
        node = self._data
        parts = path.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                if default is _MISSING:
                    raise KeyError(path)
                return default
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            if default is _MISSING:
                raise KeyError(path)
            return default
        value = node[parts[-1]]
        return ParamTree(value) if isinstance(value, dict) else value

    def has(self, path):
        return self.get(path, _MISSING) is not _MISSING

    def keys(self):
        return self._data.keys()

    def to_dict(self):
        return copy.deepcopy(self._data)

    @classmethod
    def parse(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise SchemaError("top level of a run file must be an object")
        return cls(data)

    def dumps(self):
        return json.dumps(self._data, sort_keys=True, separators=(",", ":"))

    def __eq__(self, other):
        return isinstance(other, ParamTree) and self._data == other._data

    def __repr__(self):
        return f"ParamTree({self._data!r})"


class Factory:
    """String-keyed constructor registry for one object category."""

    def __init__(self, category=""):
        self.category = category
        self.keys = {}

    def register(self, key, creator):
        """Register `creator` under `key`; re-registering replaces it."""
        self.keys[key] = creator

    def create(self, key, params, context=None):
        """Construct the object registered under `key`.

        An unregistered key is always an error, never a silent default.
        """
        creator = self.keys.get(key)
        if creator is None:
            raise UnknownKeyError(key)
        return creator(params, context)


# ---------------------------------------------------------------------------
# Schema: accepted enum values per category, and the single defaults table.

AGENT_TYPES = ("ppo", "dqn", "td3", "sac")
TRAINER_TYPES = ("on_policy", "off_policy", "separable")
ENV_TYPES = ("cartpole", "pendulum", "lorenz", "chain")
SRL_TYPES = ("pca", "ae")
ACTIVATIONS = ("tanh", "relu", "linear", "softmax")
LOSSES = ("mse", "sum")
OBS_TRANSFORM_KINDS = ("none", "scale", "clip")

# trainer.type values an agent may run under
AGENT_TRAINERS = {
    "ppo": ("on_policy", "separable"),
    "dqn": ("off_policy",),
    "td3": ("off_policy",),
    "sac": ("off_policy",),
}

# Every default in one place.  A run file overrides by stating the key.
DEFAULTS = {
    "run": {
        "seed": 0,
        "n_runs": 1,
        "n_transitions": 100_000,
        "output_dir": "runs",
        "eval_every": 0,  # progress-log period in episodes; 0 = silent
    },
    "environment": {
        "n_envs": 1,
        "parallel_workers": False,
        "obs_transform": {"kind": "none"},
        "extra": {},
    },
    "trainer": {
        "update_size": 4,     # on-policy: trajectories per update
        "n_epochs": 4,
        "batch_size": 64,
        "bootstrap": True,
        "update_every": 1,    # off-policy: env transitions per gradient step
    },
    "agent": {
        "gamma": 0.99,
        "networks": {
            "policy": {"layers": [64, 64], "activation": "tanh"},
            "value": {"layers": [64, 64], "activation": "tanh"},
        },
        "lr": {"policy": 3e-4, "value": 1e-3},
    },
    "agent.ppo": {
        "clip_eps": 0.2,
        "gae_lambda": 0.95,
        "entropy_coef": 0.01,
    },
    "agent.dqn": {
        "eps_start": 1.0,
        "eps_end": 0.05,
        "eps_decay_steps": 0,  # 0 = half the transition budget
        "buffer_size": 50_000,
        "target_sync": "hard",  # "hard" | "polyak"
        "sync_every": 500,
        "tau": 0.005,
        "warmup": 1000,
    },
    "agent.td3": {
        "sigma": 0.1,
        "target_sigma": 0.2,
        "noise_clip": 0.5,
        "policy_delay": 2,
        "tau": 0.005,
        "buffer_size": 50_000,
        "warmup": 1000,
        "lr": {"policy": 1e-3, "value": 1e-3},
    },
    "agent.sac": {
        "tau": 0.005,
        "buffer_size": 50_000,
        "warmup": 1000,
        "target_entropy": "auto",  # "auto" = -action_dim
        "init_alpha": 0.2,
        "lr": {"policy": 3e-4, "value": 3e-4, "alpha": 3e-4},
    },
    "srl": {
        "warmup_samples": 5000,
        "latent_dim": 0,            # 0 = choose by variance_threshold
        "variance_threshold": 0.99,
        "hidden": [64],             # ae encoder/decoder hidden sizes
        "epochs": 50,
        "batch_size": 64,
        "lr": 1e-3,
        "activation": "tanh",
    },
}

_TOP_LEVEL_KEYS = ("run", "environment", "agent", "trainer", "srl")


@dataclass
class RunConfig:
    """Validated run configuration, one tree per section."""

    run: ParamTree
    environment: ParamTree
    agent: ParamTree
    trainer: ParamTree
    srl: ParamTree | None = None
    name: str = "run"

    def to_dict(self):
        out = {
            "run": self.run.to_dict(),
            "environment": self.environment.to_dict(),
            "agent": self.agent.to_dict(),
            "trainer": self.trainer.to_dict(),
        }
        if self.srl is not None:
            out["srl"] = self.srl.to_dict()
        return out

    def hash(self):
        """Stable hash of the effective (defaults-applied) configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def with_seed(self, seed):
        cfg = copy.deepcopy(self)
        cfg.run._data["seed"] = int(seed)
        return cfg


def _merge(defaults, override):
    """Deep-merge `override` on top of `defaults` (dicts only)."""
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _require(cond, msg):
    if not cond:
        raise SchemaError(msg)


def validate(tree: ParamTree, name="run") -> RunConfig:
    """Apply defaults to a raw parsed tree and validate every section."""
    data = tree.to_dict()
    for key in data:
        _require(key in _TOP_LEVEL_KEYS, f"unknown top-level key: {key!r}")
    for key in ("environment", "agent", "trainer"):
        _require(key in data, f"missing required section: {key!r}")

    run = _merge(DEFAULTS["run"], data.get("run", {}))
    env = _merge(DEFAULTS["environment"], data.get("environment", {}))
    trainer = _merge(DEFAULTS["trainer"], data.get("trainer", {}))

    agent_in = data["agent"]
    _require("type" in agent_in, "agent.type is required")
    agent_type = agent_in["type"]
    _require(agent_type in AGENT_TYPES,
             f"agent.type {agent_type!r} not in {AGENT_TYPES}")
    agent = _merge(_merge(DEFAULTS["agent"], DEFAULTS[f"agent.{agent_type}"]),
                   agent_in)

    _require("type" in trainer, "trainer.type is required")
    _require(trainer["type"] in TRAINER_TYPES,
             f"trainer.type {trainer['type']!r} not in {TRAINER_TYPES}")
    _require(trainer["type"] in AGENT_TRAINERS[agent_type],
             f"agent {agent_type!r} cannot run under trainer "
             f"{trainer['type']!r} (allowed: {AGENT_TRAINERS[agent_type]})")

    _require("type" in env, "environment.type is required")
    _require(env["type"] in ENV_TYPES,
             f"environment.type {env['type']!r} not in {ENV_TYPES}")
    _require(int(env["n_envs"]) >= 1, "environment.n_envs must be >= 1")
    if trainer["type"] == "separable":
        _require(int(env["n_envs"]) == 1,
                 "separable trainer requires environment.n_envs = 1")

    kind = env["obs_transform"].get("kind", "none")
    _require(kind in OBS_TRANSFORM_KINDS,
             f"obs_transform.kind {kind!r} not in {OBS_TRANSFORM_KINDS}")
    if kind in ("scale", "clip"):
        _require("lo" in env["obs_transform"] and "hi" in env["obs_transform"],
                 f"obs_transform kind {kind!r} requires lo and hi")

    _require(0.0 <= float(agent["gamma"]) <= 1.0, "agent.gamma must lie in [0, 1]")
    for net in ("policy", "value"):
        act = agent["networks"][net]["activation"]
        _require(act in ACTIVATIONS,
                 f"networks.{net}.activation {act!r} not in {ACTIVATIONS}")

    _require(int(run["n_runs"]) >= 1, "run.n_runs must be >= 1")

    srl = None
    if "srl" in data:
        srl_data = _merge(DEFAULTS["srl"], data["srl"])
        _require("type" in srl_data, "srl.type is required")
        _require(srl_data["type"] in SRL_TYPES,
                 f"srl.type {srl_data['type']!r} not in {SRL_TYPES}")
        _require(trainer["type"] in ("on_policy", "off_policy"),
                 "srl is only supported with on_policy/off_policy trainers")
        _require(int(srl_data["warmup_samples"]) >= 2,
                 "srl.warmup_samples must be >= 2")
        srl = ParamTree(srl_data)

    return RunConfig(run=ParamTree(run), environment=ParamTree(env),
                     agent=ParamTree(agent), trainer=ParamTree(trainer),
                     srl=srl, name=name)


def load_config(path) -> RunConfig:
    """Parse and validate the run file at `path`."""
    with open(path, "r", encoding="utf-8") as fh:
        tree = ParamTree.parse(fh.read())
    name = str(path).rsplit("/", 1)[-1]
    if name.endswith(".json"):
        name = name[: -len(".json")]
    return validate(tree, name=name)


def default_factories():
    """Assemble the factory per pluggable category, fully populated.

    Imports are local so this composition root does not create import
    cycles with the modules it wires together.
    """
    from . import nn
    from .agents import make_dqn, make_ppo, make_sac, make_td3
    from .envs import make_cartpole, make_chain, make_lorenz, make_pendulum
    from .srl import AeBuilder, PcaBuilder
    from .trainer import OffPolicyTrainer, OnPolicyTrainer, SeparableTrainer

    agents = Factory("agent")
    agents.register("ppo", make_ppo)
    agents.register("dqn", make_dqn)
    agents.register("td3", make_td3)
    agents.register("sac", make_sac)

    trainers = Factory("trainer")
    trainers.register("on_policy", lambda p, c: OnPolicyTrainer(p, c))
    trainers.register("off_policy", lambda p, c: OffPolicyTrainer(p, c))
    trainers.register("separable", lambda p, c: SeparableTrainer(p, c))

    envs = Factory("environment")
    envs.register("cartpole", make_cartpole)
    envs.register("pendulum", make_pendulum)
    envs.register("lorenz", make_lorenz)
    envs.register("chain", make_chain)

    srl = Factory("srl")
    srl.register("pca", lambda p, c: PcaBuilder(p))
    srl.register("ae", lambda p, c: AeBuilder(p))

    activations = Factory("activation")
    for act in ACTIVATIONS:
        activations.register(act, lambda p, c, _a=act: nn.activation(_a))

    losses = Factory("loss")
    for loss in LOSSES:
        losses.register(loss, lambda p, c, _l=loss: nn.loss_fn(_l))

    return {
        "agent": agents,
        "trainer": trainers,
        "environment": envs,
        "srl": srl,
        "activation": activations,
        "loss": losses,
    }


SCHEMA_ENUMS = {
    "agent": AGENT_TYPES,
    "trainer": TRAINER_TYPES,
    "environment": ENV_TYPES,
    "srl": SRL_TYPES,
    "activation": ACTIVATIONS,
    "loss": LOSSES,
}
