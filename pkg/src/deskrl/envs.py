"""Built-in desk-scale environments, observation/action transforms, worker pool.

Each environment owns its Generator, declares its Spaces and max episode
length, and reports timeouts as truncation (never terminal).  The pool
steps n workers per call and auto-resets finished episodes, returning the
fresh observation separately so the true final observation is preserved.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np


@dataclass
class Spaces:
    """Observation size and action kind/shape of one environment."""

    obs_dim: int
    discrete: bool
    action_dim: int = 1
    n_actions: int = 0          # discrete only
    lo: np.ndarray | None = None  # continuous only
    hi: np.ndarray | None = None

    def __post_init__(self):
        if not self.discrete:
            self.lo = np.asarray(self.lo, dtype=np.float64)
            self.hi = np.asarray(self.hi, dtype=np.float64)
            if not np.all(self.lo < self.hi):
                raise ValueError("continuous bounds require lo < hi element-wise")


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminal: bool
    truncated: bool

    def __post_init__(self):
        if self.terminal and self.truncated:
            raise ValueError("terminal and truncated are mutually exclusive")

    @property
    def ended(self):
        return self.terminal or self.truncated


def rescale_action(a_norm, spaces: Spaces):
    """Affine map from [-1, 1]^d to [lo, hi], clipped to the bounds."""
    if spaces.discrete:
        raise ValueError("rescale_action applies to continuous spaces only")
    a = np.asarray(a_norm, dtype=np.float64)
    lo, hi = spaces.lo, spaces.hi
    scaled = lo + (a + 1.0) * 0.5 * (hi - lo)
    return np.clip(scaled, lo, hi)


@dataclass
class TransformSpec:
    kind: str = "none"
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    @classmethod
    def from_params(cls, params):
        kind = params.get("obs_transform.kind", "none")
        if kind == "none":
            return cls("none")
        lo = np.asarray(params.get("obs_transform.lo"), dtype=np.float64)
        hi = np.asarray(params.get("obs_transform.hi"), dtype=np.float64)
        return cls(kind, lo, hi)


def transform_obs(obs, spec: TransformSpec):
    """Apply the configured element-wise observation transform."""
    obs = np.asarray(obs, dtype=np.float64)
    if spec.kind == "none":
        return obs
    if spec.lo.shape != obs.shape or spec.hi.shape != obs.shape:
        raise ValueError("transform bounds do not match observation shape")
    if spec.kind == "scale":
        return 2.0 * (obs - spec.lo) / (spec.hi - spec.lo) - 1.0
    if spec.kind == "clip":
        return np.clip(obs, spec.lo, spec.hi)
    raise ValueError(f"unknown transform kind {spec.kind!r}")


class CartPole:
    """Pole balancing on a cart; Euler dt=0.02, fail beyond 2.4 m or 12 deg."""

    GRAVITY = 9.8
    CART_MASS = 1.0
    POLE_MASS = 0.1
    HALF_LENGTH = 0.5
    FORCE = 10.0
    DT = 0.02
    X_LIMIT = 2.4
    THETA_LIMIT = 12.0 * np.pi / 180.0

    max_episode_steps = 500
    separable = False

    def __init__(self, rng):
        self.rng = rng
        self.spaces = Spaces(obs_dim=4, discrete=True, n_actions=2)
        self.state = np.zeros(4)
        self.steps = 0

    def reset(self):
        self.state = self.rng.uniform(-0.05, 0.05, size=4)
        self.steps = 0
        return self.state.copy()

    def step(self, action):
        action = int(np.asarray(action).reshape(-1)[0])
        if action not in (0, 1):
            raise ValueError(f"action {action} outside discrete(2)")
        x, x_dot, theta, theta_dot = self.state
        force = self.FORCE if action == 1 else -self.FORCE
        total_mass = self.CART_MASS + self.POLE_MASS
        pole_ml = self.POLE_MASS * self.HALF_LENGTH
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        temp = (force + pole_ml * theta_dot ** 2 * sin_t) / total_mass
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.HALF_LENGTH * (4.0 / 3.0 - self.POLE_MASS * cos_t ** 2 / total_mass))
        x_acc = temp - pole_ml * theta_acc * cos_t / total_mass
        x += self.DT * x_dot
        x_dot += self.DT * x_acc
        theta += self.DT * theta_dot
        theta_dot += self.DT * theta_acc
        self.state = np.array([x, x_dot, theta, theta_dot])
        self.steps += 1
        terminal = bool(abs(x) > self.X_LIMIT or abs(theta) > self.THETA_LIMIT)
        truncated = not terminal and self.steps >= self.max_episode_steps
        return StepResult(self.state.copy(), 1.0, terminal, truncated)


class Pendulum:
    """Torque-controlled pendulum swing-up; obs (cos, sin, angular velocity)."""

    GRAVITY = 10.0
    MASS = 1.0
    LENGTH = 1.0
    DT = 0.05
    MAX_TORQUE = 2.0
    MAX_SPEED = 8.0

    max_episode_steps = 200
    separable = False

    def __init__(self, rng):
        self.rng = rng
        self.spaces = Spaces(obs_dim=3, discrete=False, action_dim=1,
                             lo=[-self.MAX_TORQUE], hi=[self.MAX_TORQUE])
        self.theta = 0.0
        self.theta_dot = 0.0
        self.steps = 0

    def reset(self):
        self.theta = self.rng.uniform(-np.pi, np.pi)
        self.theta_dot = self.rng.uniform(-1.0, 1.0)
        self.steps = 0
        return self._obs()

    def _obs(self):
        return np.array([np.cos(self.theta), np.sin(self.theta), self.theta_dot])

    def step(self, action):
        u = float(np.clip(np.asarray(action).reshape(-1)[0],
                          -self.MAX_TORQUE, self.MAX_TORQUE))
        theta_n = _angle_normalize(self.theta)
        cost = theta_n ** 2 + 0.1 * self.theta_dot ** 2 + 0.001 * u ** 2
        g, m, length, dt = self.GRAVITY, self.MASS, self.LENGTH, self.DT
        acc = 3.0 * g / (2.0 * length) * np.sin(self.theta) + 3.0 * u / (m * length ** 2)
        self.theta_dot = np.clip(self.theta_dot + acc * dt,
                                 -self.MAX_SPEED, self.MAX_SPEED)
        self.theta = self.theta + self.theta_dot * dt
        self.steps += 1
        truncated = self.steps >= self.max_episode_steps
        return StepResult(self._obs(), -float(cost), False, truncated)


def _angle_normalize(theta):
    return ((theta + np.pi) % (2.0 * np.pi)) - np.pi


class Lorenz:
    """Chaotic three-variable flow; control is added to the second equation.

    Reward is +1 per step while x < 0 and -1 otherwise, so steering the
    trajectory onto the negative-x lobe is the control objective.
    """

    SIGMA = 10.0
    RHO = 28.0
    BETA = 8.0 / 3.0
    DT = 0.01
    SUBSTEPS = 5
    MAX_CONTROL = 5.0
    BURN_IN = 200

    max_episode_steps = 400
    separable = False

    def __init__(self, rng):
        self.rng = rng
        self.spaces = Spaces(obs_dim=3, discrete=False, action_dim=1,
                             lo=[-self.MAX_CONTROL], hi=[self.MAX_CONTROL])
        self.state = np.zeros(3)
        self.steps = 0

    def reset(self):
        # land on the attractor: random start, then uncontrolled burn-in
        self.state = np.array([
            self.rng.uniform(-10.0, 10.0),
            self.rng.uniform(-10.0, 10.0),
            self.rng.uniform(15.0, 35.0),
        ])
        for _ in range(self.BURN_IN):
            self.state = _rk4(self.state, 0.0, self.DT)
        self.steps = 0
        return self.state.copy()

    def step(self, action):
        u = float(np.clip(np.asarray(action).reshape(-1)[0],
                          -self.MAX_CONTROL, self.MAX_CONTROL))
        for _ in range(self.SUBSTEPS):
            self.state = _rk4(self.state, u, self.DT)
        self.steps += 1
        reward = 1.0 if self.state[0] < 0.0 else -1.0
        truncated = self.steps >= self.max_episode_steps
        return StepResult(self.state.copy(), reward, False, truncated)


def _lorenz_deriv(s, u):
    x, y, z = s
    return np.array([
        Lorenz.SIGMA * (y - x),
        x * (Lorenz.RHO - z) - y + u,
        x * y - Lorenz.BETA * z,
    ])


def _rk4(s, u, dt):
    k1 = _lorenz_deriv(s, u)
    k2 = _lorenz_deriv(s + 0.5 * dt * k1, u)
    k3 = _lorenz_deriv(s + 0.5 * dt * k2, u)
    k4 = _lorenz_deriv(s + dt * k3, u)
    return s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class Chain:
    """Ring of leaky channels with per-channel actuation and drifting load.

    Each channel relaxes toward its neighbours' mean, is pushed by a
    slow sinusoidal disturbance with per-episode random phases, and is
    directly actuated.  The global observation is the concatenation of
    the per-actuator local windows, so the problem decomposes into
    n_act one-action subproblems sharing one agent.
    """

    DT = 0.1
    COUPLING = 0.25
    DISTURB_AMP = 0.5
    DISTURB_FREQ = 1.0
    WINDOW = 3

    max_episode_steps = 200
    separable = True

    def __init__(self, rng, n_act=5):
        if n_act < 1:
            raise ValueError("n_act must be >= 1")
        self.rng = rng
        self.n_act = int(n_act)
        self.spaces = Spaces(obs_dim=self.n_act * self.WINDOW, discrete=False,
                             action_dim=self.n_act,
                             lo=[-1.0] * self.n_act, hi=[1.0] * self.n_act)
        self.local_spaces = Spaces(obs_dim=self.WINDOW, discrete=False,
                                   action_dim=1, lo=[-1.0], hi=[1.0])
        self.x = np.zeros(self.n_act)
        self.phases = np.zeros(self.n_act)
        self.t = 0.0
        self.steps = 0

    def reset(self):
        self.x = self.rng.uniform(-0.5, 0.5, size=self.n_act)
        self.phases = self.rng.uniform(0.0, 2.0 * np.pi, size=self.n_act)
        self.t = 0.0
        self.steps = 0
        return self._obs()

    def local_observations(self):
        """One window (left, self, right) per actuator, ring-wrapped."""
        left = np.roll(self.x, 1)
        right = np.roll(self.x, -1)
        return np.stack([left, self.x, right], axis=1)

    def _obs(self):
        return self.local_observations().reshape(-1)

    def step(self, action):
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(-1), -1.0, 1.0)
        if a.size != self.n_act:
            raise ValueError(f"action dim {a.size}, expected {self.n_act}")
        disturb = self.DISTURB_AMP * np.sin(self.DISTURB_FREQ * self.t + self.phases)
        neighbors = self.COUPLING * (np.roll(self.x, 1) + np.roll(self.x, -1))
        self.x = self.x + self.DT * (-self.x + neighbors + a + disturb)
        self.t += self.DT
        self.steps += 1
        reward = -float(np.mean(np.abs(self.x)))
        truncated = self.steps >= self.max_episode_steps
        return StepResult(self._obs(), reward, False, truncated)


class LiftedObs:
    """Wraps an env, replacing its observation with a fixed linear lift
    of the original signal plus independent low-amplitude noise channels."""

    def __init__(self, env, signal_dim, noise_dim, noise_std, map_seed, rng):
        self.env = env
        self.rng = rng
        self.noise_dim = int(noise_dim)
        self.noise_std = float(noise_std)
        map_rng = np.random.default_rng(map_seed)  # shared across workers
        self._map = map_rng.standard_normal((int(signal_dim), env.spaces.obs_dim))
        self.spaces = Spaces(obs_dim=int(signal_dim) + self.noise_dim,
                             discrete=env.spaces.discrete,
                             action_dim=env.spaces.action_dim,
                             n_actions=env.spaces.n_actions,
                             lo=env.spaces.lo, hi=env.spaces.hi)
        self.max_episode_steps = env.max_episode_steps
        self.separable = False

    def _lift(self, obs):
        noise = self.rng.standard_normal(self.noise_dim) * self.noise_std
        return np.concatenate([self._map @ obs, noise])

    def reset(self):
        return self._lift(self.env.reset())

    def step(self, action):
        r = self.env.step(action)
        return StepResult(self._lift(r.obs), r.reward, r.terminal, r.truncated)


class TransformedObs:
    """Applies the configured observation transform on top of an env."""

    def __init__(self, env, spec: TransformSpec):
        self.env = env
        self.spec = spec
        self.spaces = env.spaces
        self.max_episode_steps = env.max_episode_steps
        self.separable = getattr(env, "separable", False)

    def reset(self):
        return transform_obs(self.env.reset(), self.spec)

    def step(self, action):
        r = self.env.step(action)
        return StepResult(transform_obs(r.obs, self.spec), r.reward,
                          r.terminal, r.truncated)

    def __getattr__(self, name):
        return getattr(self.env, name)


def _extra(params):
    extra = params.get("extra", None)
    return extra.to_dict() if extra is not None else {}


def make_cartpole(params, context):
    return _wrap(CartPole(context["rng"]), params, context)


def make_pendulum(params, context):
    return _wrap(Pendulum(context["rng"]), params, context)


def make_lorenz(params, context):
    return _wrap(Lorenz(context["rng"]), params, context)


def make_chain(params, context):
    extra = _extra(params)
    return _wrap(Chain(context["rng"], n_act=extra.get("n_act", 5)),
                 params, context)


def _wrap(env, params, context):
    extra = _extra(params)
    if "lift_signal_dim" in extra:
        env = LiftedObs(env,
                        signal_dim=extra["lift_signal_dim"],
                        noise_dim=extra.get("lift_noise_dim", 0),
                        noise_std=extra.get("lift_noise_std", 0.01),
                        map_seed=extra.get("lift_map_seed", 0),
                        rng=context["rng"])
    spec = TransformSpec.from_params(params)
    if spec.kind != "none":
        env = TransformedObs(env, spec)
    return env


class WorkerPool:
    """Synchronous pool of environment workers with auto-reset.

    Results always come back in worker-index order; each worker owns its
    environment and Generator exclusively, so the transition stream is
    independent of scheduling even in parallel mode.
    """

    def __init__(self, envs, parallel=False):
        self.envs = list(envs)
        self.n = len(self.envs)
        self.spaces = self.envs[0].spaces
        self.max_episode_steps = self.envs[0].max_episode_steps
        self._returns = np.zeros(self.n)
        self._steps = np.zeros(self.n, dtype=np.int64)
        self._pool = ThreadPoolExecutor(max_workers=self.n) if parallel else None

    def reset(self):
        obs = [env.reset() for env in self.envs]
        self._returns[:] = 0.0
        self._steps[:] = 0
        return np.stack(obs)

    def step(self, actions):
        """Step every worker once.

        Returns (results, next_obs, finished): per-worker StepResults, the
        observations to act on next (fresh reset observations where an
        episode ended), and (worker, episode_score) pairs for episodes
        completed this step, in worker-index order.
        """
        if len(actions) != self.n:
            raise ValueError(f"need {self.n} action rows, got {len(actions)}")
        if self._pool is not None:
            results = list(self._pool.map(
                lambda pair: pair[0].step(pair[1]), zip(self.envs, actions)))
        else:
            results = [env.step(a) for env, a in zip(self.envs, actions)]
        next_obs = np.empty((self.n, self.spaces.obs_dim))
        finished = []
        for i, r in enumerate(results):
            self._returns[i] += r.reward
            self._steps[i] += 1
            if r.ended:
                finished.append((i, float(self._returns[i])))
                self._returns[i] = 0.0
                self._steps[i] = 0
                next_obs[i] = self.envs[i].reset()
            else:
                next_obs[i] = r.obs
        return results, next_obs, finished

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
