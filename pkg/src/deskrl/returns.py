"""Return computations and the update-trigger planner for parallel rollouts.

Terminal episode ends zero the bootstrap tail; truncated ends (timeouts
and update-time cuts) keep it.  The BootstrapPlan decides when an
on-policy update fires: with bootstrapping enabled it fires on a fixed
transition count and marks every unfinished episode for truncation, so
the samples per update stay constant as the number of workers grows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Trajectory:
    """Rewards plus values (length T+1; final entry bootstraps the tail)."""

    rewards: np.ndarray
    values: np.ndarray
    terminal: bool = False
    truncated: bool = False

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.terminal and self.truncated:
            raise ValueError("terminal and truncated are mutually exclusive")
        if len(self.values) != len(self.rewards) + 1:
            raise ValueError("values must have length len(rewards) + 1")


def discounted_returns(traj: Trajectory, gamma):
    """Backward recursion G_t = r_t + gamma * G_{t+1}.

    The tail is 0 for a terminal end and V(s_T) otherwise (bootstrapped).
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    tail = 0.0 if traj.terminal else float(traj.values[-1])
    out = np.empty_like(traj.rewards)
    acc = tail
    for t in range(len(traj.rewards) - 1, -1, -1):
        acc = traj.rewards[t] + gamma * acc
        out[t] = acc
    return out

def gae(traj: Trajectory, gamma, lam):
    """Generalized advantage estimate A_t = sum_k (gamma*lam)^k delta_{t+k}.

    delta uses the stored behavior-time values; only a terminal end zeroes
    the final bootstrap term.
    """
    r = traj.rewards
    v = traj.values
    T = len(r)
    delta = r + gamma * v[1:] - v[:-1]
    if traj.terminal and T > 0:
        delta[T - 1] = r[T - 1] - v[T - 1]
    adv = np.empty(T, dtype=np.float64)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        acc = delta[t] + gamma * lam * acc
        adv[t] = acc
    return adv


def td_target(reward, terminal, gamma, next_value):
    """One-step target r + gamma * (1 - terminal) * V'; truncation still bootstraps."""
    return float(reward) + gamma * float(next_value) * (0.0 if terminal else 1.0)


def normalize_advantages(adv, eps=1e-8):
    """Shift/scale to mean 0, std 1 (population std) over the batch."""
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + eps)


@dataclass
class PlanDecision:
    update_now: bool
    truncate: tuple = ()  # env indices whose running episode is cut and bootstrapped


@dataclass
class BootstrapPlan:
    """Decides when enough rollout data is banked for one on-policy update.

    m: trajectories per update; n_envs: parallel workers; episode_length:
    nominal steps per episode, so one update consumes m * episode_length
    transitions when bootstrapping is on.
    """

    m: int
    n_envs: int
    episode_length: int
    bootstrap: bool = True
    transitions: int = field(default=0, init=False)
    episodes_done: int = field(default=0, init=False)
    _running: np.ndarray = field(init=False)

    def __post_init__(self):
        self._running = np.zeros(self.n_envs, dtype=np.int64)

    def step(self, ended) -> PlanDecision:
        """Account one synchronized pool step; `ended` is one flag per env."""
        ended = np.asarray(ended, dtype=bool)
        if ended.shape != (self.n_envs,):
            raise ValueError("need one episode-end flag per environment")
        self.transitions += self.n_envs
        self._running += 1
        self.episodes_done += int(ended.sum())
        self._running[ended] = 0
        if self.bootstrap:
            if self.transitions >= self.m * self.episode_length:
                cut = tuple(int(i) for i in np.nonzero(self._running > 0)[0])
                self._reset()
                return PlanDecision(True, cut)
        else:
            if self.episodes_done >= self.m:
                # partial episodes carry over to the next cycle untouched
                self._reset(keep_running=True)
                return PlanDecision(True, ())
        return PlanDecision(False, ())

    def _reset(self, keep_running=False):
        self.transitions = 0
        self.episodes_done = 0
        if not keep_running:
            self._running[:] = 0
