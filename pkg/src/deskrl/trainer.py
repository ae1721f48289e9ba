"""Training orchestration: the three loops, score reporting, run averaging.

train() wires a validated RunConfig into environments, agent, optional
representation model and the matching loop, then writes one score file
and one weight checkpoint per network.  Everything downstream of the
seed is deterministic, including with parallel workers.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, replace

import numpy as np

from .buffer import FieldSpec, RingBuffer, StagingBuffer
from .config import RunConfig, SchemaError, default_factories
from .envs import WorkerPool, rescale_action
from .returns import BootstrapPlan, Trajectory, gae
from .srl import SrlState


@dataclass
class Counter:
    """Monotone run counters; the loop exits at the transition budget."""

    budget: int
    transitions: int = 0
    episodes: int = 0
    updates: int = 0

    @property
    def done(self):
        return self.transitions >= self.budget


@dataclass
class ScoreRecord:
    transitions: int
    episode: int
    score: float
    walltime_s: float


class Recorder:
    """Collects per-episode scores in completion order."""

    def __init__(self):
        self.records = []
        self._start = time.perf_counter()

    def add(self, transitions, score):
        self.records.append(ScoreRecord(
            transitions=int(transitions),
            episode=len(self.records),
            score=float(score),
            walltime_s=time.perf_counter() - self._start,
        ))


def report_write(records, path, config_hash=""):
    """Write one whitespace-separated row per episode under a '#' header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# deskrl score file v1\n")
        fh.write(f"# config {config_hash}\n")
        fh.write("# columns: transitions episode score walltime_s\n")
        for r in records:
            fh.write("%d %d %.6e %.3f\n"
                     % (r.transitions, r.episode, r.score, r.walltime_s))


def report_read(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split()
            records.append(ScoreRecord(int(cols[0]), int(cols[1]),
                                       float(cols[2]), float(cols[3])))
    return records


@dataclass
class AveragedCurve:
    """Cross-run statistics on a common transition grid."""

    grid: np.ndarray
    n_runs: int
    lo: np.ndarray       # min over runs
    hi: np.ndarray       # max over runs
    median: np.ndarray
    mean: np.ndarray     # smoothed mean, the headline curve
    lower: np.ndarray    # mean - std
    upper: np.ndarray    # mean + std

    def final_score(self):
        return float(self.mean[-1])


def average_runs(files, grid_points=200, window=20, out_path=None):
    """Interpolate runs onto a shared grid, smooth, and band with mean+-std.

    Output columns 0-7: grid transitions, n_runs, min, max, median,
    smoothed mean, mean-std, mean+std (population std).
    """
    if not files:
        raise ValueError("need at least one score file")
    runs = []
    for path in files:
        records = report_read(path)
        if not records:
            raise ValueError(f"score file {path} holds no data rows")
        t = np.array([r.transitions for r in records], dtype=np.float64)
        s = np.array([r.score for r in records], dtype=np.float64)
        keep = np.concatenate([t[1:] != t[:-1], [True]])  # ties: keep last
        runs.append((t[keep], s[keep]))
    lo_t = max(t[0] for t, _ in runs)
    hi_t = min(t[-1] for t, _ in runs)
    if hi_t < lo_t:
        raise ValueError("runs share no overlapping transition range")
    grid = np.unique(np.rint(np.linspace(lo_t, hi_t, grid_points)).astype(np.int64))
    curves = np.empty((len(runs), grid.size))
    for i, (t, s) in enumerate(runs):
        vals = np.interp(grid, t, s)
        curves[i] = _trailing_mean(vals, window)
    mean = curves.mean(axis=0)
    std = curves.std(axis=0)  # population divisor
    curve = AveragedCurve(
        grid=grid, n_runs=len(runs),
        lo=curves.min(axis=0), hi=curves.max(axis=0),
        median=np.median(curves, axis=0),
        mean=mean, lower=mean - std, upper=mean + std,
    )
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            for j in range(grid.size):
                fh.write("%d %d %.6e %.6e %.6e %.6e %.6e %.6e\n"
                         % (curve.grid[j], curve.n_runs, curve.lo[j],
                            curve.hi[j], curve.median[j], curve.mean[j],
                            curve.lower[j], curve.upper[j]))
    return curve


def _trailing_mean(vals, window):
    if window <= 1:
        return vals.copy()
    out = np.empty_like(vals)
    csum = np.concatenate([[0.0], np.cumsum(vals)])
    for i in range(vals.size):
        start = max(0, i - window + 1)
        out[i] = (csum[i + 1] - csum[start]) / (i + 1 - start)
    return out


# ---------------------------------------------------------------------------
# Rollout bookkeeping shared by the on-policy loops.

class _SegmentTracker:
    """Per-slot episode segments: closed (rows, tail value) plus an open tail."""

    def __init__(self, n_slots):
        self.closed = [[] for _ in range(n_slots)]
        self.open_rows = [0] * n_slots

    def step(self, slot):
        self.open_rows[slot] += 1

    def close(self, slot, tail_value, terminal):
        self.closed[slot].append((self.open_rows[slot], float(tail_value), terminal))
        self.open_rows[slot] = 0


def _flush_rollout(staging, tracker, ring, agent, cut_tails, gae_lambda):
    """Move finished (and cut) segments into the ring with advantages attached.

    cut_tails maps slot -> bootstrap value for a segment truncated at
    update time; slots not present keep their open rows staged.
    """
    gamma = agent.gamma
    for slot in range(staging.n_envs):
        segments = list(tracker.closed[slot])
        tracker.closed[slot] = []
        if slot in cut_tails and tracker.open_rows[slot] > 0:
            segments.append((tracker.open_rows[slot], cut_tails[slot], False))
            tracker.open_rows[slot] = 0
        for n_rows, tail, terminal in segments:
            if n_rows == 0:
                continue
            rows = staging.take(slot, n_rows)
            values = np.append(rows["value"][:, 0], tail)
            traj = Trajectory(rows["reward"][:, 0], values,
                              terminal=terminal, truncated=not terminal)
            adv = gae(traj, gamma, gae_lambda)
            rows["advantage"] = adv[:, None]
            rows["ret"] = (adv + values[:-1])[:, None]
            ring.insert(rows)


def _rollout_fields(obs_dim, action_dim):
    return [
        FieldSpec("obs", obs_dim), FieldSpec("action", action_dim),
        FieldSpec("reward", 1), FieldSpec("terminal", 1),
        FieldSpec("truncated", 1), FieldSpec("value", 1), FieldSpec("logp", 1),
    ]


def _ring_fields(obs_dim, action_dim):
    return _rollout_fields(obs_dim, action_dim) + [
        FieldSpec("advantage", 1), FieldSpec("ret", 1),
    ]


class OnPolicyTrainer:
    """Synchronous rollout collection with planner-driven clipped updates."""

    kind = "on_policy"

    def __init__(self, params, context=None):
        self.m = int(params.get("update_size"))
        self.n_epochs = int(params.get("n_epochs"))
        self.batch_size = int(params.get("batch_size"))
        self.bootstrap = bool(params.get("bootstrap"))

    def run(self, agent, pool, counter, recorder, obs_map=None, warmup_rng=None):
        if not agent.on_policy:
            raise SchemaError("on_policy trainer requires an on-policy agent")
        n = pool.n
        length = pool.max_episode_steps
        fields = _rollout_fields(agent.spaces.obs_dim, agent.action_dim)
        staging = StagingBuffer(n, fields)
        ring = RingBuffer((self.m + n) * length,
                          _ring_fields(agent.spaces.obs_dim, agent.action_dim))
        plan = BootstrapPlan(self.m, n, length, self.bootstrap)
        tracker = _SegmentTracker(n)
        obs = pool.reset()
        z = obs_map(obs) if obs_map else obs
        has_stale = False  # carryover rows predate the last policy update
        while not counter.done:
            actions, aux = agent.act(z)
            env_actions = _to_env_actions(actions, pool.spaces)
            results, next_obs, finished = pool.step(env_actions)
            counter.transitions += n
            ended = np.zeros(n, dtype=bool)
            for i, r in enumerate(results):
                staging.store(i, {
                    "obs": z[i], "action": actions[i],
                    "reward": r.reward, "terminal": float(r.terminal),
                    "truncated": float(r.truncated),
                    "value": aux["value"][i], "logp": aux["logp"][i],
                })
                tracker.step(i)
                if r.ended:
                    ended[i] = True
                    tail = 0.0
                    if r.truncated:
                        zf = _map_row(r.obs, obs_map)
                        tail = agent.value(zf[None, :])[0]
                    tracker.close(i, tail, r.terminal)
            for i, score in finished:
                counter.episodes += 1
                recorder.add(counter.transitions, score)
            z = obs_map(next_obs) if obs_map else next_obs
            decision = plan.step(ended)
            if decision.update_now:
                cut_tails = {}
                for i in decision.truncate:
                    cut_tails[i] = agent.value(z[i][None, :])[0]
                _flush_rollout(staging, tracker, ring, agent, cut_tails,
                               agent.gae_lambda)
                batch = ring.drain_all()
                if batch["obs"].shape[0]:
                    agent.update(batch, self.n_epochs, self.batch_size,
                                 check_ratio=not has_stale)
                    counter.updates += 1
                    has_stale = staging.total() > 0


class OffPolicyTrainer:
    """Step-wise replay training after a uniform-random warmup."""

    kind = "off_policy"

    def __init__(self, params, context=None):
        self.batch_size = int(params.get("batch_size"))
        self.update_every = int(params.get("update_every"))

    def run(self, agent, pool, counter, recorder, obs_map=None, warmup_rng=None):
        if agent.on_policy:
            raise SchemaError("off_policy trainer requires an off-policy agent")
        n = pool.n
        d, da = agent.spaces.obs_dim, agent.action_dim
        fields = [
            FieldSpec("obs", d), FieldSpec("action", da),
            FieldSpec("reward", 1), FieldSpec("terminal", 1),
            FieldSpec("truncated", 1), FieldSpec("next_obs", d),
        ]
        staging = StagingBuffer(n, fields)
        ring = RingBuffer(agent.buffer_size, fields)
        obs = pool.reset()
        z = obs_map(obs) if obs_map else obs
        pending = 0
        while not counter.done:
            warm = counter.transitions < agent.warmup
            if warm:
                actions = _random_normalized_actions(agent.spaces, n, warmup_rng)
            else:
                actions, _ = agent.act(z)
            env_actions = _to_env_actions(actions, pool.spaces)
            results, next_obs, finished = pool.step(env_actions)
            counter.transitions += n
            for i, r in enumerate(results):
                staging.store(i, {
                    "obs": z[i], "action": actions[i], "reward": r.reward,
                    "terminal": float(r.terminal),
                    "truncated": float(r.truncated),
                    "next_obs": _map_row(r.obs, obs_map),
                })
            staging.collect(ring)
            for i, score in finished:
                counter.episodes += 1
                recorder.add(counter.transitions, score)
            z = obs_map(next_obs) if obs_map else next_obs
            if not warm:
                pending += n
                while pending >= self.update_every and ring.count >= self.batch_size:
                    agent.update(ring.sample(self.batch_size, agent.rng))
                    counter.updates += 1
                    pending -= self.update_every


class SeparableTrainer:
    """Maps one n_act-action environment onto n_act single-action rollouts
    sharing the agent; every physical step yields n_act transitions."""

    kind = "separable"

    def __init__(self, params, context=None):
        self.m = int(params.get("update_size"))
        self.n_epochs = int(params.get("n_epochs"))
        self.batch_size = int(params.get("batch_size"))
        self.bootstrap = bool(params.get("bootstrap"))

    def run(self, agent, pool, counter, recorder, obs_map=None, warmup_rng=None):
        if not agent.on_policy:
            raise SchemaError("separable trainer requires an on-policy agent")
        if obs_map is not None:
            raise SchemaError("separable trainer does not support srl")
        env = pool.envs[0]
        if not getattr(env, "separable", False):
            raise SchemaError(
                f"environment {type(env).__name__!r} exposes no local observations")
        n_act = env.n_act
        window = agent.spaces.obs_dim
        length = pool.max_episode_steps
        fields = _rollout_fields(window, 1)
        staging = StagingBuffer(n_act, fields)
        ring = RingBuffer((self.m + n_act) * length, _ring_fields(window, 1))
        plan = BootstrapPlan(self.m, n_act, length, self.bootstrap)
        tracker = _SegmentTracker(n_act)
        obs = pool.reset()
        local = obs.reshape(n_act, window)
        has_stale = False
        while not counter.done:
            actions, aux = agent.act(local)
            joint = rescale_action(actions.reshape(-1), env.spaces)
            results, next_obs, finished = pool.step([joint])
            r = results[0]
            counter.transitions += n_act
            final_local = np.asarray(r.obs).reshape(n_act, window)
            for i in range(n_act):
                staging.store(i, {
                    "obs": local[i], "action": actions[i], "reward": r.reward,
                    "terminal": float(r.terminal),
                    "truncated": float(r.truncated),
                    "value": aux["value"][i], "logp": aux["logp"][i],
                })
                tracker.step(i)
                if r.ended:
                    tail = 0.0
                    if r.truncated:
                        tail = agent.value(final_local[i][None, :])[0]
                    tracker.close(i, tail, r.terminal)
            for _, score in finished:
                counter.episodes += 1
                recorder.add(counter.transitions, score)
            local = next_obs.reshape(n_act, window)
            decision = plan.step(np.full(n_act, r.ended, dtype=bool))
            if decision.update_now:
                cut_tails = {i: agent.value(local[i][None, :])[0]
                             for i in decision.truncate}
                _flush_rollout(staging, tracker, ring, agent, cut_tails,
                               agent.gae_lambda)
                batch = ring.drain_all()
                if batch["obs"].shape[0]:
                    agent.update(batch, self.n_epochs, self.batch_size,
                                 check_ratio=not has_stale)
                    counter.updates += 1
                    has_stale = staging.total() > 0


def _map_row(obs, obs_map):
    obs = np.asarray(obs, dtype=np.float64)
    if obs_map is None:
        return obs
    return np.asarray(obs_map(obs[None, :]))[0]


def _to_env_actions(actions, spaces):
    """Turn agent outputs into per-worker environment actions."""
    if spaces.discrete:
        return [int(a) for a in np.asarray(actions).reshape(-1)]
    return list(rescale_action(np.atleast_2d(actions), spaces))


def _random_normalized_actions(spaces, n, rng):
    if spaces.discrete:
        return rng.integers(spaces.n_actions, size=n)
    return rng.uniform(-1.0, 1.0, size=(n, spaces.action_dim))


@dataclass
class RunResult:
    score_path: str
    checkpoints: dict
    counter: Counter
    srl_path: str | None = None


def train(config: RunConfig, factories=None) -> RunResult:
    """Execute one training run; returns the written artifact paths."""
    factories = factories or default_factories()
    seed = int(config.run.get("seed"))
    budget = int(config.run.get("n_transitions"))
    n_envs = int(config.environment.get("n_envs"))
    out_dir = config.run.get("output_dir")
    os.makedirs(out_dir, exist_ok=True)

    root = np.random.SeedSequence(seed)
    agent_ss, srl_ss, warm_ss, worker_root = root.spawn(4)
    worker_seeds = worker_root.spawn(n_envs)

    env_type = config.environment.get("type")
    envs = [factories["environment"].create(
        env_type, config.environment, {"rng": np.random.default_rng(s)})
        for s in worker_seeds]
    pool = WorkerPool(envs, parallel=bool(config.environment.get("parallel_workers")))
    try:
        trainer_type = config.trainer.get("type")
        loop = factories["trainer"].create(trainer_type, config.trainer, None)

        env0 = pool.envs[0]
        if trainer_type == "separable":
            if not getattr(env0, "separable", False):
                raise SchemaError(
                    f"environment {env_type!r} exposes no local observations "
                    "and cannot run under the separable trainer")
            agent_spaces = env0.local_spaces
        else:
            agent_spaces = env0.spaces

        warmup_rng = np.random.default_rng(warm_ss)
        obs_map = None
        srl_model = None
        srl_builder = None
        if config.srl is not None:
            srl_builder = factories["srl"].create(config.srl.get("type"),
                                                  config.srl, None)
            data = _collect_warmup(pool, int(config.srl.get("warmup_samples")),
                                   warmup_rng)
            srl_model = srl_builder.fit(data, rng=np.random.default_rng(srl_ss))
            obs_map = srl_model.transform
            agent_spaces = replace(agent_spaces, obs_dim=int(srl_model.latent_dim))

        agent = factories["agent"].create(
            config.agent.get("type"), config.agent,
            {"spaces": agent_spaces, "n_transitions": budget,
             "rng": np.random.default_rng(agent_ss)})

        counter = Counter(budget=budget)
        recorder = Recorder()
        loop.run(agent, pool, counter, recorder, obs_map=obs_map,
                 warmup_rng=warmup_rng)

        prefix = f"{config.name}_seed{seed}"
        score_path = os.path.join(out_dir, f"{prefix}.dat")
        report_write(recorder.records, score_path, config.hash())
        checkpoints = agent.save(out_dir, prefix)
        srl_path = None
        if srl_model is not None:
            srl_path = os.path.join(out_dir, f"{prefix}_srl.bin")
            srl_builder.save(srl_model, srl_path)
        return RunResult(score_path, checkpoints, counter, srl_path)
    finally:
        pool.close()


def _collect_warmup(pool, n_samples, rng):
    """Random-action rollout gathering raw observations; no agent exists yet."""
    state = SrlState(n_samples)
    obs = pool.reset()
    state.observe(obs)
    while state.phase == "warmup":
        actions = _random_normalized_actions(pool.spaces, pool.n, rng)
        env_actions = _to_env_actions(actions, pool.spaces)
        results, _, _ = pool.step(env_actions)
        state.observe(np.stack([r.obs for r in results]))
    return state.data()
