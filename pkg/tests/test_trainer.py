import numpy as np
import pytest

from deskrl.config import ParamTree, SchemaError, validate
from deskrl.envs import Spaces, StepResult, WorkerPool
from deskrl.trainer import (Counter, OnPolicyTrainer, Recorder, ScoreRecord,
                            average_runs, report_read, report_write, train)


def make_config(agent_type="ppo", trainer_type="on_policy", env="pendulum",
                out_dir=".", **sections):
    data = {
        "agent": {"type": agent_type,
                  "networks": {"policy": {"layers": [16], "activation": "tanh"},
                               "value": {"layers": [16], "activation": "tanh"}}},
        "trainer": {"type": trainer_type},
        "environment": {"type": env},
        "run": {"seed": 0, "n_transitions": 1000, "output_dir": str(out_dir)},
    }
    for key, value in sections.items():
        for sub, val in value.items():
            data.setdefault(key, {})[sub] = val
    return validate(ParamTree(data), name="t")


def data_rows(path, mask_walltime=True):
    """Score-file rows with the walltime column dropped (declared
    non-deterministic; it is the one column excluded from comparisons)."""
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            cols = line.split()
            rows.append(" ".join(cols[:3] if mask_walltime else cols))
    return "\n".join(rows)


class TestReportFile:
    def records(self):
        return [ScoreRecord(10, 0, 1.25, 0.5), ScoreRecord(20, 1, -3.5e-4, 0.9)]

    def test_round_trip_idempotent(self, tmp_path):
        path = tmp_path / "scores.dat"
        report_write(self.records(), path, "cafebabe")
        again = report_read(path)
        path2 = tmp_path / "scores2.dat"
        report_write(again, path2, "cafebabe")
        assert path.read_text() == path2.read_text()

    def test_empty_records_header_only(self, tmp_path):
        path = tmp_path / "empty.dat"
        report_write([], path, "h")
        text = path.read_text()
        assert all(line.startswith("#") for line in text.strip().splitlines())
        assert report_read(path) == []

    def test_header_carries_config_hash(self, tmp_path):
        path = tmp_path / "scores.dat"
        report_write(self.records(), path, "deadbeef1234")
        assert "# config deadbeef1234" in path.read_text()

    def test_single_env_transitions_strictly_increase(self, tmp_path):
        cfg = make_config(out_dir=tmp_path,
                          run={"n_transitions": 800, "seed": 3})
        result = train(cfg)
        records = report_read(result.score_path)
        ts = [r.transitions for r in records]
        assert len(ts) >= 2
        assert all(b > a for a, b in zip(ts, ts[1:]))


class TestAverageRuns:
    def write_run(self, tmp_path, name, points):
        path = tmp_path / name
        report_write([ScoreRecord(t, i, s, 0.0)
                      for i, (t, s) in enumerate(points)], path)
        return str(path)

    def test_single_run_window_one_is_raw(self, tmp_path):
        pts = [(t, 2.0 * t) for t in range(0, 101, 10)]
        f = self.write_run(tmp_path, "a.dat", pts)
        curve = average_runs([f], grid_points=11, window=1)
        assert np.allclose(curve.mean, 2.0 * curve.grid)
        assert np.allclose(curve.lower, curve.mean)
        assert np.allclose(curve.upper, curve.mean)

    def test_two_constant_runs_band(self, tmp_path):
        a = self.write_run(tmp_path, "a.dat", [(t, 1.0) for t in (0, 50, 100)])
        b = self.write_run(tmp_path, "b.dat", [(t, 3.0) for t in (0, 50, 100)])
        curve = average_runs([a, b], grid_points=5, window=3)
        assert np.allclose(curve.mean, 2.0)
        assert np.allclose(curve.lower, 1.0)   # population std = 1
        assert np.allclose(curve.upper, 3.0)
        assert np.allclose(curve.lo, 1.0) and np.allclose(curve.hi, 3.0)

    def test_grid_clamps_to_overlap(self, tmp_path):
        # interpolation oracle: both runs linear, so interp is exact
        a = self.write_run(tmp_path, "a.dat",
                           [(t, 2.0 * t) for t in range(0, 101, 10)])
        b = self.write_run(tmp_path, "b.dat",
                           [(t, 2.0 * t) for t in range(5, 96, 10)])
        curve = average_runs([a, b], grid_points=10, window=1)
        assert curve.grid[0] == 5 and curve.grid[-1] == 95
        assert np.allclose(curve.mean, 2.0 * curve.grid)
        assert np.allclose(curve.upper - curve.lower, 0.0)

    def test_output_file_column_layout(self, tmp_path):
        a = self.write_run(tmp_path, "a.dat", [(0, 1.0), (10, 1.0)])
        b = self.write_run(tmp_path, "b.dat", [(0, 3.0), (10, 3.0)])
        out = tmp_path / "avg.dat"
        average_runs([a, b], grid_points=3, window=1, out_path=str(out))
        for line in out.read_text().strip().splitlines():
            cols = line.split()
            assert len(cols) == 8
            assert int(cols[1]) == 2                    # n_runs
            assert float(cols[5]) == pytest.approx(2.0)  # mean at index 5
            assert float(cols[6]) == pytest.approx(1.0)  # mean - std
            assert float(cols[7]) == pytest.approx(3.0)  # mean + std
            assert float(cols[6]) <= float(cols[5]) <= float(cols[7])

    def test_smoothing_window(self, tmp_path):
        pts = [(t, float(t)) for t in range(11)]
        f = self.write_run(tmp_path, "a.dat", pts)
        curve = average_runs([f], grid_points=11, window=3)
        # trailing mean of 0..10 with width 3: first point raw, then averaged
        assert curve.mean[0] == 0.0
        assert curve.mean[1] == pytest.approx(0.5)
        assert curve.mean[10] == pytest.approx(9.0)

    def test_unparseable_file(self, tmp_path):
        bad = tmp_path / "bad.dat"
        bad.write_text("# only a header\n")
        with pytest.raises(ValueError):
            average_runs([str(bad)])

    def test_requires_files(self):
        with pytest.raises(ValueError):
            average_runs([])


class _ZeroRewardEnv:
    """Stub: 2-dim obs, 1-dim continuous action, reward 0, episodes of 10."""

    max_episode_steps = 10
    separable = False

    def __init__(self, rng):
        self.rng = rng
        self.spaces = Spaces(obs_dim=2, discrete=False, action_dim=1,
                             lo=[-1.0], hi=[1.0])
        self.steps = 0

    def reset(self):
        self.steps = 0
        return self.rng.standard_normal(2)

    def step(self, action):
        self.steps += 1
        return StepResult(self.rng.standard_normal(2), 0.0, False,
                          self.steps >= self.max_episode_steps)


class TestTrain:
    def test_zero_budget_writes_empty_file(self, tmp_path):
        cfg = make_config(out_dir=tmp_path, run={"n_transitions": 0})
        result = train(cfg)
        assert report_read(result.score_path) == []
        assert result.counter.updates == 0
        assert result.counter.transitions == 0

    def test_same_seed_identical_score_files(self, tmp_path):
        cfg = make_config(out_dir=tmp_path / "a",
                          run={"n_transitions": 1200, "seed": 5})
        cfg2 = make_config(out_dir=tmp_path / "b",
                           run={"n_transitions": 1200, "seed": 5})
        r1, r2 = train(cfg), train(cfg2)
        assert data_rows(r1.score_path) == data_rows(r2.score_path)

    def test_worker_scheduling_invariance(self, tmp_path):
        base = dict(run={"n_transitions": 1600, "seed": 7},
                    environment={"n_envs": 4},
                    trainer={"update_size": 2})
        cfg_seq = make_config(out_dir=tmp_path / "seq", **base)
        cfg_par = make_config(out_dir=tmp_path / "par", **base,)
        cfg_par.environment._data["parallel_workers"] = True
        r_seq, r_par = train(cfg_seq), train(cfg_par)
        assert data_rows(r_seq.score_path) == data_rows(r_par.score_path)

    def test_separable_needs_local_observations(self, tmp_path):
        cfg = make_config(trainer_type="separable", env="pendulum",
                          out_dir=tmp_path)
        with pytest.raises(SchemaError):
            train(cfg)

    def test_separable_single_actuator_matches_on_policy(self, tmp_path):
        shared = dict(run={"n_transitions": 1200, "seed": 11},
                      environment={"extra": {"n_act": 1}},
                      trainer={"update_size": 2})
        cfg_on = make_config(env="chain", out_dir=tmp_path / "on", **shared)
        cfg_sep = make_config(trainer_type="separable", env="chain",
                              out_dir=tmp_path / "sep", **shared)
        r_on, r_sep = train(cfg_on), train(cfg_sep)
        assert data_rows(r_on.score_path) == data_rows(r_sep.score_path)

    def test_bootstrap_update_consumes_fixed_transitions(self, tmp_path):
        cfg = make_config(out_dir=tmp_path,
                          run={"n_transitions": 4000, "seed": 1},
                          environment={"n_envs": 16},
                          trainer={"update_size": 4, "bootstrap": True})
        result = train(cfg)
        # pendulum episodes are 200 steps: every update consumes 4 * 200
        assert result.counter.updates == 4000 // 800
        assert result.counter.transitions == 4000

    def test_off_policy_update_cadence(self, tmp_path):
        cfg = make_config("dqn", "off_policy", "cartpole", out_dir=tmp_path,
                          run={"n_transitions": 3000, "seed": 2},
                          trainer={"update_every": 4, "batch_size": 32},
                          agent={"warmup": 1000, "buffer_size": 2000})
        result = train(cfg)
        expected = (3000 - 1000) / 4
        assert abs(result.counter.updates - expected) <= 1

    def test_checkpoints_written_per_network(self, tmp_path):
        cfg = make_config("sac", "off_policy", "pendulum", out_dir=tmp_path,
                          run={"n_transitions": 300, "seed": 0},
                          agent={"warmup": 100})
        result = train(cfg)
        assert sorted(result.checkpoints) == ["actor", "q1", "q2"]

    def test_zero_reward_env_all_zero_scores(self):
        # direct loop drive on a stub environment
        cfg = make_config()
        pool = WorkerPool([_ZeroRewardEnv(np.random.default_rng(0))])
        from deskrl.agents import make_ppo
        agent = make_ppo(cfg.agent, {
            "spaces": pool.envs[0].spaces, "n_transitions": 300,
            "rng": np.random.default_rng(1)})
        counter = Counter(budget=300)
        recorder = Recorder()
        loop = OnPolicyTrainer(cfg.trainer)
        loop.run(agent, pool, counter, recorder)
        assert len(recorder.records) == 30
        assert all(r.score == 0.0 for r in recorder.records)
        assert counter.transitions == 300


class TestSrlIntegration:
    def test_warmup_then_zero_updates_before_training(self, tmp_path):
        cfg = make_config(out_dir=tmp_path,
                          run={"n_transitions": 0, "seed": 0},
                          srl={"type": "pca", "latent_dim": 2,
                               "warmup_samples": 300})
        result = train(cfg)
        # budget 0: the whole run is warmup, so zero agent updates
        assert result.counter.updates == 0
        assert result.srl_path is not None

    def test_latent_dim_drives_agent_input(self, tmp_path):
        cfg = make_config(out_dir=tmp_path,
                          run={"n_transitions": 600, "seed": 1},
                          srl={"type": "pca", "latent_dim": 2,
                               "warmup_samples": 250})
        result = train(cfg)
        policy = result.checkpoints["policy"]
        from deskrl import nn
        net = nn.load_weights(policy)
        assert net.sizes[0] == 2

    def test_srl_auto_dim_from_threshold(self, tmp_path):
        # pendulum obs lifted into 8 dims spanning a 3-dim subspace
        cfg = make_config(
            out_dir=tmp_path,
            run={"n_transitions": 400, "seed": 2},
            environment={"extra": {"lift_signal_dim": 8, "lift_noise_dim": 0}},
            srl={"type": "pca", "latent_dim": 0, "warmup_samples": 400,
                 "variance_threshold": 0.999})
        result = train(cfg)
        from deskrl import nn
        net = nn.load_weights(result.checkpoints["policy"])
        assert net.sizes[0] == 3
