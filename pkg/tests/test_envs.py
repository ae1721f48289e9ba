import numpy as np
import pytest

from deskrl.config import ParamTree, UnknownKeyError, default_factories
from deskrl.envs import (CartPole, Chain, Lorenz, Pendulum, Spaces,
                         TransformSpec, WorkerPool, rescale_action,
                         transform_obs)


def make(name, extra=None, seed=0):
    factories = default_factories()
    params = ParamTree({"extra": extra or {}, "obs_transform": {"kind": "none"}})
    return factories["environment"].create(
        name, params, {"rng": np.random.default_rng(seed)})


class TestMakeEnv:
    def test_cartpole_declares_spaces(self):
        env = make("cartpole")
        assert env.spaces.obs_dim == 4
        assert env.spaces.discrete and env.spaces.n_actions == 2
        assert env.max_episode_steps == 500

    def test_pendulum_declares_spaces(self):
        env = make("pendulum")
        assert env.spaces.obs_dim == 3
        assert not env.spaces.discrete
        assert np.allclose(env.spaces.lo, [-2]) and np.allclose(env.spaces.hi, [2])
        assert env.max_episode_steps == 200

    def test_chain_parameterized_shape(self):
        env = make("chain", extra={"n_act": 10})
        assert env.spaces.obs_dim == 10 * Chain.WINDOW
        assert env.spaces.action_dim == 10
        assert np.allclose(env.spaces.lo, -1) and np.allclose(env.spaces.hi, 1)

    def test_unknown_name_is_factory_error(self):
        factories = default_factories()
        with pytest.raises(UnknownKeyError):
            factories["environment"].create("mountaincar", ParamTree({}), {})


class TestCartPole:
    def test_upright_survives_first_step(self):
        env = CartPole(np.random.default_rng(0))
        env.reset()
        r = env.step(0)
        assert r.reward == 1.0
        assert not r.terminal

    def test_terminates_outside_limits(self):
        env = CartPole(np.random.default_rng(0))
        env.reset()
        done = False
        for _ in range(500):
            res = env.step(1)  # constant push tips the pole
            if res.terminal:
                done = True
                break
        assert done

    def test_timeout_is_truncation(self):
        env = CartPole(np.random.default_rng(3))
        env.reset()
        env.steps = env.max_episode_steps - 1
        env.state = np.zeros(4)
        r = env.step(0)
        assert r.truncated and not r.terminal

    def test_action_validation(self):
        env = CartPole(np.random.default_rng(0))
        env.reset()
        with pytest.raises(ValueError):
            env.step(2)


class TestPendulum:
    def test_hanging_rest_stays_at_rest(self):
        # independent oracle: integrate the same ODE at dt/50 with rk4
        env = Pendulum(np.random.default_rng(0))
        env.reset()
        env.theta, env.theta_dot = np.pi, 0.0

        def deriv(state):
            th, om = state
            return np.array([om, 3.0 * 10.0 / 2.0 * np.sin(th)])

        fine = np.array([np.pi, 0.0])
        h = env.DT / 50.0
        for _ in range(20 * 50):
            k1 = deriv(fine)
            k2 = deriv(fine + 0.5 * h * k1)
            k3 = deriv(fine + 0.5 * h * k2)
            k4 = deriv(fine + h * k3)
            fine = fine + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        for _ in range(20):
            env.step(0.0)
        assert abs(env.theta - np.pi) < 1e-9   # sin(pi) = 0: equilibrium
        assert abs(fine[0] - np.pi) < 1e-9
        assert abs(env.theta_dot) < 1e-9

    def test_reward_is_negative_cost(self):
        env = Pendulum(np.random.default_rng(1))
        env.reset()
        env.theta, env.theta_dot = 0.5, -0.2
        r = env.step(1.0)
        expected = -(0.5 ** 2 + 0.1 * 0.2 ** 2 + 0.001 * 1.0)
        assert abs(r.reward - expected) < 1e-12

    def test_speed_clamped(self):
        env = Pendulum(np.random.default_rng(2))
        env.reset()
        for _ in range(100):
            env.step(2.0)
        assert abs(env.theta_dot) <= env.MAX_SPEED


class TestLorenz:
    def test_uncontrolled_matches_rk4_oracle(self):
        env = Lorenz(np.random.default_rng(5))
        obs = env.reset()

        def deriv(s):
            x, y, z = s
            return np.array([10.0 * (y - x),
                             x * (28.0 - z) - y,
                             x * y - 8.0 / 3.0 * z])

        def rk4(s, dt):
            k1 = deriv(s)
            k2 = deriv(s + 0.5 * dt * k1)
            k3 = deriv(s + 0.5 * dt * k2)
            k4 = deriv(s + dt * k3)
            return s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

        oracle = obs.copy()
        for _ in range(100):
            r = env.step(0.0)
            for _ in range(env.SUBSTEPS):
                oracle = rk4(oracle, env.DT)
        assert np.max(np.abs(r.obs - oracle)) < 1e-8

    def test_reward_sign_tracks_first_coordinate(self):
        env = Lorenz(np.random.default_rng(6))
        env.reset()
        r = env.step(0.0)
        assert r.reward == (1.0 if r.obs[0] < 0 else -1.0)


class TestChain:
    def test_local_windows_tile_the_global_observation(self):
        env = Chain(np.random.default_rng(7), n_act=6)
        obs = env.reset()
        local = env.local_observations()
        assert local.shape == (6, 3)
        assert np.array_equal(local.reshape(-1), obs)
        # window i = (left neighbour, self, right neighbour) on the ring
        assert np.allclose(local[0], [env.x[-1], env.x[0], env.x[1]])

    def test_zero_state_zero_action_stays_until_disturbed(self):
        env = Chain(np.random.default_rng(8), n_act=4)
        env.reset()
        env.x = np.zeros(4)
        env.phases = np.zeros(4)
        env.t = 0.0
        r = env.step(np.zeros(4))  # disturbance sin(0) = 0 on the first step
        assert np.allclose(env.x, 0.0)
        assert r.reward == 0.0

    def test_actuation_counters_drift(self):
        env = Chain(np.random.default_rng(9), n_act=3)
        env.reset()
        env.x = np.full(3, 0.5)
        drift = env.step(np.zeros(3)).reward
        env.x = np.full(3, 0.5)
        env.steps = 0
        env.t -= env.DT
        countered = env.step(np.full(3, -0.5)).reward
        assert countered > drift


class TestTransforms:
    def test_rescale_endpoints(self):
        spaces = Spaces(obs_dim=1, discrete=False, action_dim=2,
                        lo=[-2.0, 0.0], hi=[2.0, 4.0])
        assert np.allclose(rescale_action([-1, -1], spaces), [-2, 0])
        assert np.allclose(rescale_action([0, 0], spaces), [0, 2])
        assert np.allclose(rescale_action([1.5, 3.0], spaces), [2, 4])  # clipped

    def test_rescale_rejects_discrete(self):
        spaces = Spaces(obs_dim=1, discrete=True, n_actions=3)
        with pytest.raises(ValueError):
            rescale_action([0.0], spaces)

    def test_rescale_inverse_identity(self):
        spaces = Spaces(obs_dim=1, discrete=False, action_dim=3,
                        lo=[-2, -1, 0], hi=[2, 3, 10])
        rng = np.random.default_rng(10)
        a = rng.uniform(-1, 1, size=3)
        scaled = rescale_action(a, spaces)
        back = 2.0 * (scaled - spaces.lo) / (spaces.hi - spaces.lo) - 1.0
        assert np.max(np.abs(back - a)) < 1e-12

    def test_obs_transform_kinds(self):
        obs = np.array([1.0])
        assert np.array_equal(transform_obs(obs, TransformSpec("none")), obs)
        scale = TransformSpec("scale", np.array([0.0]), np.array([2.0]))
        assert np.allclose(transform_obs(obs, scale), [0.0])  # midpoint -> 0
        clip = TransformSpec("clip", np.array([-1.0]), np.array([1.0]))
        assert np.allclose(transform_obs(np.array([5.0]), clip), [1.0])

    def test_obs_transform_dim_mismatch(self):
        spec = TransformSpec("clip", np.zeros(2), np.ones(2))
        with pytest.raises(ValueError):
            transform_obs(np.zeros(3), spec)


def _pool(n, parallel=False, seed=0, cls=Pendulum):
    seeds = np.random.SeedSequence(seed).spawn(n)
    return WorkerPool([cls(np.random.default_rng(s)) for s in seeds],
                      parallel=parallel)


class TestWorkerPool:
    def test_single_worker_equals_direct_env(self):
        pool = _pool(1, seed=1)
        env = Pendulum(np.random.default_rng(np.random.SeedSequence(1).spawn(1)[0]))
        obs_pool = pool.reset()
        obs_env = env.reset()
        assert np.array_equal(obs_pool[0], obs_env)
        results, _, _ = pool.step([np.array([0.5])])
        r = env.step(np.array([0.5]))
        assert np.array_equal(results[0].obs, r.obs)
        assert results[0].reward == r.reward

    def test_results_in_worker_index_order(self):
        pool = _pool(5, parallel=True, seed=2)
        pool.reset()
        results, _, _ = pool.step([np.array([i / 5.0]) for i in range(5)])
        probes = [env.theta for env in pool.envs]
        for r, env in zip(results, pool.envs):
            assert r.obs[2] == env.theta_dot
        assert len(probes) == 5
        pool.close()

    def test_pooled_steps_match_sequential_oracle(self):
        # 1e4 pooled transitions replayed one env at a time
        n, steps = 4, 2500
        pool = _pool(n, parallel=True, seed=3, cls=CartPole)
        pool.reset()
        rng_actions = np.random.default_rng(99)
        actions = rng_actions.integers(2, size=(steps, n))
        stream_pool = []
        for t in range(steps):
            results, _, _ = pool.step(list(actions[t]))
            stream_pool.append([(r.obs.copy(), r.reward, r.terminal, r.truncated)
                                for r in results])
        pool.close()

        seeds = np.random.SeedSequence(3).spawn(n)
        for i in range(n):
            env = CartPole(np.random.default_rng(seeds[i]))
            env.reset()
            for t in range(steps):
                r = env.step(int(actions[t, i]))
                obs, reward, term, trunc = stream_pool[t][i]
                assert np.array_equal(obs, r.obs)
                assert reward == r.reward and term == r.terminal
                if r.ended:
                    env.reset()

    def test_auto_reset_preserves_final_observation(self):
        pool = _pool(1, seed=4, cls=CartPole)
        pool.reset()
        while True:
            results, next_obs, finished = pool.step([1])
            if results[0].ended:
                assert finished and finished[0][0] == 0
                # the result keeps the true final obs; next_obs is the fresh one
                assert not np.array_equal(results[0].obs, next_obs[0])
                assert np.all(np.abs(next_obs[0]) <= 0.05)
                break

    def test_row_count_mismatch(self):
        pool = _pool(2, seed=5)
        pool.reset()
        with pytest.raises(ValueError):
            pool.step([np.zeros(1)])


def test_pool_parallel_and_sequential_identical():
    seq = _pool(8, parallel=False, seed=6)
    par = _pool(8, parallel=True, seed=6)
    obs_a, obs_b = seq.reset(), par.reset()
    assert np.array_equal(obs_a, obs_b)
    rng = np.random.default_rng(0)
    for _ in range(300):
        actions = [rng.uniform(-1, 1, size=1)] * 8
        ra, oa, fa = seq.step(actions)
        rb, ob, fb = par.step(actions)
        assert np.array_equal(oa, ob)
        assert fa == fb
        for x, y in zip(ra, rb):
            assert np.array_equal(x.obs, y.obs) and x.reward == y.reward
    par.close()
