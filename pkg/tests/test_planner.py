"""Planner: softmax weighting, horizon rule, early stopping, full plan steps."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aop.envs import MazeLifelongEnv
from aop.ensemble import ValueEnsemble
from aop.planner import (
    HorizonConfig,
    PlannerConfig,
    PlanRng,
    choose_horizon,
    improvement,
    improvement_with_flag,
    mppi_update,
    plan_step,
    select_horizon,
    should_terminate,
)
from aop.trajectory import Trajectory, discounted_return

from conftest import constant_net, open_maze, single_world_schedule


class RiggedModel:
    """Stub model whose population rewards depend only on the member index."""

    obs_dim = 4
    action_dim = 2

    def __init__(self, member_rewards):
        self.member_rewards = np.asarray(member_rewards, dtype=np.float64)

    def rollout_population(self, actions):
        pop, horizon, _ = actions.shape
        obs = np.zeros((pop, horizon + 1, self.obs_dim))
        rew = np.tile(self.member_rewards[:pop, None], (1, horizon)) / horizon
        return obs, rew

    def rollout(self, actions):
        actions = np.asarray(actions).reshape(-1, 2)
        h = actions.shape[0]
        return np.zeros((h + 1, self.obs_dim)), np.zeros(h), None


def base_traj(horizon=1, act_dim=2, score=0.0):
    return Trajectory(np.zeros((horizon + 1, 4)), np.zeros((horizon, act_dim)),
                      np.zeros(horizon), score)


def rng_for(seed=0, t=0):
    return PlanRng(PlanRng.derive_key(seed), t)


class TestMppiWeights:
    def test_equal_returns_give_uniform_weights(self):
        cfg = PlannerConfig(pop_size=5, lam=1.0)
        model = RiggedModel(np.zeros(5))
        _, _, weights = mppi_update(base_traj(), model, None, cfg, 1, rng_for(), 1, 0.99)
        np.testing.assert_allclose(weights, 0.2, atol=1e-12)

    def test_two_trajectory_softmax_at_unit_temperature(self):
        # returns {1, 0}, lam=1 -> weights {e/(1+e), 1/(1+e)}
        cfg = PlannerConfig(pop_size=2, lam=1.0)
        model = RiggedModel(np.array([1.0, 0.0]))
        _, _, weights = mppi_update(base_traj(), model, None, cfg, 1, rng_for(), 1, 0.99)
        expected = math.e / (1.0 + math.e)
        assert weights[0] == pytest.approx(expected, abs=1e-12)
        assert weights[0] == pytest.approx(0.7311, abs=1e-4)
        assert weights[1] == pytest.approx(1.0 - expected, abs=1e-12)

    def test_default_temperature_is_winner_take_all(self):
        cfg = PlannerConfig(pop_size=2, lam=0.01)
        model = RiggedModel(np.array([1.0, 0.0]))
        _, _, weights = mppi_update(base_traj(), model, None, cfg, 1, rng_for(), 1, 0.99)
        assert weights[0] == pytest.approx(1.0, abs=1e-20)
        assert weights[1] < 1e-40

    def test_weights_sum_to_one_and_permute(self, rng):
        scores = rng.normal(size=6)
        cfg = PlannerConfig(pop_size=6, lam=0.5)
        _, _, w = mppi_update(base_traj(), RiggedModel(scores), None, cfg, 1, rng_for(), 1, 0.99)
        assert np.sum(w) == pytest.approx(1.0, abs=1e-12)
        perm = rng.permutation(6)
        _, _, w2 = mppi_update(base_traj(), RiggedModel(scores[perm]), None, cfg, 1,
                               rng_for(), 1, 0.99)
        np.testing.assert_allclose(w2, w[perm], atol=1e-12)

    def test_population_batch_shapes(self):
        env = open_maze()
        cfg = PlannerConfig(pop_size=7)
        traj, batch, _ = mppi_update(base_traj(horizon=5), env.model(), None, cfg, 5,
                                     rng_for(), 1, 0.99)
        assert batch.states.shape == (35, 4)
        assert batch.actions.shape == (35, 2)
        assert batch.next_states.shape == (35, 4)
        assert batch.rewards.shape == (35,)
        assert len(traj) == 5

    def test_elite_member_keeps_base_actions(self):
        env = open_maze()
        cfg = PlannerConfig(pop_size=4, noise_std=0.3)
        base = base_traj(horizon=3)
        _, batch, _ = mppi_update(base, env.model(), None, cfg, 3, rng_for(), 1, 0.99)
        np.testing.assert_array_equal(batch.actions[:3], base.actions)

    def test_actions_are_clamped(self):
        env = open_maze()
        cfg = PlannerConfig(pop_size=30, noise_std=5.0)
        _, batch, _ = mppi_update(base_traj(horizon=4), env.model(), cfg=cfg, ens=None,
                                  horizon=4, rng=rng_for(), iteration=1, gamma=0.99)
        assert np.all(batch.actions <= 1.0) and np.all(batch.actions >= -1.0)


class TestImprovement:
    def test_positive_improvement(self):
        assert improvement(base_traj(score=10.0), base_traj(score=10.4)) == pytest.approx(0.04)

    def test_negative_scores_improving(self):
        assert improvement(base_traj(score=-2.0), base_traj(score=-1.0)) == pytest.approx(0.5)

    def test_identical_is_zero(self):
        assert improvement(base_traj(score=3.3), base_traj(score=3.3)) == 0.0

    def test_near_zero_denominator_flagged(self):
        delta, flagged = improvement_with_flag(1e-12, 1.0)
        assert flagged
        assert delta == pytest.approx((1.0 - 1e-12) / 1e-8)
        _, unflagged = improvement_with_flag(2.0, 1.0)
        assert not unflagged


class TestShouldTerminate:
    def test_below_later_threshold_uses_coin(self):
        cfg = PlannerConfig(eps_plan=0.2)
        assert should_terminate(0.04, 3, cfg, coin=0.79)
        assert not should_terminate(0.04, 3, cfg, coin=0.81)

    def test_above_threshold_never_terminates(self):
        cfg = PlannerConfig(eps_plan=0.2)
        assert not should_terminate(0.2, 3, cfg, coin=0.0)

    def test_first_iteration_threshold(self):
        cfg = PlannerConfig()
        assert should_terminate(0.005, 1, cfg, coin=0.5)
        assert not should_terminate(0.02, 1, cfg, coin=0.5)  # above 0.01
        assert should_terminate(0.02, 2, cfg, coin=0.5)  # below 0.05

    def test_termination_probability_matches_eps_plan(self):
        cfg = PlannerConfig(eps_plan=0.2)
        key = PlanRng.derive_key(123)
        hits = sum(
            should_terminate(0.0, 2, cfg, PlanRng(key, t).termination_coin(2))
            for t in range(4000)
        )
        assert hits / 4000 == pytest.approx(0.8, abs=0.02)

    def test_eps_plan_one_never_stops(self):
        cfg = PlannerConfig(eps_plan=1.0)
        assert not should_terminate(-10.0, 2, cfg, coin=0.0)

    def test_bad_iter_index(self):
        with pytest.raises(ValueError):
            should_terminate(0.0, 0, PlannerConfig(), coin=0.5)


class TestHorizonRule:
    def test_high_spread_forces_full_horizon(self):
        hcfg = HorizonConfig(h_full=80, sigma_thres=8.0, eps_thres=25.0)
        assert choose_horizon(9.0, np.zeros(80), hcfg) == 80

    def test_perfect_value_function_gives_h_min(self):
        hcfg = HorizonConfig(h_full=80, h_min=1)
        assert choose_horizon(0.0, np.zeros(80), hcfg) == 1

    def test_longest_exceedance_wins(self):
        hcfg = HorizonConfig(h_full=4, h_min=1, sigma_thres=8.0, eps_thres=25.0)
        assert choose_horizon(0.0, np.array([30.0, 26.0, 20.0, 10.0]), hcfg) == 2

    def test_sigma_zero_threshold_always_full(self):
        hcfg = HorizonConfig(h_full=16, sigma_thres=0.0)
        assert choose_horizon(0.0, np.zeros(16), hcfg) == 16

    def test_select_horizon_wrapper(self):
        ens = ValueEnsemble(4, n_members=2, hidden=(4,), rng=np.random.default_rng(0))
        ens.members = [constant_net(4, 0.0), constant_net(4, 0.0)]
        hcfg = HorizonConfig(h_full=6, h_min=1, sigma_thres=8.0, eps_thres=25.0)
        traj = base_traj(horizon=6)
        assert select_horizon(ens, traj, hcfg) == 1
        with pytest.raises(ValueError):
            select_horizon(ens, base_traj(horizon=3), hcfg)


class TestPlanStep:
    def test_single_iteration_rolls_pop_times_horizon(self):
        env = open_maze()
        cfg = PlannerConfig(pop_size=9, max_iters=1)
        hcfg = HorizonConfig(h_full=11, sigma_thres=0.0)
        action, rec, final, batches = plan_step(
            np.zeros((11, 2)), None, env.model(), None, cfg, hcfg, 0.99, rng_for()
        )
        assert rec.rolled_timesteps == 9 * 11
        assert rec.iterations == 1
        assert len(final) == 11

    def test_return_estimate_recomputable(self):
        env = open_maze()
        ens = ValueEnsemble(4, n_members=3, hidden=(8,), rng=np.random.default_rng(2))
        cfg = PlannerConfig(pop_size=6, max_iters=2)
        hcfg = HorizonConfig(h_full=8)
        _, rec, final, _ = plan_step(np.zeros((8, 2)), None, env.model(), ens, cfg,
                                     hcfg, 0.99, rng_for())
        terminal = float(ens.aggregate(final.states[-1]))
        assert final.recomputed_return(0.99, terminal) == pytest.approx(
            final.return_estimate, abs=1e-9
        )

    def test_seed_determinism_bitwise(self):
        def one(seed):
            env = open_maze()
            cfg = PlannerConfig(pop_size=5, max_iters=3)
            hcfg = HorizonConfig(h_full=6, sigma_thres=0.0)
            action, _, final, _ = plan_step(np.zeros((6, 2)), None, env.model(), None,
                                            cfg, hcfg, 0.99, rng_for(seed, t=7))
            return action, final.actions

        a1, f1 = one(3)
        a2, f2 = one(3)
        a3, _ = one(4)
        assert np.array_equal(a1, a2) and np.array_equal(f1, f2)
        assert not np.array_equal(a1, a3)

    def test_worker_invariant_noise_streams(self):
        # member draws are pure functions of (seed, t, iteration, member)
        key = PlanRng.derive_key(11)
        a = PlanRng(key, 5).member_stream(2, 7).standard_normal((4, 2))
        b = PlanRng(key, 5).member_stream(2, 7).standard_normal((4, 2))
        c = PlanRng(key, 5).member_stream(2, 8).standard_normal((4, 2))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_prior_candidate_wins_argmax_when_better(self):
        # a prior that drives straight at the goal must beat a zero plan
        env = open_maze(goals=((0.9, 0.5), (0.1, 0.5)))

        class GoalSeeker:
            def action(self, obs):
                return np.clip(5.0 * (obs[2:] - obs[:2]), -1, 1)

        cfg = PlannerConfig(pop_size=4, max_iters=1)
        hcfg = HorizonConfig(h_full=30, sigma_thres=0.0)
        _, rec, _, _ = plan_step(np.zeros((30, 2)), GoalSeeker(), env.model(), None,
                                 cfg, hcfg, 0.99, rng_for())
        assert rec.source == "prior"

    def test_tie_breaks_toward_shifted_plan(self):
        env = open_maze()

        class ZeroPrior:
            def action(self, obs):
                return np.zeros(2)

        cfg = PlannerConfig(pop_size=2, max_iters=1)
        hcfg = HorizonConfig(h_full=4, sigma_thres=0.0)
        _, rec, _, _ = plan_step(np.zeros((4, 2)), ZeroPrior(), env.model(), None, cfg,
                                 hcfg, 0.99, rng_for())
        assert rec.source == "shifted"

    def test_pop_one_single_iteration_is_noisy_rollout(self):
        # the policy-optimization special case: the plan is one noisy sample
        env = open_maze()
        cfg = PlannerConfig(pop_size=1, max_iters=1, noise_std=0.1)
        hcfg = HorizonConfig(h_full=5, sigma_thres=0.0)
        rng = rng_for(seed=9, t=4)
        prev = np.zeros((5, 2))
        action, rec, final, _ = plan_step(prev, None, env.model(), None, cfg, hcfg,
                                          0.99, rng)
        expected_noise = rng_for(seed=9, t=4).member_stream(1, 0).standard_normal((5, 2))
        np.testing.assert_array_equal(final.actions, np.clip(expected_noise * 0.1, -1, 1))
        assert rec.rolled_timesteps == 5

    def test_horizon_truncation_keeps_full_length_plan(self):
        env = open_maze()
        ens = ValueEnsemble(4, n_members=2, hidden=(4,), rng=np.random.default_rng(0))
        ens.members = [constant_net(4, 0.0), constant_net(4, 0.0)]  # forces h_min
        cfg = PlannerConfig(pop_size=3, max_iters=1)
        hcfg = HorizonConfig(h_full=10, h_min=2, sigma_thres=8.0, eps_thres=25.0)
        prev = np.full((10, 2), 0.25)
        _, rec, final, _ = plan_step(prev, None, env.model(), ens, cfg, hcfg, 0.99,
                                     rng_for())
        assert rec.horizon == 2
        assert len(final) == 10  # optimized head + retained tail
        assert rec.rolled_timesteps == 3 * 2

    def test_shift_rerolls_through_current_model(self):
        # rewards in the re-rolled plan reflect the current goal, not the one
        # the plan was built under
        sched = single_world_schedule([], [[0.9, 0.5], [0.1, 0.5]])
        env = MazeLifelongEnv(sched, "dense")
        cfg = PlannerConfig(pop_size=3, max_iters=1)
        hcfg = HorizonConfig(h_full=4, sigma_thres=0.0)
        _, _, final, _ = plan_step(np.zeros((4, 2)), None, env.model(), None, cfg, hcfg,
                                   0.99, rng_for())
        swapped = MazeLifelongEnv(
            single_world_schedule([], [[0.9, 0.5], [0.1, 0.5]], active=1), "dense"
        )
        shifted = np.concatenate([final.actions[1:], np.zeros((1, 2))])
        _, rec2, final2, _ = plan_step(shifted, None, swapped.model(), None, cfg, hcfg,
                                       0.99, rng_for(t=1))
        # distance rewards now measure against the swapped goal
        assert final2.rewards[0] == pytest.approx(-np.hypot(*(swapped.phys[:2] - [0.1, 0.5])), abs=0.05)


@settings(max_examples=40, deadline=None)
@given(prev=st.floats(-100, 100), nxt=st.floats(-100, 100))
def test_improvement_sign_property(prev, nxt):
    delta, _ = improvement_with_flag(prev, nxt)
    if nxt > prev:
        assert delta > 0
    elif nxt < prev:
        assert delta < 0
    else:
        assert delta == 0


def test_discounted_return_matches_manual_sum(rng):
    rewards = rng.normal(size=12)
    gamma = 0.97
    manual = sum(gamma**k * rewards[k] for k in range(12)) + gamma**12 * 3.0
    assert discounted_return(rewards, gamma, 3.0) == pytest.approx(manual, abs=1e-12)
