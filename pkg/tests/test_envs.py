import numpy as np
import pytest
from numpy.testing import assert_allclose

from cope import envs
from cope.envs import (
    GRIDWORLD,
    MODELWIN,
    IidConfounders,
    MixtureConfounders,
    PolicySpec,
    grid_state,
    mixture_confounders,
    policy_prob,
    policy_table,
    read_dataset_csv,
    sample_trajectories,
    stationary_distribution,
    true_policy_value,
    write_dataset_csv,
)

from conftest import exact_average_reward


class TestModelWin:
    def test_transition_from_s0(self, modelwin):
        assert_allclose(modelwin.transition[0, 0, 0, 1], 0.7 + 0.1)
        assert_allclose(modelwin.transition[0, 0, 0, 2], 0.3 - 0.1)
        assert_allclose(modelwin.transition[0, 1, 1, 1], 0.3 + 0.2)

    def test_reward_leaving_s1(self, modelwin):
        for a in range(2):
            assert modelwin.mean_reward[1, a, 1, 0] == 14.0
            assert modelwin.mean_reward[2, a, 1, 0] == -14.0
        assert np.all(modelwin.mean_reward[0] == 0.0)

    def test_deterministic_return_to_s0(self, modelwin):
        assert modelwin.transition[1, 1, 1, 0] == 1.0
        assert modelwin.transition[2, 0, 0, 0] == 1.0

    def test_rows_are_distributions(self, modelwin):
        assert_allclose(modelwin.transition.sum(axis=3), 1.0, atol=1e-12)
        assert_allclose(modelwin.start_dist.sum(), 1.0, atol=1e-12)


class TestGridWorld:
    def test_goal_reward(self, gridworld):
        goal = grid_state(9, 9)
        for a in range(4):
            assert gridworld.mean_reward[goal, a, 0, 0] == 110.0

    def test_step_rewards(self, gridworld):
        s = grid_state(3, 4)
        assert gridworld.mean_reward[s, envs.UP, 1, 0] == 1.0 + 20.0 * 0.2
        assert gridworld.mean_reward[s, envs.LEFT, 1, 0] == -1.0 - 40.0 * 0.2

    def test_edges_clip(self, gridworld):
        right_edge = grid_state(3, 9)
        assert gridworld.transition[right_edge, envs.RIGHT, 0, right_edge] == 1.0

    def test_goal_teleports_to_start(self, gridworld):
        goal = grid_state(9, 9)
        for a in range(4):
            assert gridworld.transition[goal, a, 1, grid_state(0, 0)] == 1.0

    def test_rows_are_distributions(self, gridworld):
        assert_allclose(gridworld.transition.sum(axis=3), 1.0, atol=1e-12)


class TestPolicies:
    def test_modelwin_action_probs(self, modelwin):
        policy = PolicySpec(MODELWIN, 0.7)
        assert_allclose(policy_prob(policy, modelwin, 0, 0, 1), 0.8)
        assert_allclose(policy_prob(policy, modelwin, 0, 0, 0), 0.2)

    def test_gridworld_below_diagonal_hand_values(self, gridworld):
        # pi=0.7, u=0.1, cell (row 0, col 5): bottom-left branch 0.8, within it
        # down 0.45 / left 0.55; top-right branch 0.2, below diagonal so up 0.8.
        policy = PolicySpec(GRIDWORLD, 0.7)
        table = policy_table(policy, gridworld)
        assert_allclose(table[grid_state(0, 5), 0], [0.16, 0.04, 0.36, 0.44], atol=1e-12)

    @pytest.mark.parametrize("pi", [0.1, 0.7])
    @pytest.mark.parametrize("tag", [MODELWIN, GRIDWORLD])
    def test_action_probs_sum_to_one(self, tag, pi, modelwin, gridworld):
        spec = modelwin if tag == MODELWIN else gridworld
        table = policy_table(PolicySpec(tag, pi), spec)
        assert_allclose(table.sum(axis=2), 1.0, atol=1e-12)
        assert np.all(table >= 0)

    def test_degenerate_parameter_rejected(self, modelwin):
        with pytest.raises(ValueError):
            policy_table(PolicySpec(MODELWIN, 0.9), modelwin)  # 0.9 + 0.2 > 1

    def test_invalid_ids_rejected(self, modelwin):
        with pytest.raises(IndexError):
            policy_prob(PolicySpec(MODELWIN, 0.7), modelwin, 3, 0, 0)


class TestSampling:
    def test_modelwin_states_alternate(self, modelwin, mw_behavior):
        ds = sample_trajectories(modelwin, mw_behavior, n_traj=1, horizon=4, seed=17)
        assert ds.n == 4
        assert np.all(ds.s[0::2] == 0)
        assert np.all(np.isin(ds.s[1::2], [1, 2]))
        assert np.all(ds.s_next[:-1] == ds.s[1:])

    def test_same_seed_identical(self, modelwin, mw_behavior):
        a = sample_trajectories(modelwin, mw_behavior, 5, 50, seed=3)
        b = sample_trajectories(modelwin, mw_behavior, 5, 50, seed=3)
        for field in ("s", "a", "r", "s_next", "hidden_u"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_offsets(self, modelwin, mw_behavior):
        ds = sample_trajectories(modelwin, mw_behavior, 7, 10, seed=1)
        assert ds.trajectory_offsets[0] == 0
        assert ds.trajectory_offsets[-1] == ds.n == 70
        assert np.all(np.diff(ds.trajectory_offsets) == 10)

    def test_hidden_level_frequencies(self, modelwin, mw_behavior):
        ds = sample_trajectories(modelwin, mw_behavior, 100, 100, seed=5)
        u = ds.hidden_confounders()
        freq = np.bincount(u, minlength=2) / len(u)
        se = np.sqrt(0.3 * 0.7 / len(u))
        assert abs(freq[0] - 0.3) <= 3 * se

    def test_mixture_alpha_one_is_iid(self, mw_behavior):
        spec = envs.build_modelwin(mixture_confounders(1.0))
        ds = sample_trajectories(spec, mw_behavior, 200, 100, seed=9)
        u = ds.hidden_confounders().reshape(200, 100)
        # consecutive-pair joint should match the product of marginals
        pairs = np.stack([u[:, :-1].ravel(), u[:, 1:].ravel()])
        joint = np.histogram2d(pairs[0], pairs[1], bins=2)[0] / pairs.shape[1]
        marg = np.bincount(u.ravel(), minlength=2) / u.size
        se = 3.0 / np.sqrt(pairs.shape[1])
        assert np.all(np.abs(joint - np.outer(marg, marg)) <= se)

    def test_mixture_alpha_zero_follows_markov_rows(self):
        spec = envs.build_modelwin(mixture_confounders(0.0))
        ds = sample_trajectories(spec, envs.PolicySpec(MODELWIN, 0.7), 300, 50, seed=11)
        u = ds.hidden_confounders().reshape(300, 50)
        after_low = u[:, 1:][u[:, :-1] == 0]
        frac = after_low.mean()  # P(next level = 1 | prev = 0); transition row (0.08, 0.92)
        assert abs(frac - 0.92) <= 3 * np.sqrt(0.92 * 0.08 / len(after_low))


class TestTruePolicyValue:
    def test_degenerate_policy_constant_reward(self, gridworld):
        # Always move up with the confounder pinned at level 0: after reaching
        # the top edge every step pays exactly 1 + 20 * 0.1.
        spec = envs.build_gridworld(IidConfounders([1.0, 0.0]))
        table = np.zeros((100, 2, 4))
        table[:, :, envs.UP] = 1.0
        mc = true_policy_value(spec, table, burn_in=20, n_steps=50, n_rollouts=4, seed=0)
        assert_allclose(mc.value, 3.0, atol=1e-12)
        assert mc.stderr == 0.0

    def test_matches_exact_stationary_value(self, modelwin, mw_eval):
        exact = exact_average_reward(modelwin, mw_eval)
        mc = true_policy_value(modelwin, mw_eval, burn_in=200, n_steps=4000, n_rollouts=60, seed=2)
        assert abs(mc.value - exact) <= 4 * mc.stderr

    def test_stderr_shrinks_with_budget(self, modelwin, mw_eval):
        small = true_policy_value(modelwin, mw_eval, burn_in=50, n_steps=500, n_rollouts=20, seed=3)
        large = true_policy_value(modelwin, mw_eval, burn_in=50, n_steps=2000, n_rollouts=80, seed=3)
        assert large.stderr < small.stderr


class TestStationaryDistribution:
    def test_normalized_and_fixed_point(self, modelwin, gridworld, mw_behavior):
        for spec, policy in ((modelwin, mw_behavior), (gridworld, PolicySpec(GRIDWORLD, 0.7))):
            stat = stationary_distribution(spec, policy)
            assert_allclose(stat.joint.sum(), 1.0, atol=1e-10)
            assert_allclose(stat.marginal.sum(), 1.0, atol=1e-10)
            # independently rebuilt one-step update: p must be its fixed point
            table = envs.policy_table(policy, spec)
            probs = spec.iid_probs
            into_state = np.einsum("sua,saut->t", stat.joint, spec.transition)
            advanced = into_state[:, None, None] * probs[None, :, None] * table
            assert np.abs(advanced - stat.joint).max() <= 1e-10

    def test_identical_policies_unit_ratio(self, modelwin, mw_behavior):
        stat = stationary_distribution(modelwin, mw_behavior)
        assert_allclose(stat.marginal / stat.marginal, 1.0)

    def test_requires_iid(self, mw_behavior):
        spec = envs.build_modelwin(mixture_confounders(0.5))
        with pytest.raises(ValueError):
            stationary_distribution(spec, mw_behavior)

    @pytest.mark.parametrize("tag,n_traj,horizon", [(MODELWIN, 1000, 1000), (GRIDWORLD, 100, 10_000)])
    def test_visit_frequencies_match(self, tag, n_traj, horizon, modelwin, gridworld):
        spec = modelwin if tag == MODELWIN else gridworld
        policy = PolicySpec(tag, 0.7)
        stat = stationary_distribution(spec, policy)
        ds = sample_trajectories(spec, policy, n_traj, horizon, seed=13)
        freq = np.bincount(ds.s, minlength=spec.n_states) / ds.n
        assert 0.5 * np.abs(freq - stat.marginal).sum() <= 0.01


class TestDatasetCsv:
    def test_round_trip(self, modelwin, mw_behavior, tmp_path):
        ds = sample_trajectories(modelwin, mw_behavior, 4, 25, seed=21)
        path = tmp_path / "data.csv"
        write_dataset_csv(ds, path)
        back = read_dataset_csv(path)
        assert np.array_equal(back.s, ds.s)
        assert np.array_equal(back.a, ds.a)
        assert np.array_equal(back.r, ds.r)
        assert np.array_equal(back.s_next, ds.s_next)
        assert np.array_equal(back.trajectory_offsets, ds.trajectory_offsets)
        assert back.hidden_u is None

    def test_hidden_column_is_opt_in(self, modelwin, mw_behavior, tmp_path):
        ds = sample_trajectories(modelwin, mw_behavior, 2, 5, seed=22)
        path = tmp_path / "debug.csv"
        write_dataset_csv(ds, path, with_hidden=True)
        header = path.read_text().splitlines()[0]
        assert header == "traj,step,s,a,r,s_next,u"
        back = read_dataset_csv(path)
        assert np.array_equal(back.hidden_confounders(), ds.hidden_confounders())

    def test_hidden_accessor_raises_when_absent(self, modelwin, mw_behavior):
        ds = sample_trajectories(modelwin, mw_behavior, 2, 5, seed=23)
        ds.hidden_u = None
        with pytest.raises(ValueError):
            ds.hidden_confounders()


def test_mixture_validation():
    with pytest.raises(ValueError):
        MixtureConfounders(alpha=1.5, iid=IidConfounders([0.3, 0.7]), markov=envs.alt_markov_confounders())
    with pytest.raises(ValueError):
        IidConfounders([0.4, 0.7])
