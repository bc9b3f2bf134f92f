import numpy as np
import pytest
from numpy.testing import assert_allclose

from cope import envs
from cope.confounding import (
    BetaTable,
    PosteriorOracle,
    UnreachableTripleError,
    asd,
    beta_table,
    exact_posterior,
    impute_confounders,
    inject_logit_noise,
    perturb_distribution,
    read_oracle_csv,
    stationary_z_distribution,
    write_oracle_csv,
)
from cope.envs import sample_trajectories, stationary_distribution

# Hand Bayes for z = (s0, a0, s1), pi_b = 0.7: prior (0.3, 0.7),
# pi_b(a0 | s0, u) = 0.3 - u, P(s1 | s0, a0, u) = 0.7 + u, so the
# unnormalized posterior is (0.3*0.2*0.8, 0.7*0.1*0.9) = (0.048, 0.063).
PHI_S0_A0_S1 = np.array([0.048, 0.063]) / 0.111

# Ratios pi_e/pi_b at (s0, a0): (0.8/0.2, 0.7/0.1) = (4, 7).
BETA_S0_A0_S1 = float(PHI_S0_A0_S1 @ [4.0, 7.0])


class TestExactPosterior:
    def test_worked_example(self, mw_oracle):
        assert_allclose(mw_oracle.posterior(0, 0, 1), PHI_S0_A0_S1, atol=1e-12)

    def test_rows_normalized(self, mw_oracle):
        sums = np.nansum(mw_oracle.probs, axis=-1)[mw_oracle.reachable]
        assert_allclose(sums, 1.0, atol=1e-10)

    def test_uninformative_likelihood_returns_prior(self, modelwin):
        # Transitions and behavior that ignore the confounder: posterior = prior.
        flat_T = modelwin.transition.mean(axis=2, keepdims=True).repeat(2, axis=2)
        spec = envs.MdpucSpec(
            n_states=3,
            n_actions=2,
            n_confounders=2,
            confounder_values=modelwin.confounder_values,
            transition=flat_T,
            mean_reward=modelwin.mean_reward,
            start_dist=modelwin.start_dist,
            confounder_process=modelwin.confounder_process,
        )
        table = np.full((3, 2, 2), 0.5)
        oracle = exact_posterior(spec, table)
        for s, a, sn in np.argwhere(oracle.reachable):
            assert_allclose(oracle.posterior(s, a, sn), [0.3, 0.7], atol=1e-12)

    def test_unreachable_triple_raises(self, mw_oracle):
        assert not mw_oracle.reachable[1, 0, 2]  # s1 never goes to s2
        with pytest.raises(UnreachableTripleError):
            mw_oracle.posterior(1, 0, 2)

    def test_requires_iid(self, mw_behavior):
        spec = envs.build_modelwin(envs.mixture_confounders(0.5))
        with pytest.raises(ValueError):
            exact_posterior(spec, mw_behavior)

    def test_joint_consistency(self, modelwin, mw_behavior, mw_oracle):
        # sum_u phi(u|z) P(z) must equal the brute-force joint P(z, u).
        stat = stationary_distribution(modelwin, mw_behavior)
        joint = np.einsum("sua,saut->satu", stat.joint, modelwin.transition)
        pz = stationary_z_distribution(modelwin, mw_behavior)
        lhs = np.nan_to_num(mw_oracle.probs) * pz[..., None]
        assert_allclose(lhs, joint, atol=1e-10)


class TestLogitNoise:
    def test_sigma_zero_is_identity(self, mw_oracle):
        assert inject_logit_noise(mw_oracle, 0.0, seed=4) is mw_oracle

    def test_rows_stay_normalized(self, mw_oracle):
        noisy = inject_logit_noise(mw_oracle, 1.5, seed=4)
        sums = np.nansum(noisy.probs, axis=-1)[noisy.reachable]
        assert_allclose(sums, 1.0, atol=1e-10)
        assert np.array_equal(noisy.reachable, mw_oracle.reachable)

    def test_gauge_invariance(self):
        # Adding a constant to all logits before the same noise draw must not
        # change the renormalized output.
        p = np.array([0.3, 0.7])
        noise = np.array([0.4, -0.2])
        base = perturb_distribution(p, noise)
        shifted = np.exp(np.log(p) + 5.0 + noise)
        assert_allclose(base, shifted / shifted.sum(), atol=1e-12)

    def test_large_sigma_saturates(self):
        p = np.array([0.3, 0.7])
        rng = np.random.default_rng(0)
        tops = [perturb_distribution(p, rng.normal(0, 10, 2)).max() for _ in range(10_000)]
        assert np.mean(tops) > 0.95

    def test_determinism(self, mw_oracle):
        a = inject_logit_noise(mw_oracle, 0.7, seed=9)
        b = inject_logit_noise(mw_oracle, 0.7, seed=9)
        assert np.array_equal(
            a.probs[a.reachable], b.probs[b.reachable]
        )


class TestAsd:
    def test_zero_noise(self, modelwin, mw_behavior):
        assert asd(modelwin, mw_behavior, 0.0, seed=1) == 0.0

    def test_bounded_for_two_levels(self, modelwin, mw_behavior):
        # A probability's spread is at most 1/2; with the (n_e - 1)-denominator
        # sample standard deviation the attainable bound is 0.5*sqrt(n_e/(n_e-1)).
        n_e = 50
        bound = 0.5 * np.sqrt(n_e / (n_e - 1))
        assert asd(modelwin, mw_behavior, 50.0, n_e=n_e, seed=1) <= bound

    def test_nondecreasing_in_sigma(self, modelwin, mw_behavior):
        grid = [0.0, 0.25, 0.5, 1.0, 2.0]
        medians = []
        for sigma in grid:
            vals = [asd(modelwin, mw_behavior, sigma, seed=s) for s in range(20)]
            medians.append(np.median(vals))
        assert all(a <= b + 1e-12 for a, b in zip(medians, medians[1:]))


class TestBetaTable:
    def test_worked_example(self, mw_beta):
        assert_allclose(mw_beta.values[0, 0, 1], BETA_S0_A0_S1, atol=1e-12)

    def test_identical_policies_unit(self, modelwin, mw_oracle, mw_behavior):
        table = beta_table(mw_oracle, mw_behavior, mw_behavior, modelwin)
        assert_allclose(table.values[table.reachable], 1.0, atol=1e-12)

    def test_nonnegative(self, mw_beta):
        assert np.all(mw_beta.values[mw_beta.reachable] >= 0)

    def test_population_moment_identity(self, modelwin, mw_behavior, mw_eval, mw_beta, mw_d_star):
        # E_b[d*(S) beta(Z) | S' = t] = d*(t), by exact summation over the chain.
        pz = stationary_z_distribution(modelwin, mw_behavior)
        num = np.einsum("sat,s,sat->t", pz, mw_d_star, np.nan_to_num(mw_beta.values))
        den = pz.sum(axis=(0, 1))
        assert_allclose(num / den, mw_d_star, atol=1e-8)

    def test_lookup_rejects_unreachable(self, mw_beta):
        with pytest.raises(UnreachableTripleError):
            mw_beta.lookup(np.array([1]), np.array([0]), np.array([2]))


class TestImputation:
    def test_point_mass(self, modelwin):
        probs = np.zeros((3, 2, 3, 2))
        probs[..., 1] = 1.0
        oracle = PosteriorOracle(
            probs=probs, reachable=np.ones((3, 2, 3), bool), n_states=3, n_actions=2, n_levels=2
        )
        ds = sample_trajectories(modelwin, envs.PolicySpec(envs.MODELWIN, 0.7), 5, 20, seed=2)
        assert np.all(impute_confounders(oracle, ds, seed=0) == 1)

    def test_frequencies_match_posterior(self, modelwin, mw_behavior, mw_oracle):
        ds = sample_trajectories(modelwin, mw_behavior, 100, 100, seed=3)
        u_hat = impute_confounders(mw_oracle, ds, seed=4)
        z_mask = (ds.s == 0) & (ds.a == 0) & (ds.s_next == 1)
        frac = u_hat[z_mask].mean()  # fraction at level 1
        p = PHI_S0_A0_S1[1]
        assert abs(frac - p) <= 3 * np.sqrt(p * (1 - p) / z_mask.sum())

    def test_determinism(self, modelwin, mw_behavior, mw_oracle):
        ds = sample_trajectories(modelwin, mw_behavior, 10, 50, seed=5)
        assert np.array_equal(
            impute_confounders(mw_oracle, ds, seed=6), impute_confounders(mw_oracle, ds, seed=6)
        )


def test_oracle_csv_round_trip(mw_oracle, tmp_path):
    path = tmp_path / "oracle.csv"
    write_oracle_csv(mw_oracle, path)
    back = read_oracle_csv(path, mw_oracle.n_states, mw_oracle.n_actions, mw_oracle.n_levels)
    assert np.array_equal(back.reachable, mw_oracle.reachable)
    assert_allclose(back.probs[back.reachable], mw_oracle.probs[mw_oracle.reachable], rtol=0, atol=0)


def test_beta_requires_overlap(modelwin, mw_oracle):
    # A behavior table with a zero-probability action on a supported (s, u)
    # must be rejected rather than silently dividing by zero.
    table = np.zeros((3, 2, 2))
    table[:, :, 1] = 1.0
    with pytest.raises(Exception):
        beta_table(mw_oracle, envs.PolicySpec(envs.MODELWIN, 0.1), table, modelwin)
