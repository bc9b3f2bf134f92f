import numpy as np
import pytest

from cope import envs
from cope.confounding import beta_table, exact_posterior
from cope.density_ratio import GmmHyperparams


@pytest.fixture(scope="session")
def modelwin():
    return envs.build_modelwin()


@pytest.fixture(scope="session")
def gridworld():
    return envs.build_gridworld()


@pytest.fixture(scope="session")
def mw_behavior():
    return envs.PolicySpec(envs.MODELWIN, 0.7)


@pytest.fixture(scope="session")
def mw_eval():
    return envs.PolicySpec(envs.MODELWIN, 0.1)


@pytest.fixture(scope="session")
def mw_oracle(modelwin, mw_behavior):
    return exact_posterior(modelwin, mw_behavior)


@pytest.fixture(scope="session")
def mw_beta(mw_oracle, mw_eval, mw_behavior, modelwin):
    return beta_table(mw_oracle, mw_eval, mw_behavior, modelwin)


@pytest.fixture(scope="session")
def mw_dataset(modelwin, mw_behavior):
    return envs.sample_trajectories(modelwin, mw_behavior, n_traj=200, horizon=100, seed=0)


@pytest.fixture(scope="session")
def hp():
    return GmmHyperparams()


@pytest.fixture(scope="session")
def mw_d_star(modelwin, mw_behavior, mw_eval):
    """Brute-force stationary state ratio: power iteration on both chains."""
    stat_b = envs.stationary_distribution(modelwin, mw_behavior)
    stat_e = envs.stationary_distribution(modelwin, mw_eval)
    return stat_e.marginal / stat_b.marginal


def exact_average_reward(spec, policy):
    """Long-run average reward from the exact stationary distribution (iid only)."""
    stat = envs.stationary_distribution(spec, policy)
    mean_r = (spec.transition * spec.mean_reward).sum(axis=3)  # (S, A, U)
    return float(np.einsum("sua,sau->", stat.joint, mean_r))
