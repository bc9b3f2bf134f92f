"""Off-policy evaluation for confounded tabular MDPs.

Estimates a target policy's long-run average reward from logged data via a
minimax-GMM stationary density-ratio estimator combined with optimal
balancing weights, with direct-method, doubly-robust, and stationary-IPS
baselines and a seeded benchmark harness.
"""
from .balancing import (
    BalanceKernel,
    CompressedData,
    WeightVector,
    build_quadratic,
    compress,
    eval_J_for_g,
    objective_constant,
    posterior_kernel_expectation,
    solve_weights,
    sup_objective_value,
)
from .bench import (
    BenchmarkConfig,
    BenchmarkReport,
    ReportRow,
    RunRecord,
    child_seed,
    emit_csv,
    ground_truth,
    parse_csv,
    run_benchmark,
    run_sensitivity_alpha,
    run_sensitivity_noise,
)
from .confounding import (
    BetaTable,
    OverlapError,
    PosteriorOracle,
    UnreachableTripleError,
    asd,
    beta_table,
    exact_posterior,
    impute_confounders,
    inject_logit_noise,
)
from .density_ratio import (
    DensityRatio,
    GmmHyperparams,
    MomentResiduals,
    TransitionSummary,
    estimate_density_ratio,
    estimate_from_summary,
    inner_assemble,
    moment_residuals,
    outer_solve,
    population_summary,
    summarize,
)
from .envs import (
    Dataset,
    IidConfounders,
    MarkovConfounders,
    MdpucSpec,
    MixtureConfounders,
    MonteCarloValue,
    PolicySpec,
    StationaryDistribution,
    build_environment,
    build_gridworld,
    build_modelwin,
    policy_prob,
    policy_table,
    sample_trajectories,
    stationary_distribution,
    true_policy_value,
)
from .estimators import (
    Estimate,
    OutcomeModel,
    direct_method,
    doubly_robust,
    fit_outcome_model,
    ips_estimate,
    weighted_value,
)
from .plots import emit_plot

__all__ = [name for name in dir() if not name.startswith("_")]
