"""Policy-value estimators: balanced weighting and the three baselines.

All estimators consume the shared posterior oracle, density ratio, and
balancing weights.  The baselines additionally receive imputed confounders,
since they have no native notion of unobserved confounding.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .balancing import WeightVector
from .confounding import OverlapError, PosteriorOracle, impute_confounders
from .density_ratio import DensityRatio, GmmHyperparams, TransitionSummary, estimate_from_summary
from .envs import Dataset, MdpucSpec, PolicySpec, policy_table

BALANCED = "balanced"
DIRECT_METHOD = "direct_method"
DOUBLY_ROBUST = "doubly_robust"
IPS = "ips"

METHODS = (BALANCED, DIRECT_METHOD, DOUBLY_ROBUST, IPS)


@dataclass(frozen=True)
class Estimate:
    value: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"{self.method} produced a non-finite estimate")


def weighted_value(weights: WeightVector, dataset: Dataset) -> Estimate:
    """The weighted estimator: mean of W_i * R_i."""
    if weights.n != dataset.n:
        raise ValueError(f"{weights.n} weights for {dataset.n} samples")
    value = float(np.mean(weights.w * dataset.r))
    return Estimate(value=value, method=BALANCED, diagnostics={"weight_norm": float(np.linalg.norm(weights.w))})


@dataclass(frozen=True)
class OutcomeModel:
    """Per-(state, confounder, action) mean observed reward.

    Cells never observed are absent (NaN with a zero count); how they are
    handled is the caller's policy.
    """

    mu: np.ndarray  # (S, U, A); NaN where count == 0
    counts: np.ndarray  # (S, U, A)


def fit_outcome_model(dataset: Dataset, u_hat: np.ndarray, spec: MdpucSpec) -> OutcomeModel:
    """Group-mean reward per (state, imputed confounder, action) cell."""
    if len(u_hat) != dataset.n:
        raise ValueError("one imputed confounder per transition required")
    shape = (spec.n_states, spec.n_confounders, spec.n_actions)
    totals = np.zeros(shape)
    counts = np.zeros(shape)
    np.add.at(totals, (dataset.s, u_hat, dataset.a), dataset.r)
    np.add.at(counts, (dataset.s, u_hat, dataset.a), 1.0)
    with np.errstate(invalid="ignore"):
        mu = np.where(counts > 0, totals / np.maximum(counts, 1.0), np.nan)
    return OutcomeModel(mu=mu, counts=counts)


def _filled_outcomes(
    model: OutcomeModel, needed: np.ndarray, dataset: Dataset, strict: bool
) -> tuple[np.ndarray, int]:
    """Outcome table with absent-but-needed cells substituted by the global mean.

    ``needed`` marks (s, u, a) cells that will be read with positive weight.
    Strict mode raises instead of substituting.
    """
    absent = needed & (model.counts == 0)
    n_absent = int(absent.sum())
    if n_absent and strict:
        s, u, a = np.argwhere(absent)[0]
        raise LookupError(f"outcome model has no observations for (s={s}, u={u}, a={a})")
    mu = np.where(np.isnan(model.mu), float(dataset.r.mean()), model.mu)
    return mu, n_absent


def direct_method(
    oracle: PosteriorOracle,
    d_hat: DensityRatio,
    model: OutcomeModel,
    dataset: Dataset,
    spec: MdpucSpec,
    eval_policy: PolicySpec | np.ndarray,
    strict: bool = False,
) -> Estimate:
    """Plug-in estimate from the outcome model, reweighted by the density ratio.

    Per sample, the posterior-and-policy-averaged modeled reward
    sum_{u,a} phi(u|Z_i) pi_e(a|S_i,u) mu_a(S_i,u), then averaged with
    weights d(S_i).
    """
    phi = oracle.posterior_rows(dataset.s, dataset.a, dataset.s_next)  # (n, U)
    pi_e = policy_table(eval_policy, spec)  # (S, U, A)
    needed = np.zeros(model.mu.shape, dtype=bool)
    weight_sua = np.zeros(model.mu.shape)
    np.add.at(weight_sua, dataset.s, phi[:, :, None] * pi_e[dataset.s])
    needed |= weight_sua > 0
    mu, n_absent = _filled_outcomes(model, needed, dataset, strict)
    per_sample = np.einsum("iu,iua,iua->i", phi, pi_e[dataset.s], mu[dataset.s])
    value = float(np.mean(d_hat.d[dataset.s] * per_sample))
    return Estimate(
        value=value,
        method=DIRECT_METHOD,
        diagnostics={
            "absent_cells": float(n_absent),
            "negative_d_states": float(len(d_hat.negative_states())),
        },
    )


def doubly_robust(
    weights: WeightVector,
    oracle: PosteriorOracle,
    d_hat: DensityRatio,
    model: OutcomeModel,
    dataset: Dataset,
    spec: MdpucSpec,
    eval_policy: PolicySpec | np.ndarray,
    strict: bool = False,
) -> Estimate:
    """Direct method plus the weighted average of modeled-reward residuals."""
    dm = direct_method(oracle, d_hat, model, dataset, spec, eval_policy, strict=strict)
    phi = oracle.posterior_rows(dataset.s, dataset.a, dataset.s_next)
    hits = np.zeros(model.mu.shape)
    np.add.at(hits, (dataset.s, slice(None), dataset.a), phi)
    mu, n_absent = _filled_outcomes(model, hits > 0, dataset, strict)
    predicted = np.einsum("iu,iu->i", phi, mu[dataset.s, :, dataset.a])
    value = dm.value + float(np.mean(weights.w * (dataset.r - predicted)))
    return Estimate(
        value=value,
        method=DOUBLY_ROBUST,
        diagnostics={
            "absent_cells": dm.diagnostics["absent_cells"] + float(n_absent),
            "weight_norm": float(np.linalg.norm(weights.w)),
        },
    )


def _augmented_pairs(dataset: Dataset) -> np.ndarray:
    """Indices whose successor transition lies in the same trajectory."""
    mask = np.ones(dataset.n, dtype=bool)
    mask[dataset.trajectory_offsets[1:] - 1] = False
    return np.flatnonzero(mask)


def ips_estimate(
    dataset: Dataset,
    oracle: PosteriorOracle,
    spec: MdpucSpec,
    eval_policy: PolicySpec | np.ndarray,
    behavior: PolicySpec | np.ndarray,
    gmm_hp: GmmHyperparams | None = None,
    seed: int = 0,
) -> Estimate:
    """Stationary-ratio importance weighting on the imputed-confounder chain.

    Treats x = (s, u_hat) as the state of an ordinary MDP: imputes
    confounders, fits the state density ratio on consecutive within-trajectory
    pairs of augmented states with the known per-state importance ratio
    pi_e/pi_b (no posterior averaging), and averages ratio-weighted rewards.
    The final transition of each trajectory has no imputable successor
    confounder, so it is excluded from the ratio fit but still enters the
    average.
    """
    u_hat = impute_confounders(oracle, dataset, seed)
    pi_e = policy_table(eval_policy, spec)  # (S, U, A)
    pi_b = policy_table(behavior, spec)
    if np.any(pi_b[dataset.s, u_hat, dataset.a] <= 0.0):
        raise OverlapError("behavior policy has zero probability on an observed (s, u_hat, a)")

    n_levels = spec.n_confounders
    n_aug = spec.n_states * n_levels
    x = dataset.s * n_levels + u_hat
    # Ratios only ever read at observed (x, a); zero-support entries stay 0.
    ratio = np.divide(pi_e, pi_b, out=np.zeros_like(pi_e), where=pi_b > 0)
    ratio_xa = ratio.reshape(n_aug, spec.n_actions)  # (X, A); x = s * n_levels + u

    idx = _augmented_pairs(dataset)
    if idx.size == 0:
        raise ValueError("no within-trajectory successor pairs; trajectories too short")
    counts = np.zeros((spec.n_actions, n_aug, n_aug))
    np.add.at(counts, (dataset.a[idx], x[idx], x[idx + 1]), 1.0)
    beta_axy = np.where(counts > 0, ratio_xa.T[:, :, None], 0.0)
    summary = TransitionSummary.from_counts(counts, beta_axy)
    d_aug = estimate_from_summary(summary, gmm_hp or GmmHyperparams())

    weights = d_aug.d[x] * ratio_xa[x, dataset.a]
    value = float(np.mean(weights * dataset.r))
    return Estimate(
        value=value,
        method=IPS,
        diagnostics={"negative_d_states": float(len(d_aug.negative_states()))},
    )
