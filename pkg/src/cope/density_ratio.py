"""Stationary state density-ratio estimation by iterated minimax GMM.

The ratio d(s) of evaluation-policy to behavior-policy stationary state
probabilities is identified by the moment conditions

    E[d(S)] = 1    and    E[d(S) beta(Z) - d(S') | S'] = 0,

where beta is the posterior-averaged importance ratio.  With discrete states
and norm-bounded RKHS test classes both sides of the resulting minimax game
have closed forms: the inner maximization is a regularized quadratic in the
test-function coefficients, and the outer minimization a regularized
quadratic in the ratio values.  Everything below works from per-triple counts
so the same code runs on sampled data and on exact population probabilities.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._linalg import inv_psd, solve_psd
from .confounding import BetaTable, beta_table, exact_posterior, stationary_z_distribution
from .envs import Dataset, MdpucSpec, PolicySpec


def kernel_matrix(tag: str, n_states: int) -> np.ndarray:
    """Gram matrix of a state kernel over the full state space."""
    if tag == "identity":
        return np.eye(n_states)
    raise ValueError(f"unknown kernel tag {tag!r}")


@dataclass(frozen=True)
class GmmHyperparams:
    """Regularizers and iteration count for the minimax solve.

    Defaults follow the benchmark settings: 1e-8 ridge on both function
    classes and on the scalar normalization multipliers, five outer
    iterations, identity kernels.
    """

    lambda_h: float = 1e-8
    lambda_d: float = 1e-8
    lambda_c: float = 1e-8
    n_iterations: int = 5
    kernel_h: str = "identity"
    kernel_d: str = "identity"

    def __post_init__(self):
        if min(self.lambda_h, self.lambda_d, self.lambda_c) <= 0:
            raise ValueError("regularizers must be > 0")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")


@dataclass(frozen=True)
class TransitionSummary:
    """Sufficient statistics of a dataset for the density-ratio solve.

    ``n_axy[a, x, y]`` counts transitions with action a from state x to
    state y; ``beta_axy`` carries the ratio value for each observed triple
    (zero where unobserved).  Counts may be fractional: population-level
    probabilities slot in directly because every formula below only uses
    count ratios.
    """

    n_axy: np.ndarray  # (A, S, S)
    beta_axy: np.ndarray  # (A, S, S)
    n: float
    n_x: np.ndarray  # (S,) source-state counts
    np_x: np.ndarray  # (S,) successor-state counts

    @classmethod
    def from_counts(cls, n_axy: np.ndarray, beta_axy: np.ndarray) -> "TransitionSummary":
        n_axy = np.asarray(n_axy, dtype=float)
        return cls(
            n_axy=n_axy,
            beta_axy=np.asarray(beta_axy, dtype=float),
            n=float(n_axy.sum()),
            n_x=n_axy.sum(axis=(0, 2)),
            np_x=n_axy.sum(axis=(0, 1)),
        )

    @property
    def n_states(self) -> int:
        return self.n_axy.shape[1]


def summarize(dataset: Dataset, beta: BetaTable) -> TransitionSummary:
    """Count observed triples and attach their ratio values."""
    if dataset.n == 0:
        raise ValueError("dataset is empty")
    n_states = beta.values.shape[0]
    n_actions = beta.values.shape[1]
    counts = np.zeros((n_actions, n_states, n_states))
    np.add.at(counts, (dataset.a, dataset.s, dataset.s_next), 1.0)
    observed = counts > 0
    beta_sat = np.transpose(beta.values, (1, 0, 2))  # (A, S, S)
    if np.any(observed & ~np.transpose(beta.reachable, (1, 0, 2))):
        raise ValueError("dataset contains a triple without a ratio entry")
    beta_axy = np.where(observed, np.nan_to_num(beta_sat, nan=0.0), 0.0)
    return TransitionSummary.from_counts(counts, beta_axy)


def population_summary(
    spec: MdpucSpec,
    behavior: PolicySpec | np.ndarray,
    eval_policy: PolicySpec | np.ndarray,
) -> TransitionSummary:
    """Summary with counts replaced by exact stationary triple probabilities."""
    oracle = exact_posterior(spec, behavior)
    beta = beta_table(oracle, eval_policy, behavior, spec)
    pz = stationary_z_distribution(spec, behavior)  # (S, A, S)
    counts = np.transpose(pz, (1, 0, 2))  # (A, S, S)
    beta_axy = np.where(counts > 0, np.nan_to_num(np.transpose(beta.values, (1, 0, 2)), nan=0.0), 0.0)
    return TransitionSummary.from_counts(counts, beta_axy)


@dataclass(frozen=True)
class DensityRatio:
    """Estimated state density ratio: coefficient vector and evaluated values."""

    d: np.ndarray  # (S,) d(s), the kernel expansion evaluated on all states
    gamma: np.ndarray  # (S,) expansion coefficients

    def negative_states(self) -> np.ndarray:
        """States with a negative estimate; reported, never silently clipped."""
        return np.flatnonzero(self.d < 0)


def constant_ratio(n_states: int, value: float = 1.0) -> DensityRatio:
    return DensityRatio(d=np.full(n_states, value), gamma=np.full(n_states, value))


def clip_negative(ratio: DensityRatio, summary: TransitionSummary, kernel_d: str = "identity") -> DensityRatio:
    """Clip negative entries at zero and rescale so the empirical mean is 1."""
    d = np.maximum(ratio.d, 0.0)
    mean = float(summary.n_x @ d) / summary.n
    if mean > 0:
        d = d / mean
    k_d = kernel_matrix(kernel_d, len(d))
    gamma = np.linalg.lstsq(k_d, d, rcond=None)[0]
    return DensityRatio(d=d, gamma=gamma)


def inner_assemble(
    summary: TransitionSummary,
    d: np.ndarray,
    d_tilde: np.ndarray,
    hp: GmmHyperparams,
) -> tuple[np.ndarray, np.ndarray]:
    """Regularized quadratic of the inner (test function) maximization.

    Returns ``(Q, q)`` with Q already including the block-diagonal ridge
    (lambda_h on the kernel block, lambda_c on each normalization scalar).
    The inner optimum value is ``q^T Q^{-1} q``; q holds the moment averages
    at the current iterate d, Q the quadratic weights built from the prior
    iterate d_tilde.  Layout: entries [0, m) are the kernel-section moments,
    entry m the source-mean moment E[d(S)] - 1, entry m+1 the successor-mean
    moment E[d(S')] - 1.
    """
    if summary.n <= 0:
        raise ValueError("summary is empty")
    m = summary.n_states
    n = summary.n
    k_h = kernel_matrix(hp.kernel_h, m)
    counts = summary.n_axy  # (A, S, S)
    betas = summary.beta_axy

    # Per-triple residuals at the prior iterate: beta * d~(y) - d~(z).
    res = betas * d_tilde[None, :, None] - d_tilde[None, None, :]
    w = counts * res
    g = np.einsum("ayz,ayz->z", w, res)  # sum of squared residuals per successor
    phi1 = np.einsum("ayz,y->z", w, d_tilde - 1.0)
    phi2 = np.einsum("ayz,z->z", w, d_tilde - 1.0)

    Q = np.zeros((m + 2, m + 2))
    Q[:m, :m] = (k_h * g[None, :]) @ k_h / n
    Q[:m, m] = k_h @ phi1 / n
    Q[m, :m] = Q[:m, m]
    Q[:m, m + 1] = k_h @ phi2 / n
    Q[m + 1, :m] = Q[:m, m + 1]
    Q[m, m] = float(summary.n_x @ (d_tilde - 1.0) ** 2) / n
    cross = np.einsum("ayz,y,z->", counts, d_tilde - 1.0, d_tilde - 1.0)
    Q[m, m + 1] = Q[m + 1, m] = cross / n
    Q[m + 1, m + 1] = float(summary.np_x @ (d_tilde - 1.0) ** 2) / n

    Q[:m, :m] += hp.lambda_h * k_h
    Q[m, m] += hp.lambda_c
    Q[m + 1, m + 1] += hp.lambda_c

    q = np.empty(m + 2)
    per_state = np.einsum("ayz,y->z", counts * betas, d)  # sum over triples into each z
    q[:m] = k_h @ (per_state - summary.np_x * d) / n
    q[m] = float(summary.n_x @ (d - 1.0)) / n
    q[m + 1] = float(summary.np_x @ (d - 1.0)) / n
    return Q, q


def _moment_map(summary: TransitionSummary, k_h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Affine map d -> moment vector: q(d) = A @ d - e."""
    m = summary.n_states
    n = summary.n
    weighted = np.einsum("ayz,zx->yx", summary.n_axy * summary.beta_axy, k_h)  # (y, x)
    psi = weighted.T - k_h * summary.np_x[None, :]  # psi[x, y]
    A = np.empty((m + 2, m))
    A[:m] = psi / n
    A[m] = summary.n_x / n
    A[m + 1] = summary.np_x / n
    e = np.zeros(m + 2)
    e[m] = e[m + 1] = 1.0
    return A, e


def outer_solve(summary: TransitionSummary, d_tilde: np.ndarray, hp: GmmHyperparams) -> DensityRatio:
    """One minimax iteration: solve the outer quadratic at fixed inner weighting.

    The inner optimum q(d)^T (Q+D)^{-1} q(d) is a quadratic in the ratio
    values because the moment vector is affine in d; adding the lambda_d
    kernel ridge gives the coefficient solve
    gamma = -1/2 (K B K + lambda_d K)^{-1} K b.
    """
    m = summary.n_states
    Q, _ = inner_assemble(summary, d_tilde, d_tilde, hp)
    M = inv_psd(Q)
    k_h = kernel_matrix(hp.kernel_h, m)
    A, e = _moment_map(summary, k_h)
    B = A.T @ M @ A
    b = -2.0 * (A.T @ (M @ e))
    k_d = kernel_matrix(hp.kernel_d, m)
    lhs = k_d @ B @ k_d + hp.lambda_d * k_d
    gamma = -0.5 * solve_psd(lhs, k_d @ b)
    return DensityRatio(d=k_d @ gamma, gamma=gamma)


def estimate_from_summary(summary: TransitionSummary, hp: GmmHyperparams | None = None) -> DensityRatio:
    """Iterated minimax estimate starting from the all-ones prior."""
    hp = hp or GmmHyperparams()
    d_tilde = np.ones(summary.n_states)
    ratio = constant_ratio(summary.n_states)
    for _ in range(hp.n_iterations):
        ratio = outer_solve(summary, d_tilde, hp)
        d_tilde = ratio.d
    return ratio


def estimate_density_ratio(dataset: Dataset, beta: BetaTable, hp: GmmHyperparams | None = None) -> DensityRatio:
    """Estimate the stationary state density ratio from logged transitions."""
    return estimate_from_summary(summarize(dataset, beta), hp)


@dataclass(frozen=True)
class MomentResiduals:
    mean_residual: float
    conditional: np.ndarray  # (S,); NaN for successor states never observed


def moment_residuals(ratio: DensityRatio, summary: TransitionSummary) -> MomentResiduals:
    """Empirical residuals of the defining moment conditions at a given d."""
    d = ratio.d
    mean_residual = float(summary.n_x @ d) / summary.n - 1.0
    flow = np.einsum("ayz,y->z", summary.n_axy * summary.beta_axy, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        conditional = np.where(summary.np_x > 0, (flow - summary.np_x * d) / summary.np_x, np.nan)
    return MomentResiduals(mean_residual=mean_residual, conditional=conditional)


DENSITY_RATIO_HEADER = ["s", "d_hat"]


def write_density_ratio_csv(ratio: DensityRatio, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DENSITY_RATIO_HEADER)
        for s, value in enumerate(ratio.d):
            writer.writerow([s, repr(float(value))])
