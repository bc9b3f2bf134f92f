"""Optimal balancing weights via the closed-form kernel quadratic.

The sample weights minimize the worst case, over a unit ball of an RKHS of
(state, confounder) functions per action, of the squared conditional bias of
the weighted estimator plus a ridge penalty.  That worst case is an explicit
quadratic W^T G W - 2 g^T W + C whose coefficients are posterior expectations
of kernel evaluations between samples; weights are constant across samples
sharing an observed triple, so the solve compresses from n to the number of
distinct triples.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._linalg import solve_psd
from .confounding import PosteriorOracle
from .density_ratio import DensityRatio
from .envs import Dataset, MdpucSpec, PolicySpec, policy_table

DEFAULT_BALANCE_LAMBDA = 1e-3


@dataclass(frozen=True)
class BalanceKernel:
    """Tuple kernel on (state, confounder) pairs: w_s*1{s=s'} + w_u*1{u=u'}."""

    w_s: float = 0.5
    w_u: float = 0.5

    def __post_init__(self):
        if self.w_s < 0 or self.w_u < 0 or self.w_s + self.w_u <= 0:
            raise ValueError("kernel weights must be nonnegative with positive sum")

    def pair(self, s: int, u: int, s2: int, u2: int) -> float:
        return self.w_s * (s == s2) + self.w_u * (u == u2)

    def gram(self, states: np.ndarray, levels: np.ndarray) -> np.ndarray:
        """Gram matrix over explicit (state, level) points."""
        return self.w_s * (states[:, None] == states[None, :]) + self.w_u * (
            levels[:, None] == levels[None, :]
        )


@dataclass(frozen=True)
class CompressedData:
    """Unique observed triples with multiplicities and the sample->group map."""

    s: np.ndarray  # (C,)
    a: np.ndarray  # (C,)
    s_next: np.ndarray  # (C,)
    counts: np.ndarray  # (C,)
    index_map: np.ndarray  # (n,) -> [C]

    @property
    def n_unique(self) -> int:
        return len(self.counts)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def compress(dataset: Dataset) -> CompressedData:
    """Group samples by their observed (s, a, s') triple."""
    triples = np.stack([dataset.s, dataset.a, dataset.s_next], axis=1)
    unique, inverse, counts = np.unique(triples, axis=0, return_inverse=True, return_counts=True)
    return CompressedData(
        s=unique[:, 0],
        a=unique[:, 1],
        s_next=unique[:, 2],
        counts=counts.astype(float),
        index_map=inverse.astype(np.int64),
    )


def posterior_kernel_expectation(
    oracle: PosteriorOracle,
    kernel: BalanceKernel,
    z_i: tuple[int, int, int],
    z_j: tuple[int, int, int],
) -> float:
    """E[k((S_i, U_i), (S_j, U_j'))] with each confounder drawn from its posterior."""
    phi_i = oracle.posterior(*z_i)
    phi_j = oracle.posterior(*z_j)
    return float(kernel.w_s * (z_i[0] == z_j[0]) + kernel.w_u * (phi_i @ phi_j))


@dataclass(frozen=True)
class WeightVector:
    """Balancing weights, one per sample, plus the per-unique-triple values."""

    w: np.ndarray  # (n,)
    compressed_w: np.ndarray  # (C,)
    balance_lambda: float

    @property
    def n(self) -> int:
        return len(self.w)


def _posterior_rows(compressed: CompressedData, oracle: PosteriorOracle) -> np.ndarray:
    return oracle.posterior_rows(compressed.s, compressed.a, compressed.s_next)


def build_quadratic(
    compressed: CompressedData,
    oracle: PosteriorOracle,
    d_hat: DensityRatio,
    spec: MdpucSpec,
    eval_policy: PolicySpec | np.ndarray,
    kernel: BalanceKernel = BalanceKernel(),
    balance_lambda: float = DEFAULT_BALANCE_LAMBDA,
) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of the compressed worst-case quadratic.

    ``G[c, c'] = N_c N_c' 1{A_c = A_c'} E[k | z_c, z_c'] + lambda N_c 1{c = c'}``
    and ``g[c] = N_c sum_c' N_c' d(S_c') E[pi_e(A_c | S_c', U'_c') k | z_c, z_c']``,
    all posterior expectations taken with independent confounder copies per
    triple.  The overall 1/n^2 scale common to both is left out; it cancels in
    the weight solve and is restored by sup_objective_value.
    """
    phi = _posterior_rows(compressed, oracle)  # (C, U)
    N = compressed.counts
    s = compressed.s
    same_state = s[:, None] == s[None, :]
    e_k = kernel.w_s * same_state + kernel.w_u * (phi @ phi.T)
    same_action = compressed.a[:, None] == compressed.a[None, :]
    G = (N[:, None] * N[None, :]) * same_action * e_k + balance_lambda * np.diag(N)

    pi_e = policy_table(eval_policy, spec)  # (S, U, A)
    # pe[c, c', u'] = pi_e(A_c | S_c', u'); advanced indices land in front.
    pe = pi_e[compressed.s[None, :], :, compressed.a[:, None]]  # (C, C, U)
    d_src = d_hat.d[s]
    term_s = np.einsum("ku,jku->jk", phi, pe)  # sum_u' phi[c',u'] pe[c,c',u']
    term_u = np.einsum("ju,ku,jku->jk", phi, phi, pe)
    inner = kernel.w_s * same_state * term_s + kernel.w_u * term_u  # (C, C)
    g = N * (inner @ (N * d_src))
    return G, g


def objective_constant(
    compressed: CompressedData,
    oracle: PosteriorOracle,
    d_hat: DensityRatio,
    spec: MdpucSpec,
    eval_policy: PolicySpec | np.ndarray,
    kernel: BalanceKernel = BalanceKernel(),
) -> float:
    """The weight-independent constant of the worst-case quadratic (1/n^2 scale).

    Equals the worst-case objective at W = 0; needed to report supremum
    values, not to solve for weights.
    """
    phi = _posterior_rows(compressed, oracle)  # (C, U)
    pi_e = policy_table(eval_policy, spec)  # (S, U, A)
    pa = pi_e[compressed.s]  # (C, U, A)
    scale = compressed.counts * d_hat.d[compressed.s]  # (C,)
    n = compressed.n
    # w_s block: group by shared source state.
    v = np.einsum("cu,cua->ca", phi, pa)  # posterior-averaged action probs
    total_s = 0.0
    for state in np.unique(compressed.s):
        rows = compressed.s == state
        block = (scale[rows, None] * v[rows]).sum(axis=0)  # (A,)
        total_s += float(block @ block)
    # w_u block: levels must match across the pair.
    t = np.einsum("c,cu,cua->ua", scale, phi, pa)
    total_u = float((t * t).sum())
    return (kernel.w_s * total_s + kernel.w_u * total_u) / (n * n)


def solve_weights(
    G: np.ndarray,
    g: np.ndarray,
    compressed: CompressedData,
    balance_lambda: float = DEFAULT_BALANCE_LAMBDA,
) -> WeightVector:
    """Minimize the worst-case quadratic and expand group weights to samples."""
    compressed_w = solve_psd(G, g)
    return WeightVector(
        w=compressed_w[compressed.index_map],
        compressed_w=compressed_w,
        balance_lambda=balance_lambda,
    )


def sup_objective_value(weights: WeightVector, G: np.ndarray, g: np.ndarray, constant: float) -> float:
    """Worst-case objective of the weighted estimator at the given weights.

    Evaluates the closed-form supremum over the unit-radius kernel ball,
    restoring the 1/n^2 scale that build_quadratic leaves out.
    """
    w = weights.compressed_w
    n = weights.n
    return float(w @ G @ w - 2.0 * g @ w) / (n * n) + constant


def eval_J_for_g(
    weights: WeightVector,
    g_values: np.ndarray,
    oracle: PosteriorOracle,
    d_hat: DensityRatio,
    spec: MdpucSpec,
    eval_policy: PolicySpec | np.ndarray,
    dataset: Dataset,
) -> float:
    """Objective value against one explicit test function.

    ``g_values[a, s, u]`` gives the test function per action; the conditional
    bias term averages, over samples and their posteriors, the balance
    residual (W_i 1{A_i = a} - d(S_i) pi_e(a | S_i, u)) against g.  Returns
    the squared bias plus the ridge term.
    """
    if g_values.shape != (spec.n_actions, spec.n_states, spec.n_confounders):
        raise ValueError(f"test function has shape {g_values.shape}")
    phi = oracle.posterior_rows(dataset.s, dataset.a, dataset.s_next)  # (n, U)
    pi_e = policy_table(eval_policy, spec)  # (S, U, A)
    g_su = np.transpose(g_values, (1, 2, 0))  # (S, U, A)
    # Per-sample contribution: sum_u phi_i(u) [W_i g_{A_i}(S_i,u) - d(S_i) sum_a pi_e g_a(S_i,u)]
    own = np.einsum("iu,iu->i", phi, g_su[dataset.s, :, :][np.arange(dataset.n), :, dataset.a])
    mixed = np.einsum("iu,iua->i", phi, pi_e[dataset.s] * g_su[dataset.s])
    bias = float(np.mean(weights.w * own - d_hat.d[dataset.s] * mixed))
    n = dataset.n
    return bias * bias + weights.balance_lambda * float(weights.w @ weights.w) / (n * n)


WEIGHTS_HEADER = ["i", "z_index", "w"]


def write_weights_csv(weights: WeightVector, compressed: CompressedData, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(WEIGHTS_HEADER)
        for i, (z_index, w) in enumerate(zip(compressed.index_map, weights.w)):
            writer.writerow([i, z_index, repr(float(w))])
