"""Confounder posterior oracle, controlled noise injection, and derived tables.

The posterior of the confounder level given an observed transition triple
z = (s, a, s') is computed exactly from a known environment and behavior
policy.  Downstream code consumes it through three surfaces: the
posterior-averaged importance ratio table, sampled confounder imputations for
the baselines, and posterior-kernel expectations in the balancing module.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .envs import IidConfounders, MdpucSpec, PolicySpec, policy_table, stationary_distribution

# Floor applied to probabilities before taking logs; keeps the log-odds
# representation finite for (numerically) zero posterior entries.
LOGIT_FLOOR = 1e-12

POSTERIOR_ATOL = 1e-10


class UnreachableTripleError(LookupError):
    """A queried (s, a, s') has zero probability under the behavior model."""


class OverlapError(ValueError):
    """Behavior policy puts zero probability on something the data contains."""


@dataclass(frozen=True)
class PosteriorOracle:
    """Per-triple categorical posterior over confounder levels.

    Unreachable triples are stored as absent (NaN behind a mask) rather than
    defaulting to uniform, so that querying one fails loudly instead of
    masking a simulator/data mismatch.
    """

    probs: np.ndarray  # (S, A, S, U); NaN where unreachable
    reachable: np.ndarray  # (S, A, S) bool
    n_states: int
    n_actions: int
    n_levels: int

    def __post_init__(self):
        got = self.probs[self.reachable]
        if got.size and (np.any(got < 0) or np.any(np.abs(got.sum(axis=-1) - 1) > POSTERIOR_ATOL)):
            raise ValueError("posterior entries must be distributions")

    def posterior(self, s: int, a: int, s_next: int) -> np.ndarray:
        if not self.reachable[s, a, s_next]:
            raise UnreachableTripleError(f"triple (s={s}, a={a}, s'={s_next}) is unreachable")
        return self.probs[s, a, s_next]

    def require_reachable(self, s: np.ndarray, a: np.ndarray, s_next: np.ndarray) -> None:
        bad = ~self.reachable[s, a, s_next]
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise UnreachableTripleError(
                f"dataset contains unreachable triple (s={s[i]}, a={a[i]}, s'={s_next[i]})"
            )

    def posterior_rows(self, s: np.ndarray, a: np.ndarray, s_next: np.ndarray) -> np.ndarray:
        """Posterior rows for arrays of triples, shape (n, U)."""
        self.require_reachable(s, a, s_next)
        return self.probs[s, a, s_next]


def exact_posterior(spec: MdpucSpec, behavior: PolicySpec | np.ndarray) -> PosteriorOracle:
    """Exact confounder posterior under the iid-confounder model.

    For each triple, the posterior is proportional to
    prior(u) * pi_b(a|s,u) * P(s'|s,a,u), normalized over levels.
    """
    if not isinstance(spec.confounder_process, IidConfounders):
        raise ValueError("exact_posterior requires iid confounders")
    prior = spec.iid_probs
    pi_b = policy_table(behavior, spec)  # (S, U, A)
    # weight[s,a,s',u] = prior[u] * pi_b(a|s,u) * T[s,a,u,s']
    weight = prior[None, None, None, :] * np.transpose(pi_b, (0, 2, 1))[:, :, None, :] * np.transpose(
        spec.transition, (0, 1, 3, 2)
    )
    total = weight.sum(axis=-1)
    reachable = total > 0.0
    probs = np.full_like(weight, np.nan)
    probs[reachable] = weight[reachable] / total[reachable][:, None]
    return PosteriorOracle(
        probs=probs,
        reachable=reachable,
        n_states=spec.n_states,
        n_actions=spec.n_actions,
        n_levels=spec.n_confounders,
    )


def inject_logit_noise(oracle: PosteriorOracle, sigma: float, seed: int) -> PosteriorOracle:
    """Perturb every reachable posterior by Gaussian noise on its log-odds.

    Each triple independently receives a spherical Gaussian vector (std
    ``sigma``) added to log(p) (floored at LOGIT_FLOOR); the result maps back
    through exp and renormalization, which cancels any additive constant in
    the log-odds. ``sigma == 0`` returns the oracle unchanged.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return oracle
    rng = np.random.default_rng(seed)
    probs = oracle.probs.copy()
    # Lexicographic iteration over reachable triples fixes the draw order.
    idx = np.argwhere(oracle.reachable)
    for s, a, sn in idx:
        logits = np.log(np.maximum(oracle.probs[s, a, sn], LOGIT_FLOOR))
        logits = logits + rng.normal(0.0, sigma, size=oracle.n_levels)
        p = np.exp(logits - logits.max())
        probs[s, a, sn] = p / p.sum()
    return PosteriorOracle(
        probs=probs,
        reachable=oracle.reachable,
        n_states=oracle.n_states,
        n_actions=oracle.n_actions,
        n_levels=oracle.n_levels,
    )


def perturb_distribution(p: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Apply one additive log-odds perturbation to a single distribution."""
    logits = np.log(np.maximum(p, LOGIT_FLOOR)) + noise
    out = np.exp(logits - logits.max())
    return out / out.sum()


def stationary_z_distribution(spec: MdpucSpec, policy: PolicySpec | np.ndarray) -> np.ndarray:
    """Stationary probability of each observed triple, as an (S, A, S) array."""
    sd = stationary_distribution(spec, policy)
    # p(s,a,s') = sum_u p(s,u,a) T[s,a,u,s']
    return np.einsum("sua,saut->sat", sd.joint, spec.transition)


def asd(
    spec: MdpucSpec,
    behavior: PolicySpec | np.ndarray,
    sigma: float,
    n_s: int = 5,
    n_e: int = 50,
    seed: int = 0,
) -> float:
    """Average standard deviation of noise-perturbed posterior probabilities.

    Samples ``n_s`` triples from the behavior stationary distribution over
    triples, perturbs each posterior with ``n_e`` independent log-odds noise
    vectors, and averages the per-(triple, level) sample standard deviations.
    """
    if n_s < 1 or n_e < 2:
        raise ValueError("need n_s >= 1 and n_e >= 2")
    if sigma == 0.0:
        return 0.0
    rng = np.random.default_rng(seed)
    oracle = exact_posterior(spec, behavior)
    z_probs = stationary_z_distribution(spec, behavior).reshape(-1)
    z_probs = z_probs / z_probs.sum()
    draws = rng.choice(z_probs.size, size=n_s, p=z_probs)
    total = 0.0
    for flat in draws:
        s, a, sn = np.unravel_index(flat, oracle.reachable.shape)
        base = oracle.posterior(int(s), int(a), int(sn))
        noise = rng.normal(0.0, sigma, size=(n_e, oracle.n_levels))
        perturbed = np.stack([perturb_distribution(base, e) for e in noise])
        total += perturbed.std(axis=0, ddof=1).sum()
    return total / (n_s * oracle.n_levels)


@dataclass(frozen=True)
class BetaTable:
    """Posterior-averaged importance ratio per reachable triple."""

    values: np.ndarray  # (S, A, S); NaN where unreachable
    reachable: np.ndarray  # (S, A, S) bool

    def lookup(self, s: np.ndarray, a: np.ndarray, s_next: np.ndarray) -> np.ndarray:
        out = self.values[s, a, s_next]
        if np.any(~self.reachable[s, a, s_next]):
            raise UnreachableTripleError("dataset contains a triple without a ratio entry")
        return out


def beta_table(
    oracle: PosteriorOracle,
    eval_policy: PolicySpec | np.ndarray,
    behavior: PolicySpec | np.ndarray,
    spec: MdpucSpec,
) -> BetaTable:
    """Posterior expectation of pi_e/pi_b over levels, per reachable triple."""
    pi_e = policy_table(eval_policy, spec)  # (S, U, A)
    pi_b = policy_table(behavior, spec)
    post = oracle.probs  # (S, A, S, U)
    needed = np.zeros(pi_b.shape, dtype=bool)  # (S, U, A) combos with posterior mass
    for u in range(oracle.n_levels):
        mass = np.nan_to_num(post[..., u], nan=0.0) > 0
        needed[:, u, :] |= mass.any(axis=2)
    if np.any(needed & (pi_b <= 0.0)):
        raise OverlapError("behavior policy has zero probability on a supported (s, u, a)")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pi_b > 0, pi_e / np.where(pi_b > 0, pi_b, 1.0), 0.0)  # (S, U, A)
    # beta[s,a,s'] = sum_u post[s,a,s',u] * ratio[s,u,a]
    values = np.einsum("satu,sua->sat", np.nan_to_num(post, nan=0.0), ratio)
    values = np.where(oracle.reachable, values, np.nan)
    return BetaTable(values=values, reachable=oracle.reachable.copy())


def impute_confounders(oracle: PosteriorOracle, dataset, seed: int) -> np.ndarray:
    """Sample one confounder level per transition from its posterior."""
    rng = np.random.default_rng(seed)
    rows = oracle.posterior_rows(dataset.s, dataset.a, dataset.s_next)
    cum = np.cumsum(rows, axis=1)
    return (rng.random(dataset.n)[:, None] < cum).argmax(axis=1)


# ---------------------------------------------------------------------------
# Oracle CSV round trip (debugging / golden tests)
# ---------------------------------------------------------------------------

ORACLE_HEADER = ["s", "a", "s_next", "u", "prob"]


def write_oracle_csv(oracle: PosteriorOracle, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ORACLE_HEADER)
        for s, a, sn in np.argwhere(oracle.reachable):
            for u in range(oracle.n_levels):
                writer.writerow([s, a, sn, u, repr(float(oracle.probs[s, a, sn, u]))])


def read_oracle_csv(path, n_states: int, n_actions: int, n_levels: int) -> PosteriorOracle:
    probs = np.full((n_states, n_actions, n_states, n_levels), np.nan)
    reachable = np.zeros((n_states, n_actions, n_states), dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ORACLE_HEADER:
            raise ValueError(f"unexpected oracle header {header!r}")
        for row in reader:
            s, a, sn, u = (int(x) for x in row[:4])
            probs[s, a, sn, u] = float(row[4])
            reachable[s, a, sn] = True
    return PosteriorOracle(
        probs=probs, reachable=reachable, n_states=n_states, n_actions=n_actions, n_levels=n_levels
    )
