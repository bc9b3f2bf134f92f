"""Tabular confounded-MDP data model, benchmark environments, and simulation.

A confounded MDP here is a finite MDP in which a latent confounder level is
drawn at every step and influences the action choice, the transition, and the
reward.  Estimators only ever see (state, action, reward, next state); the
confounder stream is retained on sampled datasets purely so tests can check
against it.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

PROB_ATOL = 1e-12

MODELWIN = "modelwin"
GRIDWORLD = "gridworld"

GRID_SIZE = 10

# GridWorld action ids, in reward-table order.
UP, RIGHT, DOWN, LEFT = 0, 1, 2, 3


def _check_dist(p: np.ndarray, what: str) -> None:
    if np.any(p < -PROB_ATOL) or np.any(p > 1 + PROB_ATOL):
        raise ValueError(f"{what}: probabilities outside [0, 1]")
    total = p.sum(axis=-1)
    if not np.allclose(total, 1.0, rtol=0.0, atol=PROB_ATOL):
        raise ValueError(f"{what}: rows do not sum to 1 (max err {np.abs(total - 1).max():.3g})")


@dataclass(frozen=True)
class IidConfounders:
    """Confounder level drawn independently each step."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        _check_dist(self.probs, "iid confounder probs")


@dataclass(frozen=True)
class MarkovConfounders:
    """Confounder level forms a Markov chain within each trajectory."""

    init: np.ndarray
    transition: np.ndarray  # (n_levels, n_levels), row = previous level

    def __post_init__(self):
        object.__setattr__(self, "init", np.asarray(self.init, dtype=float))
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))
        _check_dist(self.init, "markov confounder init")
        _check_dist(self.transition, "markov confounder transition")


@dataclass(frozen=True)
class MixtureConfounders:
    """Per-step mixture: with probability ``alpha`` draw iid, else Markov.

    The first step of every trajectory draws from the Markov init
    distribution in both branches.
    """

    alpha: float
    iid: IidConfounders
    markov: MarkovConfounders

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"mixture alpha must be in [0, 1], got {self.alpha}")


ConfounderProcess = Union[IidConfounders, MarkovConfounders, MixtureConfounders]


@dataclass(frozen=True)
class MdpucSpec:
    """Full tabular environment: dynamics, rewards, and the confounder process.

    ``transition[s, a, u]`` is a distribution over next states and
    ``mean_reward[s, a, u, s']`` the (deterministic, in both benchmarks)
    reward for that step.
    """

    n_states: int
    n_actions: int
    n_confounders: int
    confounder_values: np.ndarray  # (n_confounders,) numeric level values
    transition: np.ndarray  # (S, A, U, S)
    mean_reward: np.ndarray  # (S, A, U, S)
    start_dist: np.ndarray  # (S,)
    confounder_process: ConfounderProcess

    def __post_init__(self):
        for name in ("confounder_values", "transition", "mean_reward", "start_dist"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        expected = (self.n_states, self.n_actions, self.n_confounders, self.n_states)
        if self.transition.shape != expected:
            raise ValueError(f"transition shape {self.transition.shape} != {expected}")
        if self.mean_reward.shape != expected:
            raise ValueError(f"mean_reward shape {self.mean_reward.shape} != {expected}")
        _check_dist(self.transition, "transition kernel")
        _check_dist(self.start_dist, "start distribution")

    def with_confounder_process(self, process: ConfounderProcess) -> "MdpucSpec":
        return replace(self, confounder_process=process)

    @property
    def iid_probs(self) -> np.ndarray:
        """Marginal level probabilities; defined only for the iid process."""
        if not isinstance(self.confounder_process, IidConfounders):
            raise ValueError("confounder process is not iid")
        return self.confounder_process.probs


@dataclass(frozen=True)
class PolicySpec:
    """Scalar-parameter confounded policy for one of the benchmark families."""

    environment: str  # MODELWIN or GRIDWORLD
    pi: float

    def __post_init__(self):
        if self.environment not in (MODELWIN, GRIDWORLD):
            raise ValueError(f"unknown policy family {self.environment!r}")


@dataclass
class Dataset:
    """Concatenated logged transitions with trajectory boundaries.

    ``hidden_u`` carries the confounder levels that generated the data.  It
    exists only so tests can validate against the truth; estimators must not
    read it.
    """

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    trajectory_offsets: np.ndarray
    hidden_u: np.ndarray | None = None

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.int64)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.r = np.asarray(self.r, dtype=float)
        self.s_next = np.asarray(self.s_next, dtype=np.int64)
        self.trajectory_offsets = np.asarray(self.trajectory_offsets, dtype=np.int64)
        off = self.trajectory_offsets
        if off[0] != 0 or off[-1] != len(self.s) or np.any(np.diff(off) <= 0):
            raise ValueError("trajectory_offsets must be strictly increasing from 0 to n")

    @property
    def n(self) -> int:
        return len(self.s)

    @property
    def n_trajectories(self) -> int:
        return len(self.trajectory_offsets) - 1

    def hidden_confounders(self) -> np.ndarray:
        """Test-only accessor for the generating confounder levels."""
        if self.hidden_u is None:
            raise ValueError("dataset was built without hidden confounders")
        return self.hidden_u


# ---------------------------------------------------------------------------
# Benchmark environments
# ---------------------------------------------------------------------------

_IID_LEVELS = np.array([0.1, 0.2])
_IID_PROBS = np.array([0.3, 0.7])


def build_modelwin(confounder_process: ConfounderProcess | None = None) -> MdpucSpec:
    """Three-state, two-action benchmark with confounded transitions and rewards.

    From s0, action a0 moves to s1 w.p. 0.7+u and s2 w.p. 0.3-u; action a1
    swaps those roles (0.3+u / 0.7-u).  s1 and s2 return to s0 regardless of
    the action, paying 10+20u and -(10+20u) respectively; leaving s0 pays 0.
    """
    S, A, U = 3, 2, 2
    T = np.zeros((S, A, U, S))
    R = np.zeros((S, A, U, S))
    for ui, u in enumerate(_IID_LEVELS):
        T[0, 0, ui, 1] = 0.7 + u
        T[0, 0, ui, 2] = 0.3 - u
        T[0, 1, ui, 1] = 0.3 + u
        T[0, 1, ui, 2] = 0.7 - u
        for a in range(A):
            T[1, a, ui, 0] = 1.0
            T[2, a, ui, 0] = 1.0
            R[1, a, ui, :] = 10.0 + 20.0 * u
            R[2, a, ui, :] = -10.0 - 20.0 * u
    start = np.zeros(S)
    start[0] = 1.0
    process = confounder_process if confounder_process is not None else IidConfounders(_IID_PROBS)
    return MdpucSpec(S, A, U, _IID_LEVELS, T, R, start, process)


def grid_state(row: int, col: int) -> int:
    """Grid cell -> state id; row counted from the bottom."""
    return row * GRID_SIZE + col


def build_gridworld(confounder_process: ConfounderProcess | None = None) -> MdpucSpec:
    """10x10 grid benchmark: deterministic clipped moves, goal at top-right.

    The goal cell teleports to the bottom-left regardless of the action and
    pays 100+100u; all other cells pay a per-action reward (up 1+20u, right
    1+30u, down -1-30u, left -1-40u) even when the move is blocked by an edge.
    """
    S, A, U = GRID_SIZE * GRID_SIZE, 4, 2
    goal = grid_state(GRID_SIZE - 1, GRID_SIZE - 1)
    start_state = grid_state(0, 0)
    T = np.zeros((S, A, U, S))
    R = np.zeros((S, A, U, S))
    moves = {UP: (1, 0), RIGHT: (0, 1), DOWN: (-1, 0), LEFT: (0, -1)}
    for row in range(GRID_SIZE):
        for col in range(GRID_SIZE):
            s = grid_state(row, col)
            for a, (dr, dc) in moves.items():
                if s == goal:
                    dest = start_state
                else:
                    nr = min(max(row + dr, 0), GRID_SIZE - 1)
                    nc = min(max(col + dc, 0), GRID_SIZE - 1)
                    dest = grid_state(nr, nc)
                for ui, u in enumerate(_IID_LEVELS):
                    T[s, a, ui, dest] = 1.0
                    if s == goal:
                        R[s, a, ui, :] = 100.0 + 100.0 * u
                    elif a == UP:
                        R[s, a, ui, :] = 1.0 + 20.0 * u
                    elif a == RIGHT:
                        R[s, a, ui, :] = 1.0 + 30.0 * u
                    elif a == DOWN:
                        R[s, a, ui, :] = -1.0 - 30.0 * u
                    else:
                        R[s, a, ui, :] = -1.0 - 40.0 * u
    start = np.zeros(S)
    start[start_state] = 1.0
    process = confounder_process if confounder_process is not None else IidConfounders(_IID_PROBS)
    return MdpucSpec(S, A, U, _IID_LEVELS, T, R, start, process)


_BUILDERS = {MODELWIN: build_modelwin, GRIDWORLD: build_gridworld}

DEFAULT_HORIZON = {MODELWIN: 100, GRIDWORLD: 200}


def build_environment(tag: str, confounder_process: ConfounderProcess | None = None) -> MdpucSpec:
    """Construct a benchmark environment from its string tag."""
    try:
        builder = _BUILDERS[tag]
    except KeyError:
        raise ValueError(f"unknown environment tag {tag!r}") from None
    return builder(confounder_process)


def alt_markov_confounders() -> MarkovConfounders:
    """The non-iid alternative used in the misspecification sweeps.

    Level 0.1 is followed by (0.08, 0.92) and level 0.2 by (0.82, 0.18);
    the first step uses the iid marginal (0.3, 0.7).
    """
    return MarkovConfounders(init=_IID_PROBS, transition=np.array([[0.08, 0.92], [0.82, 0.18]]))


def mixture_confounders(alpha: float) -> MixtureConfounders:
    """Per-step alpha-mixture of the iid benchmark process and the alternative chain."""
    return MixtureConfounders(alpha=alpha, iid=IidConfounders(_IID_PROBS), markov=alt_markov_confounders())


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


def policy_table(policy: PolicySpec | np.ndarray, spec: MdpucSpec) -> np.ndarray:
    """Action probabilities as an (S, U, A) table.

    Accepts a ready-made table unchanged, which lets tests drive the
    simulator with arbitrary policies.  Validates that every (s, u) row is a
    distribution; a parameter that pushes any probability outside [0, 1] is a
    configuration error.
    """
    if isinstance(policy, np.ndarray):
        table = np.asarray(policy, dtype=float)
    elif policy.environment == MODELWIN:
        table = _modelwin_policy_table(policy.pi, spec)
    else:
        table = _gridworld_policy_table(policy.pi, spec)
    if table.shape != (spec.n_states, spec.n_confounders, spec.n_actions):
        raise ValueError(f"policy table has shape {table.shape}")
    if np.any(table < -PROB_ATOL) or np.any(table > 1 + PROB_ATOL):
        raise ValueError("degenerate policy: action probability outside [0, 1]")
    _check_dist(table, "policy")
    return table


def _modelwin_policy_table(pi: float, spec: MdpucSpec) -> np.ndarray:
    table = np.zeros((spec.n_states, spec.n_confounders, spec.n_actions))
    for ui, u in enumerate(spec.confounder_values):
        table[:, ui, 0] = 1.0 - pi - u
        table[:, ui, 1] = pi + u
    return table


def _gridworld_policy_table(pi: float, spec: MdpucSpec) -> np.ndarray:
    # Hierarchical policy: pick a quadrant (bottom-left w.p. pi+u), then an
    # action within it; the top-right branch depends on the cell's position
    # relative to the bottom-left-to-top-right diagonal (row == col; "below"
    # means row < col).
    table = np.zeros((spec.n_states, spec.n_confounders, spec.n_actions))
    for s in range(spec.n_states):
        row, col = divmod(s, GRID_SIZE)
        for ui, u in enumerate(spec.confounder_values):
            p_bl = pi + u
            p_down = 0.5 * pi + u
            if row < col:
                p_up = pi + u
            elif row > col:
                p_up = 1.0 - pi - u
            else:
                p_up = 0.5 * pi + 0.5 * u
            table[s, ui, UP] = (1.0 - p_bl) * p_up
            table[s, ui, RIGHT] = (1.0 - p_bl) * (1.0 - p_up)
            table[s, ui, DOWN] = p_bl * p_down
            table[s, ui, LEFT] = p_bl * (1.0 - p_down)
    return table


def policy_prob(policy: PolicySpec | np.ndarray, spec: MdpucSpec, s: int, u: int, a: int) -> float:
    """Probability the policy takes action ``a`` in state ``s`` at level ``u``."""
    if not (0 <= s < spec.n_states and 0 <= u < spec.n_confounders and 0 <= a < spec.n_actions):
        raise IndexError(f"invalid (s={s}, u={u}, a={a}) for this environment")
    return float(policy_table(policy, spec)[s, u, a])


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def _sample_rows(cum: np.ndarray, unif: np.ndarray) -> np.ndarray:
    """Per-row categorical draw from row-wise cumulative probabilities."""
    return (unif[:, None] < cum).argmax(axis=1)


def _draw_levels(
    process: ConfounderProcess,
    prev: np.ndarray | None,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """One step of the confounder process for ``n`` parallel trajectories.

    A mixture consumes a coin draw and a level draw every step so the stream
    layout does not depend on the sampled path.
    """
    if isinstance(process, IidConfounders):
        cum = np.broadcast_to(np.cumsum(process.probs), (n, len(process.probs)))
        return _sample_rows(cum, rng.random(n))
    if isinstance(process, MarkovConfounders):
        if prev is None:
            cum = np.broadcast_to(np.cumsum(process.init), (n, len(process.init)))
        else:
            cum = np.cumsum(process.transition, axis=1)[prev]
        return _sample_rows(cum, rng.random(n))
    coin = rng.random(n) < process.alpha
    unif = rng.random(n)
    if prev is None:
        cum = np.broadcast_to(np.cumsum(process.markov.init), (n, len(process.markov.init)))
        return _sample_rows(cum, unif)
    cum_iid = np.broadcast_to(np.cumsum(process.iid.probs), (n, len(process.iid.probs)))
    cum_markov = np.cumsum(process.markov.transition, axis=1)[prev]
    cum = np.where(coin[:, None], cum_iid, cum_markov)
    return _sample_rows(cum, unif)


def sample_trajectories(
    spec: MdpucSpec,
    policy: PolicySpec | np.ndarray,
    n_traj: int,
    horizon: int,
    seed: int,
) -> Dataset:
    """Simulate ``n_traj`` trajectories of length ``horizon`` under the policy.

    Draw order per step is fixed (confounder, action, next state, vectorized
    across trajectories), so an identical seed yields a bit-identical dataset.
    """
    if n_traj < 1 or horizon < 1:
        raise ValueError("n_traj and horizon must be >= 1")
    rng = np.random.default_rng(seed)
    table = policy_table(policy, spec)
    cum_pi = np.cumsum(table, axis=2)  # (S, U, A)
    cum_t = np.cumsum(spec.transition, axis=3)  # (S, A, U, S)

    states = _sample_rows(np.broadcast_to(np.cumsum(spec.start_dist), (n_traj, spec.n_states)), rng.random(n_traj))
    s_log = np.empty((horizon, n_traj), dtype=np.int64)
    a_log = np.empty((horizon, n_traj), dtype=np.int64)
    u_log = np.empty((horizon, n_traj), dtype=np.int64)
    r_log = np.empty((horizon, n_traj))
    sn_log = np.empty((horizon, n_traj), dtype=np.int64)

    levels: np.ndarray | None = None
    for t in range(horizon):
        levels = _draw_levels(spec.confounder_process, levels, n_traj, rng)
        actions = _sample_rows(cum_pi[states, levels], rng.random(n_traj))
        nxt = _sample_rows(cum_t[states, actions, levels], rng.random(n_traj))
        s_log[t] = states
        u_log[t] = levels
        a_log[t] = actions
        sn_log[t] = nxt
        r_log[t] = spec.mean_reward[states, actions, levels, nxt]
        states = nxt

    # Concatenate trajectory-major: samples of trajectory k occupy one block.
    s = s_log.T.reshape(-1)
    a = a_log.T.reshape(-1)
    r = r_log.T.reshape(-1)
    s_next = sn_log.T.reshape(-1)
    u = u_log.T.reshape(-1)
    offsets = np.arange(n_traj + 1, dtype=np.int64) * horizon
    return Dataset(s=s, a=a, r=r, s_next=s_next, trajectory_offsets=offsets, hidden_u=u)


@dataclass(frozen=True)
class MonteCarloValue:
    value: float
    stderr: float


def true_policy_value(
    spec: MdpucSpec,
    policy: PolicySpec | np.ndarray,
    burn_in: int = 1000,
    n_steps: int = 10_000,
    n_rollouts: int = 100,
    seed: int = 0,
) -> MonteCarloValue:
    """Monte Carlo long-run average reward under the policy.

    Runs ``n_rollouts`` independent chains for ``burn_in + n_steps`` steps and
    averages per-step rewards after the burn-in.  The standard error comes
    from the spread of per-rollout means.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = np.random.default_rng(seed)
    table = policy_table(policy, spec)
    cum_pi = np.cumsum(table, axis=2)
    cum_t = np.cumsum(spec.transition, axis=3)
    states = _sample_rows(
        np.broadcast_to(np.cumsum(spec.start_dist), (n_rollouts, spec.n_states)), rng.random(n_rollouts)
    )
    totals = np.zeros(n_rollouts)
    levels: np.ndarray | None = None
    for t in range(burn_in + n_steps):
        levels = _draw_levels(spec.confounder_process, levels, n_rollouts, rng)
        actions = _sample_rows(cum_pi[states, levels], rng.random(n_rollouts))
        nxt = _sample_rows(cum_t[states, actions, levels], rng.random(n_rollouts))
        if t >= burn_in:
            totals += spec.mean_reward[states, actions, levels, nxt]
        states = nxt
    means = totals / n_steps
    stderr = float(means.std(ddof=1) / np.sqrt(n_rollouts)) if n_rollouts > 1 else float("nan")
    return MonteCarloValue(value=float(means.mean()), stderr=stderr)


# ---------------------------------------------------------------------------
# Stationary distribution (iid confounders only)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StationaryDistribution:
    joint: np.ndarray  # (S, U, A)
    marginal: np.ndarray  # (S,)


def stationary_distribution(
    spec: MdpucSpec,
    policy: PolicySpec | np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 500_000,
) -> StationaryDistribution:
    """Exact stationary distribution of the (state, confounder, action) chain.

    Only defined for iid confounders, where the compound chain is Markov.
    Power iteration runs on the half-lazy kernel (P + I)/2, which shares the
    stationary vector but is aperiodic even for periodic chains; the residual
    is measured against the original kernel.
    """
    if not isinstance(spec.confounder_process, IidConfounders):
        raise ValueError("stationary_distribution requires iid confounders")
    S, U, A = spec.n_states, spec.n_confounders, spec.n_actions
    table = policy_table(policy, spec)
    probs = spec.iid_probs
    # P[(s,u,a) -> (s',u',a')] = T[s,a,u,s'] * probs[u'] * pi(a'|s',u')
    step = np.transpose(spec.transition, (0, 2, 1, 3)).reshape(S * U * A, S)  # row (s,u,a), col s'
    enter = (probs[None, :, None] * table).reshape(S, U * A)  # p(u') * pi(a'|s',u')
    P = (step[:, :, None] * enter[None, :, :]).reshape(S * U * A, S * U * A)

    p = np.full(S * U * A, 1.0 / (S * U * A))
    for _ in range(max_iter):
        p_next = 0.5 * (p + p @ P)
        p_next /= p_next.sum()
        residual = np.abs(p_next @ P - p_next).max()
        p = p_next
        if residual <= tol:
            break
    else:
        raise RuntimeError("power iteration did not converge; chain may not be ergodic")
    joint = p.reshape(S, U, A)
    return StationaryDistribution(joint=joint, marginal=joint.sum(axis=(1, 2)))


# ---------------------------------------------------------------------------
# Dataset CSV round trip
# ---------------------------------------------------------------------------

DATASET_HEADER = ["traj", "step", "s", "a", "r", "s_next"]


def write_dataset_csv(dataset: Dataset, path, with_hidden: bool = False) -> None:
    """Write transitions as CSV; ``with_hidden`` appends the debug ``u`` column."""
    header = DATASET_HEADER + (["u"] if with_hidden else [])
    if with_hidden:
        hidden = dataset.hidden_confounders()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        traj_ids = np.repeat(
            np.arange(dataset.n_trajectories), np.diff(dataset.trajectory_offsets)
        )
        steps = np.concatenate([np.arange(k) for k in np.diff(dataset.trajectory_offsets)])
        for i in range(dataset.n):
            row = [traj_ids[i], steps[i], dataset.s[i], dataset.a[i], repr(float(dataset.r[i])), dataset.s_next[i]]
            if with_hidden:
                row.append(hidden[i])
            writer.writerow(row)


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[: len(DATASET_HEADER)] != DATASET_HEADER:
            raise ValueError(f"unexpected dataset header {header!r}")
        with_hidden = len(header) > len(DATASET_HEADER)
        rows = list(reader)
    traj = np.array([int(r[0]) for r in rows])
    s = np.array([int(r[2]) for r in rows])
    a = np.array([int(r[3]) for r in rows])
    r_col = np.array([float(r[4]) for r in rows])
    s_next = np.array([int(r[5]) for r in rows])
    hidden = np.array([int(r[6]) for r in rows]) if with_hidden else None
    boundaries = np.flatnonzero(np.diff(traj)) + 1
    offsets = np.concatenate([[0], boundaries, [len(rows)]])
    return Dataset(s=s, a=a, r=r_col, s_next=s_next, trajectory_offsets=offsets, hidden_u=hidden)
