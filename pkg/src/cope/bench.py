"""Benchmark harness: seeded repetition sweeps, aggregation, and CSV reports.

A benchmark run is a pure function of its configuration and master seed:
child seeds derive from a counter-style hash, so changing the repetition
count or extending a grid never disturbs earlier runs, and single-threaded
re-runs are byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimators as est
from .balancing import BalanceKernel, build_quadratic, compress, solve_weights
from .confounding import asd as asd_metric
from .confounding import beta_table, exact_posterior, impute_confounders, inject_logit_noise
from .density_ratio import GmmHyperparams, clip_negative, estimate_from_summary, summarize
from .envs import (
    DEFAULT_HORIZON,
    MonteCarloValue,
    PolicySpec,
    build_environment,
    mixture_confounders,
    sample_trajectories,
    true_policy_value,
)

Z95 = 1.96

TRUTH_STEPS = 10_000
TRUTH_ROLLOUTS = 100
TRUTH_BURN_IN = 1_000

ASD_SAMPLES = 5
ASD_DRAWS = 50


def _canon(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def child_seed(master_seed: int, *parts) -> int:
    """Deterministic, platform-stable child seed from a master seed and labels."""
    key = "|".join([_canon(int(master_seed))] + [_canon(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class BenchmarkConfig:
    """One benchmark sweep: environment, policies, grids, and hyperparameters."""

    environment: str = "modelwin"
    pi_b: float = 0.7
    pi_e: float = 0.1
    horizon: int | None = None  # None -> environment default
    n_traj_grid: tuple[int, ...] = (10, 25, 50, 100, 200)
    repetitions: int = 50
    methods: tuple[str, ...] = est.METHODS
    alpha: float = 1.0
    noise_sigma: float = 0.0
    lambda_h: float = 1e-8
    lambda_d: float = 1e-8
    lambda_c: float = 1e-8
    gmm_iterations: int = 5
    balance_lambda: float = 1e-3
    kernel_ws: float = 0.5
    kernel_wu: float = 0.5
    clip_negative_d: bool = False
    master_seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not self.n_traj_grid:
            raise ValueError("n_traj_grid must be nonempty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        unknown = set(self.methods) - set(est.METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")

    def resolved_horizon(self) -> int:
        return self.horizon if self.horizon is not None else DEFAULT_HORIZON[self.environment]

    def gmm_hyperparams(self) -> GmmHyperparams:
        return GmmHyperparams(
            lambda_h=self.lambda_h,
            lambda_d=self.lambda_d,
            lambda_c=self.lambda_c,
            n_iterations=self.gmm_iterations,
        )

    def balance_kernel(self) -> BalanceKernel:
        return BalanceKernel(w_s=self.kernel_ws, w_u=self.kernel_wu)


_CONFIG_FIELDS = tuple(BenchmarkConfig.__dataclass_fields__)


def config_to_dict(config: BenchmarkConfig) -> dict:
    out = {}
    for name in _CONFIG_FIELDS:
        value = getattr(config, name)
        out[name] = list(value) if isinstance(value, tuple) else value
    return out


def config_from_dict(data: dict) -> BenchmarkConfig:
    unknown = set(data) - set(_CONFIG_FIELDS)
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    kwargs = dict(data)
    for name in ("n_traj_grid", "methods"):
        if name in kwargs and kwargs[name] is not None:
            kwargs[name] = tuple(kwargs[name])
    return BenchmarkConfig(**kwargs)


def load_config(path) -> BenchmarkConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


@dataclass(frozen=True)
class RunRecord:
    method: str
    n_traj: int
    alpha: float
    sigma: float
    asd: float
    repetition: int
    seed: int
    estimate: float  # NaN when the estimator failed
    error: str | None = None


@dataclass(frozen=True)
class ReportRow:
    method: str
    n_traj: int
    alpha: float
    asd: float
    mean_estimate: float
    ci_low: float
    ci_high: float
    rmse: float
    log_rmse: float


@dataclass
class BenchmarkReport:
    rows: list[ReportRow]
    runs: list[RunRecord] = field(default_factory=list)
    truths: dict[float, MonteCarloValue] = field(default_factory=dict)

    @property
    def ground_truth(self) -> MonteCarloValue:
        if len(self.truths) != 1:
            raise ValueError("report holds multiple ground truths; index truths by alpha")
        return next(iter(self.truths.values()))


def ground_truth(
    config: BenchmarkConfig, alpha: float = 1.0, cache_dir: str | None = None
) -> MonteCarloValue:
    """Long-run average reward of the evaluation policy, by Monte Carlo rollout.

    Cached on disk keyed by a hash of everything the value depends on; the
    rollout seed is itself derived from that key, so cached and fresh results
    agree.
    """
    key = "|".join(
        [
            "truth",
            config.environment,
            _canon(config.pi_e),
            _canon(alpha),
            _canon(TRUTH_STEPS),
            _canon(TRUTH_ROLLOUTS),
            _canon(TRUTH_BURN_IN),
        ]
    )
    digest = hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]
    cache_path = os.path.join(cache_dir, f"truth_{digest}.json") if cache_dir else None
    if cache_path and os.path.exists(cache_path):
        with open(cache_path) as fh:
            data = json.load(fh)
        return MonteCarloValue(value=data["value"], stderr=data["stderr"])
    process = None if alpha == 1.0 else mixture_confounders(alpha)
    spec = build_environment(config.environment, process)
    policy = PolicySpec(config.environment, config.pi_e)
    result = true_policy_value(
        spec,
        policy,
        burn_in=TRUTH_BURN_IN,
        n_steps=TRUTH_STEPS,
        n_rollouts=TRUTH_ROLLOUTS,
        seed=int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little"),
    )
    if cache_path:
        os.makedirs(cache_dir, exist_ok=True)
        with open(cache_path, "w") as fh:
            json.dump({"value": result.value, "stderr": result.stderr}, fh)
    return result


def run_single(
    config: BenchmarkConfig,
    n_traj: int,
    repetition: int,
    alpha: float | None = None,
    sigma: float | None = None,
) -> dict[str, tuple[float, str | None]]:
    """One repetition of the full pipeline; returns per-method (estimate, error).

    Estimator failures are contained: a failing method reports an error tag
    and NaN, the remaining methods still run.
    """
    alpha = config.alpha if alpha is None else alpha
    sigma = config.noise_sigma if sigma is None else sigma
    process = None if alpha == 1.0 else mixture_confounders(alpha)
    data_spec = build_environment(config.environment, process)
    model_spec = build_environment(config.environment)
    behavior = PolicySpec(config.environment, config.pi_b)
    eval_policy = PolicySpec(config.environment, config.pi_e)

    def seed_for(purpose: str) -> int:
        return child_seed(config.master_seed, n_traj, repetition, alpha, sigma, purpose)

    dataset = sample_trajectories(data_spec, behavior, n_traj, config.resolved_horizon(), seed_for("data"))
    # The posterior model always assumes iid confounders; under a mixture the
    # data-generating process deliberately departs from it.
    oracle = exact_posterior(model_spec, behavior)
    if sigma > 0:
        oracle = inject_logit_noise(oracle, sigma, seed_for("noise"))

    results: dict[str, tuple[float, str | None]] = {}

    def attempt(method: str, fn) -> None:
        try:
            results[method] = (float(fn().value), None)
        except Exception as exc:  # noqa: BLE001 - failures become report rows
            results[method] = (float("nan"), f"{type(exc).__name__}: {exc}")

    needs_d = {est.BALANCED, est.DIRECT_METHOD, est.DOUBLY_ROBUST} & set(config.methods)
    d_hat = None
    d_error = None
    if needs_d:
        try:
            summary = summarize(dataset, beta_table(oracle, eval_policy, behavior, model_spec))
            d_hat = estimate_from_summary(summary, config.gmm_hyperparams())
            if config.clip_negative_d:
                d_hat = clip_negative(d_hat, summary)
        except Exception as exc:  # noqa: BLE001
            d_error = f"{type(exc).__name__}: {exc}"

    weights = None
    if d_hat is not None and {est.BALANCED, est.DOUBLY_ROBUST} & set(config.methods):
        try:
            compressed = compress(dataset)
            G, g = build_quadratic(
                compressed,
                oracle,
                d_hat,
                model_spec,
                eval_policy,
                config.balance_kernel(),
                config.balance_lambda,
            )
            weights = solve_weights(G, g, compressed, config.balance_lambda)
        except Exception as exc:  # noqa: BLE001
            d_error = d_error or f"{type(exc).__name__}: {exc}"

    model = None
    if d_hat is not None and {est.DIRECT_METHOD, est.DOUBLY_ROBUST} & set(config.methods):
        try:
            u_hat = impute_confounders(oracle, dataset, seed_for("impute"))
            model = est.fit_outcome_model(dataset, u_hat, model_spec)
        except Exception as exc:  # noqa: BLE001
            d_error = d_error or f"{type(exc).__name__}: {exc}"

    for method in config.methods:
        if method == est.BALANCED:
            if weights is None:
                results[method] = (float("nan"), d_error or "weights unavailable")
            else:
                attempt(method, lambda: est.weighted_value(weights, dataset))
        elif method == est.DIRECT_METHOD:
            if d_hat is None or model is None:
                results[method] = (float("nan"), d_error or "outcome model unavailable")
            else:
                attempt(
                    method,
                    lambda: est.direct_method(oracle, d_hat, model, dataset, model_spec, eval_policy),
                )
        elif method == est.DOUBLY_ROBUST:
            if weights is None or model is None:
                results[method] = (float("nan"), d_error or "weights/outcome model unavailable")
            else:
                attempt(
                    method,
                    lambda: est.doubly_robust(
                        weights, oracle, d_hat, model, dataset, model_spec, eval_policy
                    ),
                )
        elif method == est.IPS:
            attempt(
                method,
                lambda: est.ips_estimate(
                    dataset,
                    oracle,
                    model_spec,
                    eval_policy,
                    behavior,
                    config.gmm_hyperparams(),
                    seed_for("impute-ips"),
                ),
            )
    return results


def summarize_runs(values: np.ndarray, truth: float) -> tuple[float, float, float, float, float]:
    """Aggregate per-repetition estimates into (mean, ci_low, ci_high, rmse, log_rmse).

    The 95% interval uses the normal approximation over repetitions; with a
    single repetition it degenerates to NaN bounds.  Failed repetitions (NaN)
    are excluded.
    """
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return (float("nan"),) * 5
    mean = float(values.mean())
    if values.size > 1:
        half = Z95 * float(values.std(ddof=1)) / math.sqrt(values.size)
        ci_low, ci_high = mean - half, mean + half
    else:
        ci_low = ci_high = float("nan")
    rmse = float(np.sqrt(np.mean((values - truth) ** 2)))
    log_rmse = math.log(rmse) if rmse > 0 else float("-inf")
    return mean, ci_low, ci_high, rmse, log_rmse


def _collect(
    config: BenchmarkConfig,
    tasks: list[tuple[int, int, float, float]],
) -> dict[tuple[int, int, float, float], dict[str, tuple[float, str | None]]]:
    """Run (n_traj, repetition, alpha, sigma) tasks, optionally on a process pool.

    Results are keyed by task, so scheduling order never affects the report.
    """
    if config.threads <= 1:
        return {task: run_single(config, *task) for task in tasks}
    with ProcessPoolExecutor(max_workers=config.threads) as pool:
        futures = {task: pool.submit(run_single, config, *task) for task in tasks}
        return {task: fut.result() for task, fut in futures.items()}


def _asd_for(config: BenchmarkConfig, sigma: float) -> float:
    if sigma == 0.0:
        return 0.0
    spec = build_environment(config.environment)
    behavior = PolicySpec(config.environment, config.pi_b)
    return asd_metric(
        spec,
        behavior,
        sigma,
        n_s=ASD_SAMPLES,
        n_e=ASD_DRAWS,
        seed=child_seed(config.master_seed, "asd", _canon(sigma)),
    )


def _sweep(
    config: BenchmarkConfig,
    grid: list[tuple[float, float]],  # (alpha, sigma) pairs
    cache_dir: str | None,
) -> BenchmarkReport:
    truths = {alpha: ground_truth(config, alpha, cache_dir) for alpha in sorted({a for a, _ in grid})}
    asd_values = {sigma: _asd_for(config, sigma) for sigma in sorted({s for _, s in grid})}
    tasks = [
        (n_traj, rep, alpha, sigma)
        for alpha, sigma in grid
        for n_traj in config.n_traj_grid
        for rep in range(config.repetitions)
    ]
    outcomes = _collect(config, tasks)

    runs: list[RunRecord] = []
    for alpha, sigma in grid:
        for n_traj in config.n_traj_grid:
            for rep in range(config.repetitions):
                per_method = outcomes[(n_traj, rep, alpha, sigma)]
                seed = child_seed(config.master_seed, n_traj, rep, alpha, sigma, "data")
                for method in config.methods:
                    value, error = per_method[method]
                    runs.append(
                        RunRecord(
                            method=method,
                            n_traj=n_traj,
                            alpha=alpha,
                            sigma=sigma,
                            asd=asd_values[sigma],
                            repetition=rep,
                            seed=seed,
                            estimate=value,
                            error=error,
                        )
                    )

    rows: list[ReportRow] = []
    for method in sorted(config.methods):
        for n_traj in sorted(config.n_traj_grid):
            for alpha, sigma in sorted(grid):
                values = np.array(
                    [
                        r.estimate
                        for r in runs
                        if r.method == method
                        and r.n_traj == n_traj
                        and r.alpha == alpha
                        and r.sigma == sigma
                    ]
                )
                mean, ci_low, ci_high, rmse, log_rmse = summarize_runs(values, truths[alpha].value)
                rows.append(
                    ReportRow(
                        method=method,
                        n_traj=n_traj,
                        alpha=alpha,
                        asd=asd_values[sigma],
                        mean_estimate=mean,
                        ci_low=ci_low,
                        ci_high=ci_high,
                        rmse=rmse,
                        log_rmse=log_rmse,
                    )
                )
    rows.sort(key=lambda r: (r.method, r.n_traj, r.alpha, r.asd))
    return BenchmarkReport(rows=rows, runs=runs, truths=truths)


def run_benchmark(config: BenchmarkConfig, cache_dir: str | None = None) -> BenchmarkReport:
    """Estimate-vs-trajectory-count sweep at the configured alpha and sigma."""
    return _sweep(config, [(config.alpha, config.noise_sigma)], cache_dir)


def run_sensitivity_alpha(
    config: BenchmarkConfig, alpha_grid: list[float], cache_dir: str | None = None
) -> BenchmarkReport:
    """Sweep the iid-vs-Markov mixture weight; ground truth recomputed per alpha."""
    if any(not 0.0 <= a <= 1.0 for a in alpha_grid):
        raise ValueError("alpha grid values must be in [0, 1]")
    return _sweep(config, [(alpha, config.noise_sigma) for alpha in alpha_grid], cache_dir)


def run_sensitivity_noise(
    config: BenchmarkConfig, sigma_grid: list[float], cache_dir: str | None = None
) -> BenchmarkReport:
    """Sweep posterior noise; fresh logit noise per repetition, ASD per sigma."""
    if any(s < 0 for s in sigma_grid):
        raise ValueError("sigma grid values must be >= 0")
    return _sweep(config, [(config.alpha, sigma) for sigma in sigma_grid], cache_dir)


# ---------------------------------------------------------------------------
# Report CSV
# ---------------------------------------------------------------------------

REPORT_HEADER = "method,n_traj,alpha,asd,mean_estimate,ci_low,ci_high,rmse,log_rmse"

RUNS_HEADER = "method,n_traj,seed,estimate"


def _fmt(value: float) -> str:
    if isinstance(value, float) and math.isnan(value):
        return ""
    return repr(float(value))


def emit_csv(report: BenchmarkReport, path) -> None:
    """Write aggregate rows with the fixed header, in deterministic order."""
    rows = sorted(report.rows, key=lambda r: (r.method, r.n_traj, r.alpha, r.asd))
    with open(path, "w", newline="") as fh:
        fh.write(REPORT_HEADER + "\n")
        for r in rows:
            fh.write(
                ",".join(
                    [
                        r.method,
                        str(r.n_traj),
                        _fmt(r.alpha),
                        _fmt(r.asd),
                        _fmt(r.mean_estimate),
                        _fmt(r.ci_low),
                        _fmt(r.ci_high),
                        _fmt(r.rmse),
                        _fmt(r.log_rmse),
                    ]
                )
                + "\n"
            )


def parse_csv(path) -> list[ReportRow]:
    def num(text: str) -> float:
        return float(text) if text else float("nan")

    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if ",".join(header) != REPORT_HEADER:
            raise ValueError(f"unexpected report header {header!r}")
        for rec in reader:
            rows.append(
                ReportRow(
                    method=rec[0],
                    n_traj=int(rec[1]),
                    alpha=num(rec[2]),
                    asd=num(rec[3]),
                    mean_estimate=num(rec[4]),
                    ci_low=num(rec[5]),
                    ci_high=num(rec[6]),
                    rmse=num(rec[7]),
                    log_rmse=num(rec[8]),
                )
            )
    return rows


def emit_runs_csv(report: BenchmarkReport, path) -> None:
    """Per-repetition estimates: method,n_traj,seed,estimate."""
    with open(path, "w", newline="") as fh:
        fh.write(RUNS_HEADER + "\n")
        for r in report.runs:
            fh.write(f"{r.method},{r.n_traj},{r.seed},{_fmt(r.estimate)}\n")


def emit_ground_truth_json(report: BenchmarkReport, path) -> None:
    data = {
        _canon(alpha): {"value": mc.value, "stderr": mc.stderr} for alpha, mc in report.truths.items()
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def with_overrides(config: BenchmarkConfig, **overrides) -> BenchmarkConfig:
    """Apply non-None keyword overrides to a config."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **updates)
