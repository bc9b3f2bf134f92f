"""Command-line interface: simulate, estimate, benchmark, sensitivity sweeps, plot."""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import bench
from .bench import BenchmarkConfig, BenchmarkReport, with_overrides
from .envs import DEFAULT_HORIZON, PolicySpec, build_environment, mixture_confounders, sample_trajectories, write_dataset_csv
from .plots import PLOT_KINDS, emit_plot


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file mirroring the benchmark fields")
    parser.add_argument("--env", dest="environment", choices=("modelwin", "gridworld"))
    parser.add_argument("--pi-b", type=float, dest="pi_b")
    parser.add_argument("--pi-e", type=float, dest="pi_e")
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--n-traj-grid", dest="n_traj_grid", help="comma-separated trajectory counts")
    parser.add_argument("--repetitions", type=int)
    parser.add_argument("--methods", help="comma-separated method tags")
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--seed", type=int, required=True, help="master seed")
    parser.add_argument("--out-dir", required=True)


def _config_from_args(args: argparse.Namespace) -> BenchmarkConfig:
    config = bench.load_config(args.config) if args.config else BenchmarkConfig()
    overrides = dict(
        environment=args.environment,
        pi_b=args.pi_b,
        pi_e=args.pi_e,
        horizon=args.horizon,
        repetitions=args.repetitions,
        alpha=args.alpha,
        noise_sigma=args.noise_sigma,
        threads=args.threads,
        master_seed=args.seed,
    )
    if args.n_traj_grid:
        overrides["n_traj_grid"] = tuple(int(x) for x in args.n_traj_grid.split(","))
    if args.methods:
        overrides["methods"] = tuple(args.methods.split(","))
    return with_overrides(config, **overrides)


def _write_report(report: BenchmarkReport, out_dir: str, stem: str, plot_kinds: tuple[str, ...]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    bench.emit_csv(report, os.path.join(out_dir, f"{stem}.csv"))
    bench.emit_runs_csv(report, os.path.join(out_dir, f"{stem}_runs.csv"))
    bench.emit_ground_truth_json(report, os.path.join(out_dir, f"{stem}_ground_truth.json"))
    for kind in plot_kinds:
        emit_plot(report, os.path.join(out_dir, f"{stem}_{kind}.svg"), kind)


def _cmd_simulate(args: argparse.Namespace) -> int:
    process = None if args.alpha == 1.0 else mixture_confounders(args.alpha)
    spec = build_environment(args.environment, process)
    horizon = args.horizon or DEFAULT_HORIZON[args.environment]
    dataset = sample_trajectories(spec, PolicySpec(args.environment, args.pi), args.n_traj, horizon, args.seed)
    write_dataset_csv(dataset, args.out, with_hidden=args.with_hidden)
    return 0


def _cmd_estimate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    os.makedirs(args.out_dir, exist_ok=True)
    n_traj = config.n_traj_grid[0]
    results = bench.run_single(config, n_traj, repetition=0)
    seed = bench.child_seed(config.master_seed, n_traj, 0, config.alpha, config.noise_sigma, "data")
    path = os.path.join(args.out_dir, "estimates.csv")
    with open(path, "w") as fh:
        fh.write(bench.RUNS_HEADER + "\n")
        for method in config.methods:
            value, error = results[method]
            fh.write(f"{method},{n_traj},{seed},{'' if error else repr(value)}\n")
            if error:
                print(f"warning: {method} failed: {error}", file=sys.stderr)
    print(path)
    return 0


def _cmd_benchmark(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    report = bench.run_benchmark(config, cache_dir=os.path.join(args.out_dir, "cache"))
    _write_report(report, args.out_dir, "benchmark", ("estimate", "log_rmse"))
    print(os.path.join(args.out_dir, "benchmark.csv"))
    return 0


def _cmd_sensitivity_alpha(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    grid = [float(x) for x in args.alphas.split(",")]
    report = bench.run_sensitivity_alpha(config, grid, cache_dir=os.path.join(args.out_dir, "cache"))
    _write_report(report, args.out_dir, "sensitivity_alpha", ("sensitivity",))
    print(os.path.join(args.out_dir, "sensitivity_alpha.csv"))
    return 0


def _cmd_sensitivity_noise(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    grid = [float(x) for x in args.sigmas.split(",")]
    report = bench.run_sensitivity_noise(config, grid, cache_dir=os.path.join(args.out_dir, "cache"))
    _write_report(report, args.out_dir, "sensitivity_noise", ("sensitivity",))
    print(os.path.join(args.out_dir, "sensitivity_noise.csv"))
    return 0


def _cmd_plot(args: argparse.Namespace) -> int:
    rows = bench.parse_csv(args.report)
    report = BenchmarkReport(rows=rows)
    truth_path = args.ground_truth
    if truth_path and os.path.exists(truth_path):
        with open(truth_path) as fh:
            data = json.load(fh)
        from .envs import MonteCarloValue

        report.truths = {
            float(alpha): MonteCarloValue(value=v["value"], stderr=v["stderr"]) for alpha, v in data.items()
        }
    emit_plot(report, args.out, args.kind)
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cope", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample logged trajectories to CSV")
    p.add_argument("--env", dest="environment", required=True, choices=("modelwin", "gridworld"))
    p.add_argument("--pi", type=float, required=True, help="policy parameter")
    p.add_argument("--n-traj", type=int, required=True)
    p.add_argument("--horizon", type=int)
    p.add_argument("--alpha", type=float, default=1.0, help="iid mixture weight (1.0 = iid)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--with-hidden", action="store_true", help="append the debug confounder column")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("estimate", help="run all estimators once and write per-run rows")
    _add_config_args(p)
    p.set_defaults(fn=_cmd_estimate)

    p = sub.add_parser("benchmark", help="estimate-vs-trajectories sweep with CIs and RMSE")
    _add_config_args(p)
    p.set_defaults(fn=_cmd_benchmark)

    p = sub.add_parser("sensitivity-alpha", help="non-iid confounder mixture sweep")
    _add_config_args(p)
    p.add_argument("--alphas", required=True, help="comma-separated mixture weights in [0,1]")
    p.set_defaults(fn=_cmd_sensitivity_alpha)

    p = sub.add_parser("sensitivity-noise", help="posterior logit-noise sweep")
    _add_config_args(p)
    p.add_argument("--sigmas", required=True, help="comma-separated noise levels >= 0")
    p.set_defaults(fn=_cmd_sensitivity_noise)

    p = sub.add_parser("plot", help="render a figure from a report CSV")
    p.add_argument("--report", required=True)
    p.add_argument("--kind", default="estimate", choices=PLOT_KINDS)
    p.add_argument("--ground-truth", help="ground-truth JSON sidecar (for estimate plots)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
