"""Command-line front end.

Subcommands:

- ``model``: print the analytical delay-rate/gain tables for the built-in
  example workloads (an FFT and a stencil) or a custom one.
- ``bench``: run a single (strategy, size) cell and print its stats row.
- ``sweep``: run a strategy list across a size ladder, CSV or JSON.
- ``compare``: a sweep plus measured-vs-predicted gain columns; requires
  the p2p-single baseline among the strategies.

Sizes are bytes per partition; ``--gamma`` and ``--mu`` are us/MB and
``--beta`` GB/s, converted exactly at this boundary.  The environment
variables ``PARTSIM_PART_AGGR_SIZE`` and ``PARTSIM_NUM_CHANNELS``
override the protocol defaults when the matching flags are absent.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .bench import (
    ExperimentConfig,
    compare_rows_to_csv,
    compare_with_model,
    default_sizes,
    run_experiment,
    to_csv,
    to_json,
)
from .partcomm import LifecycleError, ProtocolError
from .perfmodel import (
    DelayModel,
    WorkloadSpec,
    compute_mu,
    delay_rate,
    predict_eta_large,
    predict_eta_small,
)
from .simnet import DeadlockError, TimingModel
from .strategies import STRATEGY_KINDS
from .units import gb_per_s_to_b_per_s, s_per_b_to_us_per_mb, us_per_mb_to_s_per_b

# Example workloads: a 1D FFT (compute-heavy, sends everything it touches)
# and a 3D stencil (light compute, only halo bytes leave the node).
WORKLOAD_PRESETS = {
    "fft": {
        "arithmetic_intensity": 5.0,
        "communication_intensity": 1.0,
        "system_noise": 0.04,
        "algorithmic_imbalance": 0.0,
    },
    "stencil": {
        "arithmetic_intensity": 1.0 / 13.0,
        "communication_intensity": (66.0 / 64.0) ** 3 - 1.0,
        "system_noise": 0.04,
        "algorithmic_imbalance": 0.5,
    },
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except (ValueError, ProtocolError, LifecycleError, DeadlockError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partsim",
        description="Simulated partitioned-communication benchmarks and models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    model = sub.add_parser(
        "model", help="print analytical delay-rate and gain tables"
    )
    model.add_argument(
        "--workload",
        choices=["fft", "stencil", "both"],
        default="both",
        help="built-in example workload (default: both)",
    )
    model.add_argument("--ai", type=float, help="custom arithmetic intensity, flop/B")
    model.add_argument(
        "--ci", type=float, help="custom communication intensity, B sent per B touched"
    )
    model.add_argument("--epsilon", type=float, help="custom system noise level")
    model.add_argument("--delta", type=float, help="custom algorithmic imbalance")
    model.add_argument(
        "--frequency-ghz", type=float, default=3.5, help="core frequency (default 3.5)"
    )
    model.add_argument(
        "--flops-per-cycle", type=float, default=8.0, help="flops per cycle (default 8)"
    )
    model.add_argument(
        "--n-threads", type=int, default=8, help="threads N for the gain column"
    )
    model.add_argument(
        "--beta", type=float, default=25.0, help="link bandwidth in GB/s (default 25)"
    )
    model.add_argument(
        "--theta-list",
        default="1,2,8",
        help="comma-separated partitions-per-thread values (default 1,2,8)",
    )
    model.set_defaults(func=_cmd_model)

    bench = sub.add_parser("bench", help="run one (strategy, size) cell")
    bench.add_argument(
        "--strategy", choices=STRATEGY_KINDS, required=True, help="strategy to run"
    )
    bench.add_argument(
        "--size", type=int, required=True, help="partition size in bytes"
    )
    _add_experiment_flags(bench)
    bench.set_defaults(func=_cmd_bench)

    sweep = sub.add_parser("sweep", help="run strategies across a size ladder")
    sweep.add_argument(
        "--strategy",
        default=",".join(STRATEGY_KINDS),
        help="comma-separated strategy list (default: all)",
    )
    sweep.add_argument(
        "--sizes",
        help="comma-separated partition sizes in bytes (default: 64 B to 64 MiB)",
    )
    _add_experiment_flags(sweep)
    sweep.set_defaults(func=_cmd_sweep)

    compare = sub.add_parser(
        "compare", help="sweep plus measured-vs-predicted gain columns"
    )
    compare.add_argument(
        "--strategy",
        default=",".join(STRATEGY_KINDS),
        help="comma-separated strategy list; must include p2p-single",
    )
    compare.add_argument(
        "--sizes",
        help="comma-separated partition sizes in bytes (default: 64 B to 64 MiB)",
    )
    _add_experiment_flags(compare)
    compare.set_defaults(func=_cmd_compare)

    return parser


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--threads", type=int, default=4, help="threads N (default 4)")
    parser.add_argument(
        "--theta", type=int, default=1, help="partitions per thread (default 1)"
    )
    parser.add_argument(
        "--gamma",
        type=float,
        help="fixed delay rate in us/MB (only the last partition lags)",
    )
    parser.add_argument(
        "--mu",
        type=float,
        help="compute rate in us/MB; samples per-thread compute times instead of --gamma",
    )
    parser.add_argument(
        "--epsilon", type=float, default=0.0, help="system noise level for --mu"
    )
    parser.add_argument(
        "--delta", type=float, default=0.0, help="algorithmic imbalance for --mu"
    )
    parser.add_argument(
        "--iterations", type=int, default=150, help="iterations per cell (default 150)"
    )
    parser.add_argument(
        "--warmup", type=int, default=1, help="warmup iterations (default 1)"
    )
    parser.add_argument(
        "--confidence", type=float, default=0.90, help="CI level (default 0.90)"
    )
    parser.add_argument(
        "--max-half-width-frac",
        type=float,
        default=0.05,
        help="CI half width allowed as a fraction of the mean (default 0.05)",
    )
    parser.add_argument(
        "--max-retries", type=int, default=50, help="cell retry cap (default 50)"
    )
    parser.add_argument("--seed", type=int, default=0, help="experiment seed")
    parser.add_argument(
        "--channels", type=int, help="network channels (default 1, env overridable)"
    )
    parser.add_argument(
        "--part-aggr-size",
        type=int,
        help="aggregation threshold in bytes, 0 disables (default 16384, env overridable)",
    )
    parser.add_argument(
        "--reserved-tag-space",
        type=int,
        default=256,
        help="per-peer tag budget of the partitioned protocol (default 256)",
    )
    parser.add_argument(
        "--legacy-am",
        action="store_true",
        help="force the legacy single-message active-message path",
    )
    parser.add_argument(
        "--timing-config", help="key = value file overriding TimingModel fields"
    )
    parser.add_argument(
        "--format", choices=["csv", "json"], default="csv", help="output format"
    )
    parser.add_argument("--output", help="write output to a file instead of stdout")


def _cmd_model(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    thetas = _parse_int_list(args.theta_list, parser, "--theta-list")
    custom_given = args.ai is not None or args.ci is not None
    if custom_given and (args.ai is None or args.ci is None):
        parser.error("custom workloads need both --ai and --ci")

    if custom_given:
        workloads = [
            (
                "custom",
                {
                    "arithmetic_intensity": args.ai,
                    "communication_intensity": args.ci,
                    "system_noise": args.epsilon if args.epsilon is not None else 0.0,
                    "algorithmic_imbalance": args.delta if args.delta is not None else 0.0,
                },
            )
        ]
    elif args.workload == "both":
        workloads = [(name, WORKLOAD_PRESETS[name]) for name in ("fft", "stencil")]
    else:
        workloads = [(args.workload, WORKLOAD_PRESETS[args.workload])]

    beta = gb_per_s_to_b_per_s(args.beta)
    for name, params in workloads:
        spec = WorkloadSpec(
            arithmetic_intensity=params["arithmetic_intensity"],
            communication_intensity=params["communication_intensity"],
            cpu_frequency=args.frequency_ghz * 1e9,
            flops_per_cycle=args.flops_per_cycle,
        )
        mu = compute_mu(spec)
        sigma = (params["system_noise"] + params["algorithmic_imbalance"]) / 2.0
        print(
            f"workload {name}: AI={spec.arithmetic_intensity:.6g} flop/B, "
            f"CI={spec.communication_intensity:.6g}, "
            f"mu={s_per_b_to_us_per_mb(mu):.6f} us/MB, sigma={sigma:.6g}"
        )
        print(
            f"  N={args.n_threads} threads, beta={args.beta:.6g} GB/s"
        )
        print(f"  {'theta':>5}  {'gamma_us_per_mb':>16}  {'eta_large':>10}  {'eta_small':>10}")
        for theta in thetas:
            delay = DelayModel(
                mu=mu,
                system_noise=params["system_noise"],
                algorithmic_imbalance=params["algorithmic_imbalance"],
                partitions_per_thread=theta,
            )
            gamma = delay_rate(delay)
            eta_large = predict_eta_large(args.n_threads, theta, gamma, beta)
            eta_small = predict_eta_small(args.n_threads, theta)
            print(
                f"  {theta:>5}  {s_per_b_to_us_per_mb(gamma):>16.6f}  "
                f"{eta_large:>10.6f}  {eta_small:>10.6f}"
            )
        print()
    return 0


def _cmd_bench(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    config = _experiment_config(args, parser, [args.strategy], [args.size])
    stats = run_experiment(config)
    _emit(args, to_csv(stats) if args.format == "csv" else to_json(stats))
    return 0


def _cmd_sweep(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    strategies = _parse_strategies(args.strategy, parser)
    sizes = _parse_sizes(args, parser)
    config = _experiment_config(args, parser, strategies, sizes)
    stats = run_experiment(config)
    _emit(args, to_csv(stats) if args.format == "csv" else to_json(stats))
    return 0


def _cmd_compare(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    strategies = _parse_strategies(args.strategy, parser)
    sizes = _parse_sizes(args, parser)
    config = _experiment_config(args, parser, strategies, sizes)
    stats = run_experiment(config)
    rows = compare_with_model(stats)
    if args.format == "csv":
        _emit(args, compare_rows_to_csv(rows))
    else:
        _emit(args, json.dumps(rows, indent=2) + "\n")
    return 0


def _parse_strategies(text: str, parser: argparse.ArgumentParser) -> list[str]:
    strategies = [s.strip() for s in text.split(",") if s.strip()]
    for kind in strategies:
        if kind not in STRATEGY_KINDS:
            parser.error(
                f"unknown strategy {kind!r}; choose from {', '.join(STRATEGY_KINDS)}"
            )
    if not strategies:
        parser.error("--strategy needs at least one name")
    return strategies


def _parse_sizes(args: argparse.Namespace, parser: argparse.ArgumentParser) -> list[int]:
    if args.sizes is None:
        return default_sizes()
    return _parse_int_list(args.sizes, parser, "--sizes")


def _parse_int_list(
    text: str, parser: argparse.ArgumentParser, flag: str
) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        parser.error(f"{flag} expects comma-separated integers")
    if not values:
        parser.error(f"{flag} needs at least one value")
    return values


def _int_from_env(name: str) -> int | None:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"environment variable {name} must be an integer") from exc


def _experiment_config(
    args: argparse.Namespace,
    parser: argparse.ArgumentParser,
    strategies: list[str],
    sizes: list[int],
) -> ExperimentConfig:
    if args.gamma is not None and args.mu is not None:
        parser.error("--gamma and --mu are mutually exclusive")
    if args.mu is not None:
        gamma: float | DelayModel = DelayModel(
            mu=us_per_mb_to_s_per_b(args.mu),
            system_noise=args.epsilon,
            algorithmic_imbalance=args.delta,
            partitions_per_thread=args.theta,
        )
    elif args.gamma is not None:
        gamma = us_per_mb_to_s_per_b(args.gamma)
    else:
        gamma = 0.0

    timing = (
        TimingModel.from_file(args.timing_config)
        if args.timing_config
        else TimingModel()
    )

    channels = args.channels
    if channels is None:
        channels = _int_from_env("PARTSIM_NUM_CHANNELS")
    if channels is None:
        channels = 1

    part_aggr_size = args.part_aggr_size
    if part_aggr_size is None:
        part_aggr_size = _int_from_env("PARTSIM_PART_AGGR_SIZE")
    if part_aggr_size is None:
        part_aggr_size = 16384

    return ExperimentConfig(
        strategies=strategies,
        sizes=sizes,
        n_threads=args.threads,
        theta=args.theta,
        gamma=gamma,
        iterations=args.iterations,
        warmup=args.warmup,
        confidence=args.confidence,
        max_half_width_frac=args.max_half_width_frac,
        max_retries=args.max_retries,
        seed=args.seed,
        timing=timing,
        channels=channels,
        part_aggr_size=part_aggr_size,
        reserved_tag_space=args.reserved_tag_space,
        legacy_am=args.legacy_am,
    )


def _emit(args: argparse.Namespace, text: str) -> None:
    if args.output:
        Path(args.output).write_text(text, newline="\n")
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    raise SystemExit(main())
