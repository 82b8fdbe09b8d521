"""Benchmark harness: repeated strategy iterations with retry-on-noise.

An experiment runs each (strategy, partition size) cell for a fixed
iteration count on a fresh network, drops warmup iterations (the first
iteration carries the partitioned handshake), and reports the mean elapsed
time with a Student-t confidence interval.  Cells whose interval half
width exceeds a fraction of the mean are rerun with a fresh seed, up to a
retry cap; a cell that never settles is flagged, not fatal.

The measured gain of a strategy is the mean elapsed time of the
bulk-synchronization baseline (``p2p-single``) divided by the strategy's
mean at the same size; the harness always runs the baseline so every row
carries a measured and a predicted gain.

Per-partition ready offsets come either from a fixed delay rate ``gamma``
(only the last partition lags, by ``gamma * size``) or from a
`partsim.perfmodel.DelayModel` whose per-thread compute times are sampled
each iteration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as scipy_stats

from .partcomm import PartConfig, PartEngine
from .perfmodel import (
    DelayModel,
    PipelinePrediction,
    delay_rate,
    last_partition_delay_schedule,
    predict_eta_large,
    predict_eta_small,
    predict_pipeline,
    sample_compute_time,
)
from .simnet import Network, TimingModel
from .strategies import STRATEGY_KINDS, StrategySpec, run_iteration

__all__ = [
    "ExperimentConfig",
    "RunStats",
    "default_sizes",
    "student_t_ci",
    "run_experiment",
    "compare_with_model",
    "to_csv",
    "to_json",
    "compare_rows_to_csv",
    "CSV_HEADER",
    "COMPARE_CSV_HEADER",
    "BASELINE_STRATEGY",
]

CSV_HEADER = "strategy,size_bytes,mean_s,ci_half_s,retries,eta_measured,eta_model"
COMPARE_CSV_HEADER = (
    "strategy,size_bytes,mean_s,eta_measured,eta_model,rel_deviation"
)
BASELINE_STRATEGY = "p2p-single"

_STRATEGY_IDS = {kind: i for i, kind in enumerate(STRATEGY_KINDS)}


def default_sizes() -> list[int]:
    """Per-partition sizes from 64 B to 64 MiB, doubling."""
    return [64 * 2**k for k in range(21)]


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; sizes are bytes per partition."""

    strategies: list[str]
    sizes: list[int] = field(default_factory=default_sizes)
    n_threads: int = 4
    theta: int = 1  # partitions per thread
    gamma: float | DelayModel = 0.0  # s/B, or a sampled delay model
    iterations: int = 150
    warmup: int = 1
    confidence: float = 0.90
    max_half_width_frac: float = 0.05
    max_retries: int = 50
    seed: int = 0
    timing: TimingModel = field(default_factory=TimingModel)
    channels: int = 1
    part_aggr_size: int = 16384
    reserved_tag_space: int = 256
    legacy_am: bool = False

    def __post_init__(self) -> None:
        if not self.strategies:
            raise ValueError("at least one strategy is required")
        for kind in self.strategies:
            if kind not in STRATEGY_KINDS:
                raise ValueError(f"unknown strategy kind {kind!r}")
        if len(set(self.strategies)) != len(self.strategies):
            raise ValueError("duplicate strategies in experiment")
        if not self.sizes:
            raise ValueError("at least one size is required")
        if any(s < 1 for s in self.sizes):
            raise ValueError("sizes must be positive")
        if self.n_threads < 1 or self.theta < 1:
            raise ValueError("thread and partition counts must be at least 1")
        if isinstance(self.gamma, DelayModel):
            if self.gamma.partitions_per_thread != self.theta:
                raise ValueError(
                    "delay model and experiment disagree on partitions per thread"
                )
        elif self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")
        if self.iterations - self.warmup < 2:
            raise ValueError("need at least 2 measured iterations after warmup")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")
        if self.max_half_width_frac <= 0:
            raise ValueError("max_half_width_frac must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.channels < 1:
            raise ValueError("channels must be at least 1")

    def part_config(self) -> PartConfig:
        return PartConfig(
            part_aggr_size=self.part_aggr_size,
            num_channels=self.channels,
            reserved_tag_space=self.reserved_tag_space,
            legacy_am=self.legacy_am,
        )


@dataclass
class RunStats:
    """Result of one (strategy, size) cell."""

    strategy: str
    size_bytes: int  # per partition
    mean_s: float
    ci_half_s: float
    retries: int
    ci_ok: bool
    samples: list[float]
    eta_measured: float
    eta_model: float
    model: PipelinePrediction


def student_t_ci(samples: list[float], confidence: float = 0.90) -> tuple[float, float]:
    """Mean and Student-t confidence half width of a sample list."""
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must be in (0, 1)")
    data = np.asarray(samples, dtype=float)
    if data.size < 2:
        raise ValueError("need at least 2 samples for a confidence interval")
    if float(data.min()) == float(data.max()):
        # a constant sequence has exactly zero spread; the rounded mean of
        # n copies would otherwise manufacture variance out of thin air
        return float(data[0]), 0.0
    mean = float(data.mean())
    sd = float(data.std(ddof=1))
    quantile = float(scipy_stats.t.ppf((1.0 + confidence) / 2.0, data.size - 1))
    return mean, quantile * sd / math.sqrt(data.size)


def _draw_offsets(
    config: ExperimentConfig, s_part: int, rng: np.random.Generator
) -> list[float]:
    n = config.n_threads * config.theta
    if isinstance(config.gamma, DelayModel):
        offsets = [0.0] * n
        for thread in range(config.n_threads):
            acc = 0.0
            for j in range(config.theta):
                acc += sample_compute_time(rng, config.gamma, s_part)
                offsets[thread * config.theta + j] = acc
        return offsets
    return last_partition_delay_schedule(n, config.gamma, s_part)


def _run_cell_once(
    config: ExperimentConfig, kind: str, s_part: int, retry: int
) -> tuple[list[float], float, float]:
    net = Network(config.timing, num_channels=config.channels)
    spec = StrategySpec(
        kind=kind,
        n_threads=config.n_threads,
        partitions_per_thread=config.theta,
        buffer_bytes=s_part * config.n_threads * config.theta,
        channels=config.channels,
    )
    engine = None
    if kind == "part":
        engine = PartEngine(
            net,
            spec.n_partitions,
            spec.n_partitions,
            spec.buffer_bytes,
            config.part_config(),
        )
    seed_seq = np.random.SeedSequence(
        [config.seed, _STRATEGY_IDS[kind], s_part, retry]
    )
    rng = np.random.default_rng(seed_seq)
    samples = []
    for iteration in range(config.iterations):
        if iteration:
            # rebase each iteration to clock zero so equal inputs replay
            # to bit-identical timelines regardless of iteration index
            net.reset_time()
        offsets = _draw_offsets(config, s_part, rng)
        trace = run_iteration(spec, offsets, net, engine)
        if iteration >= config.warmup:
            samples.append(trace.elapsed)
    mean, half = student_t_ci(samples, config.confidence)
    return samples, mean, half


def _run_cell(
    config: ExperimentConfig, kind: str, s_part: int
) -> tuple[list[float], float, float, int, bool]:
    for retry in range(config.max_retries + 1):
        samples, mean, half = _run_cell_once(config, kind, s_part, retry)
        if half <= config.max_half_width_frac * mean:
            return samples, mean, half, retry, True
    return samples, mean, half, config.max_retries, False


def _model_gamma(config: ExperimentConfig) -> float:
    if isinstance(config.gamma, DelayModel):
        return delay_rate(config.gamma)
    return config.gamma


def _model_eta(config: ExperimentConfig, s_part: int, gamma: float) -> float:
    beta = config.timing.bandwidth
    if s_part / beta >= 10.0 * config.timing.latency_short:
        return predict_eta_large(config.n_threads, config.theta, gamma, beta)
    return predict_eta_small(config.n_threads, config.theta)


def run_experiment(config: ExperimentConfig) -> list[RunStats]:
    """Run every (strategy, size) cell, baseline included, and collect stats.

    Rows come back in the experiment's strategy order, sizes ascending
    within each strategy.  The baseline is always measured (it anchors
    ``eta_measured``) but only reported when requested.
    """
    sizes = sorted(config.sizes)
    gamma = _model_gamma(config)
    n_partitions = config.n_threads * config.theta

    baseline_cells: dict[int, tuple[list[float], float, float, int, bool]] = {}
    for s_part in sizes:
        baseline_cells[s_part] = _run_cell(config, BASELINE_STRATEGY, s_part)

    results = []
    for kind in config.strategies:
        for s_part in sizes:
            if kind == BASELINE_STRATEGY:
                samples, mean, half, retries, ci_ok = baseline_cells[s_part]
                eta_model = 1.0
                model = predict_pipeline(
                    n_partitions, s_part, config.timing.bandwidth, 0.0
                )
            else:
                samples, mean, half, retries, ci_ok = _run_cell(
                    config, kind, s_part
                )
                eta_model = _model_eta(config, s_part, gamma)
                model = predict_pipeline(
                    n_partitions, s_part, config.timing.bandwidth, gamma
                )
            eta_measured = baseline_cells[s_part][1] / mean
            results.append(
                RunStats(
                    strategy=kind,
                    size_bytes=s_part,
                    mean_s=mean,
                    ci_half_s=half,
                    retries=retries,
                    ci_ok=ci_ok,
                    samples=samples,
                    eta_measured=eta_measured,
                    eta_model=eta_model,
                    model=model,
                )
            )
    return results


def compare_with_model(stats: list[RunStats]) -> list[dict]:
    """Measured-vs-predicted gain rows for every non-baseline strategy.

    Requires baseline rows in ``stats`` covering every size, so the
    comparison stands on reported numbers alone.
    """
    baseline = {
        s.size_bytes: s.mean_s for s in stats if s.strategy == BASELINE_STRATEGY
    }
    if not baseline:
        raise ValueError(
            f"comparison needs {BASELINE_STRATEGY!r} rows as the measured baseline"
        )
    rows = []
    for s in stats:
        if s.strategy == BASELINE_STRATEGY:
            continue
        if s.size_bytes not in baseline:
            raise ValueError(
                f"no {BASELINE_STRATEGY!r} row for size {s.size_bytes}"
            )
        measured = baseline[s.size_bytes] / s.mean_s
        rows.append(
            {
                "strategy": s.strategy,
                "size_bytes": s.size_bytes,
                "mean_s": s.mean_s,
                "eta_measured": measured,
                "eta_model": s.eta_model,
                "rel_deviation": (measured - s.eta_model) / s.eta_model,
            }
        )
    return rows


def to_csv(stats: list[RunStats]) -> str:
    """Stats as CSV text with LF line endings."""
    lines = [CSV_HEADER]
    for s in stats:
        lines.append(
            f"{s.strategy},{s.size_bytes},{s.mean_s!r},{s.ci_half_s!r},"
            f"{s.retries},{s.eta_measured!r},{s.eta_model!r}"
        )
    return "\n".join(lines) + "\n"


def to_json(stats: list[RunStats]) -> str:
    """Stats as JSON text mirroring the CSV columns plus the model times."""
    rows = []
    for s in stats:
        rows.append(
            {
                "strategy": s.strategy,
                "size_bytes": s.size_bytes,
                "mean_s": s.mean_s,
                "ci_half_s": s.ci_half_s,
                "retries": s.retries,
                "ci_ok": s.ci_ok,
                "eta_measured": s.eta_measured,
                "eta_model": s.eta_model,
                "model": {
                    "t_bulk": s.model.t_bulk,
                    "t_pipelined": s.model.t_pipelined,
                    "delay": s.model.delay,
                    "eta": s.model.eta,
                },
            }
        )
    return json.dumps(rows, indent=2) + "\n"


def compare_rows_to_csv(rows: list[dict]) -> str:
    """Comparison rows as CSV text with LF line endings."""
    lines = [COMPARE_CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r['strategy']},{r['size_bytes']},{r['mean_s']!r},"
            f"{r['eta_measured']!r},{r['eta_model']!r},{r['rel_deviation']!r}"
        )
    return "\n".join(lines) + "\n"
