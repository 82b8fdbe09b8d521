"""Tests for the benchmark harness and its statistics."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from scipy import stats as scipy_stats

from partsim.bench import (
    BASELINE_STRATEGY,
    COMPARE_CSV_HEADER,
    CSV_HEADER,
    ExperimentConfig,
    RunStats,
    compare_rows_to_csv,
    compare_with_model,
    default_sizes,
    run_experiment,
    student_t_ci,
    to_csv,
    to_json,
)
from partsim.perfmodel import (
    DelayModel,
    PipelinePrediction,
    predict_eta_large,
    predict_eta_small,
)
from partsim.simnet import TimingModel


def _config(**overrides) -> ExperimentConfig:
    defaults = dict(
        strategies=["part", "p2p-single"],
        sizes=[4096],
        n_threads=4,
        theta=1,
        gamma=0.0,
        iterations=6,
        warmup=1,
        seed=3,
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


# -- confidence intervals -------------------------------------------------------


def test_t_quantile_matches_numeric_integration() -> None:
    """The library quantile at 4 degrees of freedom is checked against a
    direct integration of the t density."""
    df = 4
    q = float(scipy_stats.t.ppf(0.95, df))
    x = np.linspace(0.0, q, 400_001)
    density = (
        math.gamma((df + 1) / 2)
        / (math.sqrt(df * math.pi) * math.gamma(df / 2))
        * (1.0 + x**2 / df) ** (-(df + 1) / 2)
    )
    cdf = 0.5 + float(np.trapezoid(density, x))
    assert cdf == pytest.approx(0.95, abs=1e-9)


def test_small_sample_half_width() -> None:
    mean, half = student_t_ci([1.0, 2.0, 3.0, 4.0, 5.0], 0.90)
    assert mean == 3.0
    assert half == pytest.approx(1.5074433190623222, rel=1e-12)
    assert abs(half - 1.5073) < 1e-3


def test_half_width_approaches_normal_quantile() -> None:
    # for huge samples the t quantile collapses to the normal one
    n = 2_000_000
    samples = [0.0, 2.0] * (n // 2)  # mean 1, sd 1
    mean, half = student_t_ci(samples, 0.90)
    assert mean == 1.0
    assert half == pytest.approx(1.6448536 / math.sqrt(n), rel=1e-4)


def test_identical_samples_have_zero_width() -> None:
    mean, half = student_t_ci([2.5] * 10)
    assert mean == 2.5
    assert half == 0.0


def test_ci_rejects_degenerate_input() -> None:
    with pytest.raises(ValueError):
        student_t_ci([1.0])
    with pytest.raises(ValueError):
        student_t_ci([])
    with pytest.raises(ValueError):
        student_t_ci([1.0, 2.0], confidence=0.0)
    with pytest.raises(ValueError):
        student_t_ci([1.0, 2.0], confidence=1.0)


def test_ci_coverage_on_gaussian_resamples() -> None:
    """A 90% interval should cover the true mean about 90% of the time."""
    rng = np.random.default_rng(2024)
    trials, n = 10_000, 8
    draws = rng.normal(0.0, 1.0, size=(trials, n))
    means = draws.mean(axis=1)
    sds = draws.std(axis=1, ddof=1)
    quantile = float(scipy_stats.t.ppf(0.95, n - 1))
    half = quantile * sds / math.sqrt(n)
    coverage = float(np.mean(np.abs(means) <= half))
    assert 0.88 <= coverage <= 0.92


# -- experiment runs ------------------------------------------------------------


def test_default_sizes_double_from_64_bytes() -> None:
    sizes = default_sizes()
    assert sizes[0] == 64
    assert sizes[-1] == 64 * 1024 * 1024
    assert len(sizes) == 21
    assert all(b == 2 * a for a, b in zip(sizes, sizes[1:]))


def test_deterministic_offsets_give_zero_variance() -> None:
    stats = run_experiment(_config())
    assert [s.strategy for s in stats] == ["part", "p2p-single"]
    for s in stats:
        assert len(s.samples) == 5  # warmup iteration dropped
        assert s.ci_half_s == 0.0
        assert s.retries == 0
        assert s.ci_ok
    baseline = next(s for s in stats if s.strategy == BASELINE_STRATEGY)
    assert baseline.eta_measured == 1.0
    assert baseline.eta_model == 1.0


def test_warmup_hides_the_handshake_iteration() -> None:
    warm = run_experiment(_config(strategies=["part"], iterations=4, warmup=1))[0]
    cold = run_experiment(
        _config(strategies=["part"], iterations=4, warmup=0, max_retries=0)
    )[0]
    assert len(warm.samples) == 3
    assert len(set(warm.samples)) == 1
    assert len(cold.samples) == 4
    assert cold.samples[0] > cold.samples[1]  # handshake cost shows up
    assert cold.samples[1:] == warm.samples


def test_single_partition_matches_baseline() -> None:
    stats = run_experiment(
        _config(strategies=["part", "p2p-single"], sizes=[1024], n_threads=1)
    )
    part = next(s for s in stats if s.strategy == "part")
    base = next(s for s in stats if s.strategy == "p2p-single")
    assert abs(part.mean_s - base.mean_s) / base.mean_s < 0.01


def test_model_gain_switches_regimes_with_size() -> None:
    timing = TimingModel()
    config = _config(
        strategies=["part"], sizes=[64, 1 << 20], gamma=100.0 * 1e-12
    )
    stats = run_experiment(config)
    small = next(s for s in stats if s.size_bytes == 64)
    large = next(s for s in stats if s.size_bytes == 1 << 20)
    assert small.eta_model == predict_eta_small(4, 1)
    assert large.eta_model == predict_eta_large(
        4, 1, 100.0 * 1e-12, timing.bandwidth
    )
    assert large.eta_model > 1.0 > small.eta_model


def test_fixed_seed_reproduces_output_bytes() -> None:
    noise = DelayModel(mu=1e-10, system_noise=0.1)
    config_kwargs = dict(
        strategies=["p2p-multi", "p2p-single"],
        sizes=[2048, 8192],
        gamma=noise,
        iterations=5,
        warmup=1,
        max_retries=3,
        seed=42,
    )
    first = to_csv(run_experiment(_config(**config_kwargs)))
    second = to_csv(run_experiment(_config(**config_kwargs)))
    assert first == second
    other_seed = to_csv(run_experiment(_config(**dict(config_kwargs, seed=43))))
    assert other_seed != first


def test_noisy_cell_exhausts_retries_without_failing() -> None:
    noise = DelayModel(mu=1e-9, system_noise=0.5)
    stats = run_experiment(
        _config(
            strategies=["p2p-multi"],
            sizes=[4096],
            gamma=noise,
            iterations=3,
            warmup=1,
            max_half_width_frac=1e-9,
            max_retries=2,
        )
    )
    row = stats[0]
    assert row.retries == 2
    assert not row.ci_ok
    assert math.isfinite(row.mean_s) and row.mean_s > 0


def test_experiment_rows_follow_strategy_then_size_order() -> None:
    stats = run_experiment(
        _config(strategies=["p2p-single", "part"], sizes=[8192, 64])
    )
    assert [(s.strategy, s.size_bytes) for s in stats] == [
        ("p2p-single", 64),
        ("p2p-single", 8192),
        ("part", 64),
        ("part", 8192),
    ]


def test_config_validation() -> None:
    with pytest.raises(ValueError):
        _config(strategies=[])
    with pytest.raises(ValueError):
        _config(strategies=["teleport"])
    with pytest.raises(ValueError):
        _config(strategies=["part", "part"])
    with pytest.raises(ValueError):
        _config(sizes=[])
    with pytest.raises(ValueError):
        _config(sizes=[0])
    with pytest.raises(ValueError):
        _config(iterations=2, warmup=1)
    with pytest.raises(ValueError):
        _config(confidence=1.0)
    with pytest.raises(ValueError):
        _config(gamma=-1.0)
    with pytest.raises(ValueError):
        _config(seed=-1)
    with pytest.raises(ValueError):
        _config(gamma=DelayModel(mu=1e-10, partitions_per_thread=2), theta=1)
    # matching partition counts are fine
    _config(gamma=DelayModel(mu=1e-10, partitions_per_thread=2), theta=2)


# -- model comparison and output formats ----------------------------------------


def _stats_row(
    strategy: str, size: int, mean: float, eta_model: float = 1.0
) -> RunStats:
    return RunStats(
        strategy=strategy,
        size_bytes=size,
        mean_s=mean,
        ci_half_s=0.0,
        retries=0,
        ci_ok=True,
        samples=[mean, mean],
        eta_measured=1.0,
        eta_model=eta_model,
        model=PipelinePrediction(mean, mean, 0.0, 1.0),
    )


def test_compare_with_model_measures_against_baseline() -> None:
    stats = [
        _stats_row("p2p-single", 1024, 4e-6),
        _stats_row("part", 1024, 2e-6, eta_model=1.6),
    ]
    rows = compare_with_model(stats)
    assert len(rows) == 1
    row = rows[0]
    assert row["strategy"] == "part"
    assert row["eta_measured"] == pytest.approx(2.0)
    assert row["rel_deviation"] == pytest.approx((2.0 - 1.6) / 1.6)


def test_compare_with_model_requires_full_baseline() -> None:
    with pytest.raises(ValueError, match="baseline"):
        compare_with_model([_stats_row("part", 1024, 2e-6)])
    with pytest.raises(ValueError, match="1024"):
        compare_with_model(
            [
                _stats_row("p2p-single", 64, 1e-6),
                _stats_row("part", 1024, 2e-6),
            ]
        )


def test_csv_layout() -> None:
    stats = run_experiment(_config(sizes=[64]))
    text = to_csv(stats)
    lines = text.split("\n")
    assert lines[0] == CSV_HEADER
    assert text.endswith("\n") and "\r" not in text
    assert len(lines) == len(stats) + 2  # header, rows, trailing newline
    first = lines[1].split(",")
    assert first[0] == "part"
    assert int(first[1]) == 64
    assert float(first[2]) == stats[0].mean_s  # repr round-trips


def test_compare_csv_layout() -> None:
    stats = [
        _stats_row("p2p-single", 1024, 4e-6),
        _stats_row("part", 1024, 2e-6, eta_model=1.6),
    ]
    text = compare_rows_to_csv(compare_with_model(stats))
    lines = text.splitlines()
    assert lines[0] == COMPARE_CSV_HEADER
    assert lines[1].startswith("part,1024,")


def test_json_mirrors_csv_and_adds_model_times() -> None:
    stats = run_experiment(_config(sizes=[64]))
    rows = json.loads(to_json(stats))
    assert len(rows) == len(stats)
    for row, s in zip(rows, stats):
        assert row["strategy"] == s.strategy
        assert row["size_bytes"] == s.size_bytes
        assert row["mean_s"] == s.mean_s
        assert row["ci_ok"] is True
        assert set(row["model"]) == {"t_bulk", "t_pipelined", "delay", "eta"}
