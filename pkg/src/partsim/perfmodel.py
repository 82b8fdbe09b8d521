"""Analytical performance model for pipelined partitioned transfers.

The model predicts how much a partitioned transfer gains from overlapping
partition sends with the computation that produces them, compared with a
bulk transfer that waits for every thread to finish.

Inputs are reduced to two rates:

- ``mu``: average compute time per byte of communicated data, derived from
  the workload's arithmetic intensity (flop per byte touched), its
  communication intensity (bytes sent per byte touched), and the core's
  flop throughput.
- ``gamma``: the delay rate, i.e. the expected gap between the first and
  the last partition becoming ready, per byte of partition size.  With
  ``theta`` partitions per thread and a combined noise level ``sigma`` the
  delay rate is ``mu * (theta + sigma * (sqrt(theta) + 1) - 1)``.

From these the transfer times follow for a rank sending ``n_partitions``
partitions of ``s_part`` bytes each over a link of bandwidth ``beta``:

- bulk:       ``t_bulk = n_partitions * s_part / beta``
- pipelined:  ``t_pipelined = max((n_partitions - 1) * s_part / beta - delay, 0)
  + s_part / beta`` where ``delay = gamma * s_part``.

The predicted gain ``eta = t_bulk / t_pipelined`` has the closed form
``n * theta / max(n * theta - gamma * beta, 1)`` for bandwidth-bound
messages.  Latency-bound messages pay per message instead of per byte, so
pipelining can only lose there: ``eta = 1 / (n * theta)``.

All values are bytes and seconds; see `partsim.units` for the sanctioned
boundary conversions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "WorkloadSpec",
    "DelayModel",
    "PipelinePrediction",
    "compute_mu",
    "delay_rate",
    "predict_t_bulk",
    "predict_t_pipelined",
    "predict_eta_large",
    "predict_eta_small",
    "predict_pipeline",
    "sample_compute_time",
    "last_partition_delay_schedule",
]


@dataclass(frozen=True)
class WorkloadSpec:
    """Compute-rate description of a workload.

    ``arithmetic_intensity`` is flop per byte touched, and
    ``communication_intensity`` is bytes sent per byte touched, so their
    ratio is flop per byte sent.  Dividing by the core's flop rate gives
    the compute time hidden behind each communicated byte.
    """

    arithmetic_intensity: float
    communication_intensity: float
    cpu_frequency: float = 3.5e9  # cycles/s
    flops_per_cycle: float = 8.0

    def __post_init__(self) -> None:
        for name in (
            "arithmetic_intensity",
            "communication_intensity",
            "cpu_frequency",
            "flops_per_cycle",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class DelayModel:
    """Delay-rate inputs: compute rate plus the two noise terms.

    ``system_noise`` is the relative jitter of a single thread's compute
    time and ``algorithmic_imbalance`` the relative spread of work across
    threads; the model only uses their mean ``sigma``.
    """

    mu: float  # s/B
    system_noise: float = 0.0
    algorithmic_imbalance: float = 0.0
    partitions_per_thread: int = 1

    def __post_init__(self) -> None:
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.system_noise < 0 or self.algorithmic_imbalance < 0:
            raise ValueError("noise terms must be non-negative")
        if self.partitions_per_thread < 1:
            raise ValueError("partitions_per_thread must be at least 1")

    @property
    def sigma(self) -> float:
        return (self.system_noise + self.algorithmic_imbalance) / 2.0


@dataclass(frozen=True)
class PipelinePrediction:
    """Predicted transfer times and gain for one partition size."""

    t_bulk: float  # s
    t_pipelined: float  # s
    delay: float  # s, first-to-last partition readiness gap
    eta: float  # t_bulk / t_pipelined


def compute_mu(workload: WorkloadSpec) -> float:
    """Average compute seconds per communicated byte."""
    flops_per_byte_sent = (
        workload.arithmetic_intensity / workload.communication_intensity
    )
    return flops_per_byte_sent / (workload.flops_per_cycle * workload.cpu_frequency)


def delay_rate(model: DelayModel) -> float:
    """Expected first-to-last readiness gap per byte of partition size."""
    theta = model.partitions_per_thread
    return model.mu * (theta + model.sigma * (math.sqrt(theta) + 1.0) - 1.0)


def predict_t_bulk(n_partitions: int, s_part: float, beta: float) -> float:
    """Transfer time when all partitions leave after a full barrier."""
    _check_transfer_args(n_partitions, s_part, beta)
    return n_partitions * s_part / beta


def predict_t_pipelined(
    n_partitions: int, s_part: float, beta: float, delay: float
) -> float:
    """Transfer time when the readiness gap hides part of the transfer."""
    _check_transfer_args(n_partitions, s_part, beta)
    if delay < 0:
        raise ValueError("delay must be non-negative")
    per_part = s_part / beta
    return max((n_partitions - 1) * per_part - delay, 0.0) + per_part


def predict_eta_large(
    n_threads: int, partitions_per_thread: int, gamma: float, beta: float
) -> float:
    """Predicted gain for bandwidth-bound partition sizes."""
    if n_threads < 1 or partitions_per_thread < 1:
        raise ValueError("thread and partition counts must be at least 1")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if beta <= 0:
        raise ValueError("beta must be positive")
    n_partitions = n_threads * partitions_per_thread
    return n_partitions / max(n_partitions - gamma * beta, 1.0)


def predict_eta_small(n_threads: int, partitions_per_thread: int) -> float:
    """Predicted gain for latency-bound partition sizes (a slowdown)."""
    if n_threads < 1 or partitions_per_thread < 1:
        raise ValueError("thread and partition counts must be at least 1")
    return 1.0 / (n_threads * partitions_per_thread)


def predict_pipeline(
    n_partitions: int, s_part: float, beta: float, gamma: float
) -> PipelinePrediction:
    """Bundle the bulk/pipelined times and their ratio for one size."""
    delay = gamma * s_part
    t_bulk = predict_t_bulk(n_partitions, s_part, beta)
    t_pipe = predict_t_pipelined(n_partitions, s_part, beta, delay)
    return PipelinePrediction(
        t_bulk=t_bulk, t_pipelined=t_pipe, delay=delay, eta=t_bulk / t_pipe
    )


def sample_compute_time(
    rng: np.random.Generator, model: DelayModel, s_part: float
) -> float:
    """Draw one thread's compute time for a partition of ``s_part`` bytes.

    Normally distributed around ``mu * s_part`` with relative spread
    ``sigma``; negative draws are rejected and resampled so the result is
    always a valid duration.
    """
    if s_part < 0:
        raise ValueError("s_part must be non-negative")
    mean = model.mu * s_part
    std = mean * model.sigma
    while True:
        value = float(rng.normal(mean, std))
        if value >= 0.0:
            return value


def last_partition_delay_schedule(
    n_partitions: int, gamma: float, s_part: float
) -> list[float]:
    """Ready offsets where only the final partition lags, by the model's delay.

    This is the deterministic schedule matching the analytical pipeline:
    partitions 0..n-2 are ready immediately, the last one ``gamma * s_part``
    later.
    """
    if n_partitions < 1:
        raise ValueError("n_partitions must be at least 1")
    if gamma < 0 or s_part < 0:
        raise ValueError("gamma and s_part must be non-negative")
    offsets = [0.0] * n_partitions
    offsets[-1] = gamma * s_part
    return offsets


def _check_transfer_args(n_partitions: int, s_part: float, beta: float) -> None:
    if n_partitions < 1:
        raise ValueError("n_partitions must be at least 1")
    if s_part < 0:
        raise ValueError("s_part must be non-negative")
    if beta <= 0:
        raise ValueError("beta must be positive")
