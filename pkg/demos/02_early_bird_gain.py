"""Measured early-bird gain: partitioned sends against the bulk baseline.

The benchmark pits the partitioned-send engine against a single
whole-buffer send when the last partition lags behind the others.  The
early partitions' wire time hides inside the wait, so the partitioned
transfer finishes earlier; the measured gain should track the analytical
prediction and approach its theoretical ceiling once latencies stop
mattering.

Run:  python3 demos/02_early_bird_gain.py
"""

from __future__ import annotations

from partsim import (
    ExperimentConfig,
    TimingModel,
    predict_eta_large,
    run_experiment,
    us_per_mb_to_s_per_b,
)

MIB = 1 << 20
GAMMA = us_per_mb_to_s_per_b(100.0)  # the last partition lags 100 us per MB


def main() -> None:
    sizes = [MIB, 2 * MIB, 4 * MIB, 8 * MIB, 16 * MIB]
    stats = run_experiment(
        ExperimentConfig(
            strategies=["part"], sizes=sizes, n_threads=4, theta=1, gamma=GAMMA
        )
    )

    ceiling = predict_eta_large(4, 1, GAMMA, TimingModel().bandwidth)
    print("4 threads, one partition each, gamma = 100 us/MB")
    print(f"  {'size':>8}  {'baseline':>12}  {'part':>12}  {'gain':>6}  {'model':>6}")
    for row in stats:
        baseline = row.mean_s * row.eta_measured
        print(
            f"  {row.size_bytes // MIB:>5} MiB"
            f"  {baseline * 1e6:>9.1f} us"
            f"  {row.mean_s * 1e6:>9.1f} us"
            f"  {row.eta_measured:>6.3f}"
            f"  {row.eta_model:>6.3f}"
        )
    print(f"  theoretical ceiling for this shape: {ceiling:.3f}x")
    print()

    ideal = run_experiment(
        ExperimentConfig(
            strategies=["part"],
            sizes=[16 * MIB],
            n_threads=4,
            theta=1,
            gamma=GAMMA,
            timing=TimingModel(
                latency_short=0.0,
                latency_bcopy=0.0,
                latency_zcopy=0.0,
                rendezvous_rtt=0.0,
                injection_overhead=0.0,
                put_discount=0.0,
            ),
        )
    )[0]
    print(
        "With latencies and injection overhead zeroed, only pipelining is left:"
        f" measured gain {ideal.eta_measured:.4f} vs ceiling {ceiling:.4f}"
    )


if __name__ == "__main__":
    main()
