"""Analytical predictions: when does pipelining partitions pay off?

A partitioned transfer can overlap the wire time of early partitions with
the compute that produces late ones.  The delay-rate model turns a
workload description (arithmetic intensity, communication intensity,
noise, imbalance) into an expected readiness gap per byte, and from there
into a predicted gain over sending everything after a barrier.

Run:  python3 demos/01_model_predictions.py
"""

from __future__ import annotations

from partsim import (
    DelayModel,
    WorkloadSpec,
    compute_mu,
    delay_rate,
    predict_eta_large,
    predict_eta_small,
    predict_pipeline,
    s_per_b_to_us_per_mb,
    us_per_mb_to_s_per_b,
)

BETA = 25e9  # 25 GB/s link
N_THREADS = 8

WORKLOADS = {
    "fft (compute heavy)": dict(
        spec=WorkloadSpec(arithmetic_intensity=5.0, communication_intensity=1.0),
        system_noise=0.04,
        algorithmic_imbalance=0.0,
    ),
    "stencil (halo only)": dict(
        spec=WorkloadSpec(
            arithmetic_intensity=1.0 / 13.0,
            communication_intensity=(66.0 / 64.0) ** 3 - 1.0,
        ),
        system_noise=0.04,
        algorithmic_imbalance=0.5,
    ),
}


def main() -> None:
    print("Fixed delay rates: gain grows until the gap hides the whole wire time")
    print(f"  N={N_THREADS} threads, one partition each, beta={BETA / 1e9:.0f} GB/s")
    for gamma_us in (1.0, 10.0, 100.0, 1000.0):
        eta = predict_eta_large(N_THREADS, 1, us_per_mb_to_s_per_b(gamma_us), BETA)
        print(f"  gamma = {gamma_us:>6.0f} us/MB -> eta = {eta:.3f}")
    print()

    for name, params in WORKLOADS.items():
        mu = compute_mu(params["spec"])
        print(f"{name}: mu = {s_per_b_to_us_per_mb(mu):.4f} us/MB")
        print(f"  {'theta':>5}  {'gamma (us/MB)':>14}  {'eta large':>9}  {'eta small':>9}")
        for theta in (1, 2, 8):
            model = DelayModel(
                mu=mu,
                system_noise=params["system_noise"],
                algorithmic_imbalance=params["algorithmic_imbalance"],
                partitions_per_thread=theta,
            )
            gamma = delay_rate(model)
            eta_large = predict_eta_large(N_THREADS, theta, gamma, BETA)
            eta_small = predict_eta_small(N_THREADS, theta)
            print(
                f"  {theta:>5}  {s_per_b_to_us_per_mb(gamma):>14.4f}  "
                f"{eta_large:>9.4f}  {eta_small:>9.4f}"
            )
        print()

    print("One size, end to end: 4 partitions of 1 MiB at gamma = 100 us/MB")
    prediction = predict_pipeline(4, 1 << 20, BETA, us_per_mb_to_s_per_b(100.0))
    print(f"  bulk transfer      {prediction.t_bulk * 1e6:>9.2f} us")
    print(f"  pipelined transfer {prediction.t_pipelined * 1e6:>9.2f} us")
    print(f"  predicted gain     {prediction.eta:>9.3f}x")


if __name__ == "__main__":
    main()
