"""Unit conversions for the simulation's internal byte/second system.

Every quantity inside the package is expressed in bytes and seconds.
Presentation units (us/MB for delay rates, GB/s for bandwidth, MiB for
buffer sizes) are converted exactly once, at the CLI and config
boundaries, using the helpers below.
"""

US_PER_MB_IN_S_PER_B = 1e-12  # 1 us/MB = 1e-6 s / 1e6 B

KIB = 1024
MIB = 1024 * 1024


def us_per_mb_to_s_per_b(value: float) -> float:
    """Convert a delay or compute rate from us/MB to s/B."""
    return value * US_PER_MB_IN_S_PER_B


def s_per_b_to_us_per_mb(value: float) -> float:
    """Convert a delay or compute rate from s/B to us/MB."""
    return value / US_PER_MB_IN_S_PER_B


def gb_per_s_to_b_per_s(value: float) -> float:
    """Convert a bandwidth from GB/s to B/s."""
    return value * 1e9


def seconds_to_us(value: float) -> float:
    return value * 1e6


def us_to_seconds(value: float) -> float:
    return value * 1e-6
