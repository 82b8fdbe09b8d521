"""Desk-scale simulation of partitioned point-to-point communication.

The package models a two-rank system well enough to study protocol
questions without hardware: an analytical pipelining model
(`partsim.perfmodel`), a deterministic discrete-event network
(`partsim.simnet`), the partitioned-send protocol engine
(`partsim.partcomm`), the competing user-level strategies
(`partsim.strategies`), and a statistics harness with a CLI
(`partsim.bench`, `partsim.cli`).
"""

from .bench import (
    CSV_HEADER,
    ExperimentConfig,
    RunStats,
    compare_with_model,
    default_sizes,
    run_experiment,
    student_t_ci,
    to_csv,
    to_json,
)
from .partcomm import (
    DeadlockError,
    LifecycleError,
    PartConfig,
    PartEngine,
    PartitionMap,
    ProtocolError,
    TagPlan,
    assign_channels,
    map_partitions_to_messages,
    parrived,
    pready,
    precv_init,
    psend_init,
    start,
    wait,
)
from .perfmodel import (
    DelayModel,
    PipelinePrediction,
    WorkloadSpec,
    compute_mu,
    delay_rate,
    last_partition_delay_schedule,
    predict_eta_large,
    predict_eta_small,
    predict_pipeline,
    predict_t_bulk,
    predict_t_pipelined,
    sample_compute_time,
)
from .simnet import (
    EventQueue,
    Network,
    RecvHandle,
    SendHandle,
    SimMessage,
    TimingModel,
    transfer_time,
)
from .strategies import (
    STRATEGY_KINDS,
    IterationTrace,
    MessageCount,
    StrategySpec,
    run_iteration,
    strategy_message_count,
)
from .units import (
    KIB,
    MIB,
    gb_per_s_to_b_per_s,
    s_per_b_to_us_per_mb,
    seconds_to_us,
    us_per_mb_to_s_per_b,
    us_to_seconds,
)

__version__ = "0.1.0"
