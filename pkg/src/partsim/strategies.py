"""Communication strategies competing with partitioned sends.

Each strategy moves the same logical buffer from rank 0 to rank 1, split
into ``n_threads * partitions_per_thread`` partitions that become ready at
caller-supplied offsets.  ``run_iteration`` replays one iteration of a
strategy on a network and reports the timeline:

- ``part``: the partitioned-send engine from `partsim.partcomm`.
- ``p2p-single``: one send of the whole buffer after all partitions are
  ready.  This is the bulk-synchronization baseline all gains are
  measured against.
- ``p2p-multi``: one send per partition, issued as it becomes ready, each
  thread on its own tag and channel.
- ``rma-passive-*``: the receiver grants exposure with a zero-byte send,
  each partition is put as it becomes ready, and the sender closes the
  iteration with a zero-byte send after flushing; the ``-multi`` variant
  flushes per thread instead of once at the end.
- ``rma-active-*``: post/start/complete/wait epochs; the ``-single``
  variant opens one epoch for the whole rank, the ``-multi`` variant one
  epoch per thread, each carrying its own zero-byte post and complete
  notifications.

All human-driven sizes here are bytes and all times seconds.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass

from .partcomm import PartConfig, PartEngine, map_partitions_to_messages
from .simnet import Network, SimMessage

__all__ = [
    "STRATEGY_KINDS",
    "StrategySpec",
    "IterationTrace",
    "MessageCount",
    "run_iteration",
    "strategy_message_count",
]

STRATEGY_KINDS = (
    "part",
    "p2p-single",
    "p2p-multi",
    "rma-passive-single",
    "rma-passive-multi",
    "rma-active-single",
    "rma-active-multi",
)

SENDER = 0
RECEIVER = 1

# Tag ranges for the strategies' own traffic.  The partitioned engine uses
# its allocator range plus negative control tags, so nothing collides.
DATA_TAG_BASE = 1_000
EXPOSE_TAG = 500_000
DONE_TAG = 500_001
POST_TAG_BASE = 510_000
COMPLETE_TAG_BASE = 520_000


@dataclass(frozen=True)
class StrategySpec:
    """One strategy applied to one buffer shape."""

    kind: str
    n_threads: int
    partitions_per_thread: int
    buffer_bytes: int
    channels: int = 1

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.n_threads < 1 or self.partitions_per_thread < 1:
            raise ValueError("thread and partition counts must be at least 1")
        if self.buffer_bytes < 1:
            raise ValueError("buffer_bytes must be positive")
        if self.channels < 1:
            raise ValueError("channels must be at least 1")

    @property
    def n_partitions(self) -> int:
        return self.n_threads * self.partitions_per_thread

    def partition_bounds(self) -> list[int]:
        n = self.n_partitions
        return [self.buffer_bytes * p // n for p in range(n + 1)]

    def thread_channel(self, thread: int) -> int:
        return thread % self.channels


@dataclass
class IterationTrace:
    """Timeline of one strategy iteration.

    ``elapsed`` is the receiver's wait completion minus the iteration
    start and minus the largest ready offset, i.e. the communication cost
    that remains after the computation that produced the data.
    """

    kind: str
    start_time: float
    ready_times: list[float]
    injection_times: list[float]
    delivery_times: list[float]
    control_delivery_times: list[float]
    data_messages: list[tuple[int, float, float]]  # (size, injected, delivered)
    flush_times: list[float] | None
    sender_completion: float
    receiver_completion: float
    elapsed: float


MessageCount = namedtuple("MessageCount", ["data", "control"])


def run_iteration(
    spec: StrategySpec,
    ready_offsets: list[float],
    net: Network,
    engine: PartEngine | None = None,
) -> IterationTrace:
    """Replay one iteration of ``spec`` starting at the network's clock.

    ``ready_offsets[p]`` is the delay, from the iteration start, until
    partition ``p``'s data exists.  The ``part`` strategy needs the
    persistent ``engine``; the others build their traffic from scratch
    each iteration.
    """
    n = spec.n_partitions
    if len(ready_offsets) != n:
        raise ValueError(
            f"expected {n} ready offsets, got {len(ready_offsets)}"
        )
    if any(off < 0 for off in ready_offsets):
        raise ValueError("ready offsets must be non-negative")
    if spec.channels > net.num_channels:
        raise ValueError("strategy wants more channels than the network provides")

    t0 = net.clock
    ready_times = [t0 + off for off in ready_offsets]
    first_handle = len(net.send_handles)

    if spec.kind == "part":
        if engine is None:
            raise ValueError("the part strategy needs a PartEngine")
        sender_completion, receiver_completion, flush_times = _run_part(
            spec, ready_times, engine
        )
    elif spec.kind == "p2p-single":
        sender_completion, receiver_completion, flush_times = _run_p2p_single(
            spec, ready_times, net
        )
    elif spec.kind == "p2p-multi":
        sender_completion, receiver_completion, flush_times = _run_p2p_multi(
            spec, ready_times, net
        )
    elif spec.kind in ("rma-passive-single", "rma-passive-multi"):
        sender_completion, receiver_completion, flush_times = _run_rma_passive(
            spec, ready_times, net
        )
    else:
        sender_completion, receiver_completion, flush_times = _run_rma_active(
            spec, ready_times, net
        )

    new_handles = net.send_handles[first_handle:]
    data = [h for h in new_handles if h.msg.kind != "control"]
    controls = [h for h in new_handles if h.msg.kind == "control"]
    data_messages = sorted(
        (h.msg.size, h.msg.inject_time, h.delivery_time) for h in data
    )
    elapsed = receiver_completion - t0 - max(ready_offsets)
    return IterationTrace(
        kind=spec.kind,
        start_time=t0,
        ready_times=ready_times,
        injection_times=sorted(h.msg.inject_time for h in data),
        delivery_times=sorted(h.delivery_time for h in data),
        control_delivery_times=sorted(h.delivery_time for h in controls),
        data_messages=data_messages,
        flush_times=flush_times,
        sender_completion=sender_completion,
        receiver_completion=receiver_completion,
        elapsed=elapsed,
    )


def _run_part(
    spec: StrategySpec, ready_times: list[float], engine: PartEngine
) -> tuple[float, float, None]:
    send_state, recv_state = engine.send_state, engine.recv_state
    recv_state.start()
    send_state.start()
    for p, when in enumerate(ready_times):
        send_state.pready(p, when)
    receiver_completion = recv_state.wait()
    sender_completion = send_state.wait()
    return sender_completion, receiver_completion, None


def _run_p2p_single(
    spec: StrategySpec, ready_times: list[float], net: Network
) -> tuple[float, float, None]:
    recv = net.post_recv(RECEIVER, DATA_TAG_BASE, 0)
    handle = net.post_message(
        SimMessage(
            src_rank=SENDER,
            dst_rank=RECEIVER,
            channel=0,
            tag=DATA_TAG_BASE,
            size=spec.buffer_bytes,
            inject_time=max(ready_times),
        )
    )
    net.advance_until_idle()
    return handle.delivery_time, recv.completion_time, None


def _run_p2p_multi(
    spec: StrategySpec, ready_times: list[float], net: Network
) -> tuple[float, float, None]:
    bounds = spec.partition_bounds()
    recvs = []
    handles = []
    for p in range(spec.n_partitions):
        channel = spec.thread_channel(p // spec.partitions_per_thread)
        recvs.append(net.post_recv(RECEIVER, DATA_TAG_BASE + p, channel))
        handles.append(
            net.post_message(
                SimMessage(
                    src_rank=SENDER,
                    dst_rank=RECEIVER,
                    channel=channel,
                    tag=DATA_TAG_BASE + p,
                    size=bounds[p + 1] - bounds[p],
                    inject_time=ready_times[p],
                )
            )
        )
    net.advance_until_idle()
    sender_completion = max(h.delivery_time for h in handles)
    receiver_completion = max(r.completion_time for r in recvs)
    return sender_completion, receiver_completion, None


def _run_rma_passive(
    spec: StrategySpec, ready_times: list[float], net: Network
) -> tuple[float, float, list[float]]:
    single = spec.kind == "rma-passive-single"
    bounds = spec.partition_bounds()
    puts: list = []
    done_handle: list = []
    remaining = [spec.n_partitions]

    def on_put_delivered(_handle) -> None:
        remaining[0] -= 1
        if remaining[0] == 0:
            done_handle.append(
                net.post_message(
                    SimMessage(
                        src_rank=SENDER,
                        dst_rank=RECEIVER,
                        channel=0,
                        tag=DONE_TAG,
                        size=0,
                        inject_time=net.clock,
                        kind="control",
                    )
                )
            )

    def on_exposure_granted(_recv) -> None:
        now = net.clock
        for p in range(spec.n_partitions):
            thread = p // spec.partitions_per_thread
            channel = 0 if single else spec.thread_channel(thread)
            puts.append(
                net.post_message(
                    SimMessage(
                        src_rank=SENDER,
                        dst_rank=RECEIVER,
                        channel=channel,
                        tag=None,
                        size=bounds[p + 1] - bounds[p],
                        inject_time=max(ready_times[p], now),
                        kind="put",
                    ),
                    on_delivery=on_put_delivered,
                )
            )

    net.post_recv(SENDER, EXPOSE_TAG, 0, on_complete=on_exposure_granted)
    done_recv = net.post_recv(RECEIVER, DONE_TAG, 0)
    net.post_message(
        SimMessage(
            src_rank=RECEIVER,
            dst_rank=SENDER,
            channel=0,
            tag=EXPOSE_TAG,
            size=0,
            inject_time=net.clock,
            kind="control",
        )
    )
    net.advance_until_idle()

    if single:
        flush_times = [max(h.delivery_time for h in puts)]
    else:
        flush_times = []
        theta = spec.partitions_per_thread
        for t in range(spec.n_threads):
            thread_puts = puts[t * theta : (t + 1) * theta]
            flush_times.append(max(h.delivery_time for h in thread_puts))
    return done_handle[0].delivery_time, done_recv.completion_time, flush_times


def _run_rma_active(
    spec: StrategySpec, ready_times: list[float], net: Network
) -> tuple[float, float, list[float]]:
    single = spec.kind == "rma-active-single"
    bounds = spec.partition_bounds()
    theta = spec.partitions_per_thread
    n_epochs = 1 if single else spec.n_threads
    epoch_threads = (
        [list(range(spec.n_threads))] if single else [[t] for t in range(spec.n_threads)]
    )
    puts_of_epoch: dict[int, list] = {e: [] for e in range(n_epochs)}
    complete_handles: dict[int, object] = {}
    complete_recvs = []

    def make_epoch_start(epoch: int):
        remaining = [len(epoch_threads[epoch]) * theta]
        channel = 0 if single else spec.thread_channel(epoch_threads[epoch][0])

        def on_put_delivered(_handle) -> None:
            remaining[0] -= 1
            if remaining[0] == 0:
                complete_handles[epoch] = net.post_message(
                    SimMessage(
                        src_rank=SENDER,
                        dst_rank=RECEIVER,
                        channel=channel,
                        tag=COMPLETE_TAG_BASE + epoch,
                        size=0,
                        inject_time=net.clock,
                        kind="control",
                    )
                )

        def on_posted(_recv) -> None:
            now = net.clock
            for thread in epoch_threads[epoch]:
                for p in range(thread * theta, (thread + 1) * theta):
                    puts_of_epoch[epoch].append(
                        net.post_message(
                            SimMessage(
                                src_rank=SENDER,
                                dst_rank=RECEIVER,
                                channel=channel,
                                tag=None,
                                size=bounds[p + 1] - bounds[p],
                                inject_time=max(ready_times[p], now),
                                kind="put",
                            ),
                            on_delivery=on_put_delivered,
                        )
                    )

        return on_posted

    for epoch in range(n_epochs):
        channel = 0 if single else spec.thread_channel(epoch_threads[epoch][0])
        net.post_recv(
            SENDER, POST_TAG_BASE + epoch, channel, on_complete=make_epoch_start(epoch)
        )
        complete_recvs.append(
            net.post_recv(RECEIVER, COMPLETE_TAG_BASE + epoch, channel)
        )
        net.post_message(
            SimMessage(
                src_rank=RECEIVER,
                dst_rank=SENDER,
                channel=channel,
                tag=POST_TAG_BASE + epoch,
                size=0,
                inject_time=net.clock,
                kind="control",
            )
        )
    net.advance_until_idle()

    sender_completion = max(
        complete_handles[e].delivery_time for e in range(n_epochs)
    )
    receiver_completion = max(r.completion_time for r in complete_recvs)
    flush_times = [
        max(h.delivery_time for h in puts_of_epoch[e]) for e in range(n_epochs)
    ]
    return sender_completion, receiver_completion, flush_times


def strategy_message_count(
    spec: StrategySpec, part_config: PartConfig | None = None
) -> MessageCount:
    """Steady-state per-iteration message counts (data, control) of a strategy."""
    if spec.kind == "p2p-single":
        return MessageCount(1, 0)
    if spec.kind == "p2p-multi":
        return MessageCount(spec.n_partitions, 0)
    if spec.kind == "part":
        config = part_config if part_config is not None else PartConfig()
        if config.legacy_am:
            return MessageCount(1, 1)
        pm = map_partitions_to_messages(
            spec.n_partitions,
            spec.n_partitions,
            spec.buffer_bytes,
            config.part_aggr_size,
        )
        return MessageCount(pm.n_messages, 0)
    if spec.kind in ("rma-passive-single", "rma-passive-multi", "rma-active-single"):
        return MessageCount(spec.n_partitions, 2)
    return MessageCount(spec.n_partitions, 2 * spec.n_threads)
