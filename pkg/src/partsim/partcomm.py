"""Partitioned-send protocol engine over the simulated transport.

One sender/receiver pair exchanges a persistent partitioned request:

- ``psend_init`` reserves a contiguous tag block for the data messages and
  posts a zero-byte ready-to-send (RTS) control carrying the partition
  count, buffer size, mode and tag base.
- ``precv_init`` posts the matching receive.  When the RTS arrives the
  receiver checks that both sides agree on the buffer size, maps the two
  partition counts onto wire messages (gcd of the counts, then greedy
  aggregation under a byte threshold), posts one receive per wire message
  and answers with a clear-to-send (CTS) carrying the message count and
  byte bounds.
- ``start`` arms one ready counter per wire message, initialized to the
  number of sender partitions feeding that message.
- ``pready`` marks a partition ready and decrements its message's
  counter; the decrement to zero hands the message to the network, at the
  latest ready time of its partitions (and not before the CTS on the
  first iteration).
- ``parrived`` reports whether the wire message covering a receive-side
  partition has arrived; ``wait`` drains the network and returns the
  completion time, raising DeadlockError when counters or receives can
  never finish.

A legacy active-message fallback (used when the tag space is exhausted,
or forced by configuration) sends the whole buffer as one message guarded
by a single counter of ``n_partitions + 1``; the extra decrement is a CTS
the receiver re-issues every iteration, so the sender can never overrun a
receiver still in its previous iteration.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

from .simnet import DeadlockError, Network, RecvHandle, SendHandle, SimMessage

__all__ = [
    "ProtocolError",
    "LifecycleError",
    "PartConfig",
    "PartitionMap",
    "TagPlan",
    "PartSendState",
    "PartRecvState",
    "PartEngine",
    "map_partitions_to_messages",
    "assign_channels",
    "psend_init",
    "precv_init",
    "start",
    "pready",
    "parrived",
    "wait",
]

TAG_MATCHED = "tag-matched"
LEGACY_AM = "legacy-am"

CONTROL_CHANNEL = 0


class ProtocolError(RuntimeError):
    """The two sides of a request disagree about its shape."""


class LifecycleError(RuntimeError):
    """A request call arrived in an order the lifecycle forbids."""


@dataclass(frozen=True)
class PartConfig:
    """Protocol knobs, normally taken from the environment on real systems.

    ``part_aggr_size`` is the aggregation threshold in bytes (0 disables
    aggregation), ``num_channels`` the number of per-rank network
    channels data messages are spread over round-robin, and
    ``reserved_tag_space`` the number of tags available per peer for
    partitioned data before new requests fall back to the legacy path.
    """

    part_aggr_size: int = 16384
    num_channels: int = 1
    reserved_tag_space: int = 256
    legacy_am: bool = False

    def __post_init__(self) -> None:
        if self.part_aggr_size < 0:
            raise ValueError("part_aggr_size must be non-negative")
        if self.num_channels < 1:
            raise ValueError("num_channels must be at least 1")
        if self.reserved_tag_space < 1:
            raise ValueError("reserved_tag_space must be at least 1")


@dataclass(frozen=True)
class PartitionMap:
    """How the two partition counts share one buffer's wire messages.

    ``message_bounds`` has ``n_messages + 1`` byte offsets; message ``m``
    covers ``[message_bounds[m], message_bounds[m + 1])``.  The maps give
    the wire message index of each sender/receiver partition.
    """

    n_messages: int
    send_map: list[int]
    recv_map: list[int]
    message_bounds: list[int]


def map_partitions_to_messages(
    n_send: int, n_recv: int, buffer_bytes: int, aggr_threshold: int
) -> PartitionMap:
    """Split a buffer into wire messages both partition counts align with.

    The buffer is first cut at the gcd of the two counts, the finest
    granularity at which every partition on either side falls entirely
    inside one piece.  Adjacent pieces are then aggregated left to right
    while the combined size stays within ``aggr_threshold`` (0 turns
    aggregation off; a single piece larger than the threshold still
    travels alone).
    """
    if n_send < 1 or n_recv < 1:
        raise ValueError("partition counts must be at least 1")
    if buffer_bytes < 1:
        raise ValueError("buffer_bytes must be positive")
    if aggr_threshold < 0:
        raise ValueError("aggr_threshold must be non-negative")

    g = math.gcd(n_send, n_recv)
    base_bounds = [buffer_bytes * k // g for k in range(g + 1)]

    groups: list[int] = [0]  # first base index of each wire message
    end = 1
    while end < g:
        group_bytes = base_bounds[end + 1] - base_bounds[groups[-1]]
        if aggr_threshold > 0 and group_bytes <= aggr_threshold:
            end += 1
            continue
        groups.append(end)
        end += 1

    message_bounds = [base_bounds[k] for k in groups] + [buffer_bytes]
    # Tiny buffers can produce empty pieces (duplicate bounds); drop them so
    # every wire message carries bytes and is fed by at least one partition.
    deduped = [message_bounds[0]]
    for bound in message_bounds[1:]:
        if bound > deduped[-1]:
            deduped.append(bound)
    message_bounds = deduped
    send_map = _offsets_to_messages(n_send, buffer_bytes, message_bounds)
    recv_map = _offsets_to_messages(n_recv, buffer_bytes, message_bounds)
    return PartitionMap(
        n_messages=len(message_bounds) - 1,
        send_map=send_map,
        recv_map=recv_map,
        message_bounds=message_bounds,
    )


def _offsets_to_messages(
    n_partitions: int, buffer_bytes: int, bounds: list[int]
) -> list[int]:
    """Wire message index of each partition, by its start offset."""
    result = []
    for p in range(n_partitions):
        offset = buffer_bytes * p // n_partitions
        m = bisect_right(bounds, offset) - 1
        result.append(min(m, len(bounds) - 2))
    return result


def assign_channels(n_messages: int, num_channels: int) -> list[int]:
    """Round-robin channel of each wire message."""
    if n_messages < 0:
        raise ValueError("n_messages must be non-negative")
    if num_channels < 1:
        raise ValueError("num_channels must be at least 1")
    return [m % num_channels for m in range(n_messages)]


class TagPlan:
    """First-fit allocator of contiguous tag blocks, one space per peer."""

    def __init__(self, reserved_tag_space: int = 256) -> None:
        if reserved_tag_space < 1:
            raise ValueError("reserved_tag_space must be at least 1")
        self.reserved_tag_space = reserved_tag_space
        self._blocks: dict[int, list[tuple[int, int]]] = {}

    def allocate(self, peer: int, n_tags: int) -> int | None:
        """Base of a free block of ``n_tags`` tags, or None if exhausted."""
        if n_tags < 1:
            raise ValueError("n_tags must be at least 1")
        blocks = self._blocks.setdefault(peer, [])
        prev_end = 0
        for i, (base, length) in enumerate(blocks):
            if base - prev_end >= n_tags:
                blocks.insert(i, (prev_end, n_tags))
                return prev_end
            prev_end = base + length
        if self.reserved_tag_space - prev_end >= n_tags:
            blocks.append((prev_end, n_tags))
            return prev_end
        return None

    def free(self, peer: int, base: int) -> None:
        blocks = self._blocks.get(peer, [])
        for i, (block_base, _) in enumerate(blocks):
            if block_base == base:
                del blocks[i]
                return
        raise ValueError(f"no tag block allocated at base {base} for peer {peer}")

    def tags_in_use(self, peer: int) -> int:
        return sum(length for _, length in self._blocks.get(peer, []))


def _rts_tag(request_id: int) -> int:
    return -(3 * request_id + 1)


def _cts_tag(request_id: int) -> int:
    return -(3 * request_id + 2)


def _legacy_data_tag(request_id: int) -> int:
    return -(3 * request_id + 3)


class PartSendState:
    """Sender side of one persistent partitioned request."""

    def __init__(
        self,
        net: Network,
        n_partitions: int,
        buffer_bytes: int,
        config: PartConfig,
        src: int,
        dst: int,
        tag_plan: TagPlan,
        request_id: int,
    ) -> None:
        self.net = net
        self.n_partitions = n_partitions
        self.buffer_bytes = buffer_bytes
        self.config = config
        self.rank = src
        self.peer = dst
        self.tag_plan = tag_plan
        self.request_id = request_id

        self.base_tag: int | None = None
        if config.legacy_am:
            self.mode = LEGACY_AM
        else:
            self.base_tag = tag_plan.allocate(dst, n_partitions)
            self.mode = TAG_MATCHED if self.base_tag is not None else LEGACY_AM

        self.iteration = 0
        self.started = False
        self.wait_done = True
        self.cts_received = False
        self.cts_time: float | None = None
        self._legacy_cts_pending = False

        self.n_messages: int | None = None
        self.send_map: list[int] | None = None
        self.message_bounds: list[int] | None = None
        self.channel_of_message: list[int] | None = None
        if self.mode == LEGACY_AM:
            self.n_messages = 1
            self.send_map = [0] * n_partitions
            self.message_bounds = [0, buffer_bytes]
            self.channel_of_message = [CONTROL_CHANNEL]

        self.counters: list[int] | None = None
        self.ready_flags = [False] * n_partitions
        self.latest_ready: list[float] = []
        self.injected: list[bool] = []
        self.send_handles: list[SendHandle | None] = []
        self._pending_readies: list[tuple[int, float]] = []

        payload = {
            "n_send": n_partitions,
            "buffer_bytes": buffer_bytes,
            "mode": self.mode,
            "base_tag": self.base_tag,
        }
        net.post_message(
            SimMessage(
                src_rank=src,
                dst_rank=dst,
                channel=CONTROL_CHANNEL,
                tag=_rts_tag(request_id),
                size=0,
                inject_time=net.clock,
                kind="control",
                payload=payload,
            )
        )
        # The CTS receive for the first iteration; the legacy path posts a
        # fresh one per iteration from start().
        net.post_recv(
            src, _cts_tag(request_id), CONTROL_CHANNEL, on_complete=self._on_cts
        )

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        if not self.wait_done:
            raise LifecycleError("start called before the previous wait finished")
        self.iteration += 1
        self.started = True
        self.wait_done = False
        self.ready_flags = [False] * self.n_partitions
        self._pending_readies = []
        self.counters = None
        if self.mode == LEGACY_AM:
            self._arm_counters()
            if self.iteration == 1:
                if self._legacy_cts_pending:
                    self._legacy_cts_pending = False
                    self._decrement_legacy_counter()
            else:
                self.cts_received = False
                self.cts_time = None
                self.net.post_recv(
                    self.rank,
                    _cts_tag(self.request_id),
                    CONTROL_CHANNEL,
                    on_complete=self._on_cts,
                )
        elif self.cts_received:
            self._arm_counters()

    def pready(self, partition: int, ready_time: float) -> None:
        if not self.started:
            raise LifecycleError("pready called before start")
        if not 0 <= partition < self.n_partitions:
            raise ValueError(
                f"partition {partition} out of range [0, {self.n_partitions})"
            )
        if self.ready_flags[partition]:
            raise LifecycleError(
                f"partition {partition} already marked ready this iteration"
            )
        self.ready_flags[partition] = True
        if self.counters is None:
            self._pending_readies.append((partition, ready_time))
            return
        self._apply_ready(partition, ready_time)

    def wait(self) -> float:
        if not self.started:
            raise LifecycleError("wait called before start")
        self.net.advance_until_idle()
        if self.counters is None:
            raise DeadlockError([], "no clear-to-send ever arrived")
        if any(c > 0 for c in self.counters):
            not_ready = [p for p, f in enumerate(self.ready_flags) if not f]
            if not_ready:
                detail = f"partitions never marked ready: {not_ready}"
            else:
                detail = "clear-to-send for this iteration never arrived"
            raise DeadlockError([], detail)
        completion = max(h.delivery_time for h in self.send_handles)
        self.started = False
        self.wait_done = True
        if self.mode == LEGACY_AM:
            self.cts_received = False
        return completion

    def finalize(self) -> None:
        """Release the request's tag block."""
        if self.mode == TAG_MATCHED and self.base_tag is not None:
            self.tag_plan.free(self.peer, self.base_tag)
            self.base_tag = None

    # -- internals -----------------------------------------------------------

    def _arm_counters(self) -> None:
        assert self.n_messages is not None and self.send_map is not None
        if self.mode == LEGACY_AM:
            self.counters = [self.n_partitions + 1]
        else:
            counts = [0] * self.n_messages
            for m in self.send_map:
                counts[m] += 1
            self.counters = counts
        self.latest_ready = [0.0] * self.n_messages
        self.injected = [False] * self.n_messages
        self.send_handles = [None] * self.n_messages

    def _on_cts(self, recv: RecvHandle) -> None:
        payload = recv.matched.msg.payload
        now = recv.completion_time
        self.cts_received = True
        self.cts_time = now
        if self.mode == LEGACY_AM:
            if self.counters is None:
                self._legacy_cts_pending = True
            else:
                self._decrement_legacy_counter()
            return
        if self.n_messages is None:
            self.n_messages = payload["n_messages"]
            self.message_bounds = payload["message_bounds"]
            self.send_map = _offsets_to_messages(
                self.n_partitions, self.buffer_bytes, self.message_bounds
            )
            self.channel_of_message = assign_channels(
                self.n_messages, self.config.num_channels
            )
        if self.started and self.counters is None:
            self._arm_counters()
            pending, self._pending_readies = self._pending_readies, []
            for partition, ready_time in pending:
                self._apply_ready(partition, ready_time)

    def _decrement_legacy_counter(self) -> None:
        assert self.counters is not None
        self.counters[0] -= 1
        if self.counters[0] == 0:
            self._inject(0)

    def _apply_ready(self, partition: int, ready_time: float) -> None:
        assert self.counters is not None and self.send_map is not None
        m = self.send_map[partition]
        self.latest_ready[m] = max(self.latest_ready[m], ready_time)
        self.counters[m] -= 1
        if self.counters[m] == 0:
            self._inject(m)

    def _inject(self, m: int) -> None:
        assert self.message_bounds is not None and self.channel_of_message is not None
        gate = 0.0
        if self.cts_time is not None and (
            self.mode == LEGACY_AM or self.iteration == 1
        ):
            gate = self.cts_time
        inject_at = max(self.latest_ready[m], gate, self.net.clock)
        if self.mode == LEGACY_AM:
            tag = _legacy_data_tag(self.request_id)
        else:
            tag = self.base_tag + m
        size = self.message_bounds[m + 1] - self.message_bounds[m]
        handle = self.net.post_message(
            SimMessage(
                src_rank=self.rank,
                dst_rank=self.peer,
                channel=self.channel_of_message[m],
                tag=tag,
                size=size,
                inject_time=inject_at,
                kind="tagged-send",
            )
        )
        self.injected[m] = True
        self.send_handles[m] = handle


class PartRecvState:
    """Receiver side of one persistent partitioned request."""

    def __init__(
        self,
        net: Network,
        n_partitions: int,
        buffer_bytes: int,
        config: PartConfig,
        dst: int,
        src: int,
        request_id: int,
    ) -> None:
        self.net = net
        self.n_partitions = n_partitions
        self.buffer_bytes = buffer_bytes
        self.config = config
        self.rank = dst
        self.peer = src
        self.request_id = request_id

        self.iteration = 0
        self.started = False
        self.wait_done = True
        self.handshake_done = False
        self.mode: str | None = None
        self.sender_base_tag: int | None = None

        self.n_messages: int | None = None
        self.recv_map: list[int] | None = None
        self.message_bounds: list[int] | None = None
        self.channel_of_message: list[int] | None = None

        self.message_arrived: list[bool] = []
        self.arrival_times: list[float | None] = []
        self.recv_handles: list[RecvHandle] = []
        self._recvs_posted_iter = 0

        net.post_recv(
            dst, _rts_tag(request_id), CONTROL_CHANNEL, on_complete=self._on_rts
        )

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        if not self.wait_done:
            raise LifecycleError("start called before the previous wait finished")
        self.iteration += 1
        self.started = True
        self.wait_done = False
        if self.handshake_done:
            if self._recvs_posted_iter < self.iteration:
                self._post_data_recvs(self.iteration)
            if self.mode == LEGACY_AM and self.iteration > 1:
                self._send_cts()

    def parrived(self, partition: int) -> bool:
        if not self.started:
            raise LifecycleError("parrived called before start")
        if not 0 <= partition < self.n_partitions:
            raise ValueError(
                f"partition {partition} out of range [0, {self.n_partitions})"
            )
        if not self.handshake_done:
            return False
        return self.message_arrived[self.recv_map[partition]]

    def wait(self) -> float:
        if not self.started:
            raise LifecycleError("wait called before start")
        self.net.advance_until_idle()
        if not self.handshake_done:
            raise DeadlockError([], "no ready-to-send ever arrived")
        missing = [i for i, r in enumerate(self.recv_handles) if not r.completed]
        if missing:
            raise DeadlockError([], f"wire messages never arrived: {missing}")
        completion = max(r.completion_time for r in self.recv_handles)
        self.started = False
        self.wait_done = True
        return completion

    # -- internals -----------------------------------------------------------

    def _on_rts(self, recv: RecvHandle) -> None:
        payload = recv.matched.msg.payload
        if payload["buffer_bytes"] != self.buffer_bytes:
            raise ProtocolError(
                f"buffer size mismatch: sender announces {payload['buffer_bytes']} "
                f"bytes, receiver expects {self.buffer_bytes}"
            )
        self.mode = payload["mode"]
        self.sender_base_tag = payload["base_tag"]
        if self.mode == LEGACY_AM:
            self.n_messages = 1
            self.message_bounds = [0, self.buffer_bytes]
            self.recv_map = [0] * self.n_partitions
            self.channel_of_message = [CONTROL_CHANNEL]
        else:
            pm = map_partitions_to_messages(
                payload["n_send"],
                self.n_partitions,
                self.buffer_bytes,
                self.config.part_aggr_size,
            )
            self.n_messages = pm.n_messages
            self.message_bounds = pm.message_bounds
            self.recv_map = pm.recv_map
            self.channel_of_message = assign_channels(
                pm.n_messages, self.config.num_channels
            )
        self.handshake_done = True
        self._post_data_recvs(1)
        self._send_cts()

    def _post_data_recvs(self, iteration: int) -> None:
        assert self.n_messages is not None
        self.message_arrived = [False] * self.n_messages
        self.arrival_times = [None] * self.n_messages
        self.recv_handles = []
        for m in range(self.n_messages):
            if self.mode == LEGACY_AM:
                tag = _legacy_data_tag(self.request_id)
            else:
                tag = self.sender_base_tag + m
            handle = self.net.post_recv(
                self.rank,
                tag,
                self.channel_of_message[m],
                on_complete=self._data_callback(m),
            )
            self.recv_handles.append(handle)
        self._recvs_posted_iter = iteration

    def _data_callback(self, m: int):
        def _on_data(recv: RecvHandle) -> None:
            self.message_arrived[m] = True
            self.arrival_times[m] = recv.completion_time

        return _on_data

    def _send_cts(self) -> None:
        payload = {
            "n_messages": self.n_messages,
            "message_bounds": self.message_bounds,
        }
        self.net.post_message(
            SimMessage(
                src_rank=self.rank,
                dst_rank=self.peer,
                channel=CONTROL_CHANNEL,
                tag=_cts_tag(self.request_id),
                size=0,
                inject_time=self.net.clock,
                kind="control",
                payload=payload,
            )
        )


def psend_init(
    net: Network,
    n_partitions: int,
    buffer_bytes: int,
    config: PartConfig | None = None,
    *,
    src: int = 0,
    dst: int = 1,
    tag_plan: TagPlan | None = None,
    request_id: int = 0,
) -> PartSendState:
    """Create the sender side of a persistent partitioned request."""
    config = config if config is not None else PartConfig()
    _check_request_args(n_partitions, buffer_bytes, request_id)
    if tag_plan is None:
        tag_plan = TagPlan(config.reserved_tag_space)
    return PartSendState(
        net, n_partitions, buffer_bytes, config, src, dst, tag_plan, request_id
    )


def precv_init(
    net: Network,
    n_partitions: int,
    buffer_bytes: int,
    config: PartConfig | None = None,
    *,
    dst: int = 1,
    src: int = 0,
    request_id: int = 0,
) -> PartRecvState:
    """Create the receiver side of a persistent partitioned request."""
    config = config if config is not None else PartConfig()
    _check_request_args(n_partitions, buffer_bytes, request_id)
    return PartRecvState(net, n_partitions, buffer_bytes, config, dst, src, request_id)


def _check_request_args(n_partitions: int, buffer_bytes: int, request_id: int) -> None:
    if n_partitions < 1:
        raise ValueError("n_partitions must be at least 1")
    if buffer_bytes < 1:
        raise ValueError("buffer_bytes must be positive")
    if request_id < 0:
        raise ValueError("request_id must be non-negative")


def start(state: PartSendState | PartRecvState) -> None:
    state.start()


def pready(state: PartSendState, partition: int, ready_time: float) -> None:
    state.pready(partition, ready_time)


def parrived(state: PartRecvState, partition: int) -> bool:
    return state.parrived(partition)


def wait(state: PartSendState | PartRecvState) -> float:
    return state.wait()


class PartEngine:
    """Both sides of one partitioned request on a shared network."""

    def __init__(
        self,
        net: Network,
        n_send: int,
        n_recv: int,
        buffer_bytes: int,
        config: PartConfig | None = None,
        *,
        src: int = 0,
        dst: int = 1,
        tag_plan: TagPlan | None = None,
        request_id: int = 0,
    ) -> None:
        config = config if config is not None else PartConfig()
        if config.num_channels > net.num_channels:
            raise ValueError(
                "request wants more channels than the network provides"
            )
        self.config = config
        self.send_state = psend_init(
            net,
            n_send,
            buffer_bytes,
            config,
            src=src,
            dst=dst,
            tag_plan=tag_plan,
            request_id=request_id,
        )
        self.recv_state = precv_init(
            net, n_recv, buffer_bytes, config, dst=dst, src=src, request_id=request_id
        )
