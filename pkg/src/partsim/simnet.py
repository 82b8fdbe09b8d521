"""Deterministic discrete-event transport between two simulated ranks.

The transport prices each message with a three-regime latency (short
messages, buffered copies, and rendezvous zero-copy above a threshold) on
top of a shared bandwidth term.  Contention is modeled per (source rank,
channel) as a two-stage pipeline:

- an injection stage each message occupies for ``injection_overhead``
  seconds, in FIFO order of injection time.  This is the per-message
  software cost and the mechanism by which many small messages on one
  channel queue behind each other;
- a wire stage each message occupies for ``size / bandwidth`` seconds, so
  back-to-back messages on one channel serialize at the line rate.

The regime latency is pure flight time added after the wire stage:
consecutive messages overlap it.  Zero-copy tagged sends additionally park
at the wire entrance until the matching receive has been posted, which is
what makes an unmatched rendezvous send a detectable deadlock instead of a
silently wrong timing.

Everything is driven by a single event queue ordered by (time, insertion
sequence), so a given call sequence always replays to the identical
timeline.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

__all__ = [
    "DeadlockError",
    "TimingModel",
    "SimMessage",
    "EventQueue",
    "SendHandle",
    "RecvHandle",
    "Network",
    "transfer_time",
    "MESSAGE_KINDS",
]

MESSAGE_KINDS = ("tagged-send", "put", "control")


class DeadlockError(RuntimeError):
    """The simulation went idle with transfers that can never finish."""

    def __init__(self, stuck: list["SendHandle"], detail: str = "") -> None:
        self.stuck = list(stuck)
        msg = f"simulation idle with {len(self.stuck)} unfinishable transfer(s)"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)


@dataclass(frozen=True)
class TimingModel:
    """Link timing parameters, all in bytes and seconds.

    The latency regime is picked by size: below ``short_threshold`` a send
    costs ``latency_short``, from there to ``rendezvous_threshold`` it
    costs ``latency_bcopy`` (the buffered-copy path), and at or above the
    rendezvous threshold it costs ``latency_zcopy`` plus one
    ``rendezvous_rtt`` handshake.  One-sided puts skip part of the
    software stack and get ``put_discount`` subtracted from the latency
    term, floored at zero.  Control messages always price as a zero-byte
    short send.
    """

    bandwidth: float = 25e9  # B/s
    latency_short: float = 1.22e-6
    latency_bcopy: float = 1.8e-6
    latency_zcopy: float = 1.22e-6
    rendezvous_rtt: float = 2.44e-6
    short_threshold: int = 2048
    rendezvous_threshold: int = 16384
    injection_overhead: float = 1.0e-6
    put_discount: float = 0.3e-6

    def __post_init__(self) -> None:
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if not 0 < self.short_threshold < self.rendezvous_threshold:
            raise ValueError(
                "thresholds must satisfy 0 < short_threshold < rendezvous_threshold"
            )
        for name in (
            "latency_short",
            "latency_bcopy",
            "latency_zcopy",
            "rendezvous_rtt",
            "injection_overhead",
            "put_discount",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.latency_short > self.latency_bcopy:
            raise ValueError("latency_short must not exceed latency_bcopy")

    @classmethod
    def from_file(cls, path: str | Path) -> "TimingModel":
        """Load a timing model from a flat ``key = value`` config file.

        Keys are exactly the field names; missing keys keep their
        defaults, unknown keys are an error.  Lines starting with ``#``
        and blank lines are ignored.
        """
        int_fields = {"short_threshold", "rendezvous_threshold"}
        valid = {f for f in cls.__dataclass_fields__}
        values: dict[str, Any] = {}
        text = Path(path).read_text()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in valid:
                raise ValueError(f"{path}:{lineno}: unknown timing key {key!r}")
            if key in values:
                raise ValueError(f"{path}:{lineno}: duplicate timing key {key!r}")
            try:
                values[key] = int(value) if key in int_fields else float(value)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad value for {key!r}") from exc
        return cls(**values)


def _flight_latency(timing: TimingModel, size: int, kind: str) -> float:
    """Latency term added after the wire stage, by size regime and kind."""
    if kind == "control":
        return timing.latency_short
    if size < timing.short_threshold:
        latency = timing.latency_short
    elif size < timing.rendezvous_threshold:
        latency = timing.latency_bcopy
    else:
        latency = timing.latency_zcopy + timing.rendezvous_rtt
    if kind == "put":
        latency = max(latency - timing.put_discount, 0.0)
    return latency


def transfer_time(timing: TimingModel, size: int, kind: str = "tagged-send") -> float:
    """Uncontended end-to-end time of one message, excluding injection."""
    if kind not in MESSAGE_KINDS:
        raise ValueError(f"unknown message kind {kind!r}")
    if size < 0:
        raise ValueError("size must be non-negative")
    if kind == "control" and size != 0:
        raise ValueError("control messages carry no bytes")
    return _flight_latency(timing, size, kind) + size / timing.bandwidth


@dataclass
class SimMessage:
    """One message as handed to the network.

    ``tag`` is an integer for two-sided traffic and None for one-sided
    puts, which complete without a matching receive.  ``payload`` is
    opaque plumbing for protocol metadata riding on control messages; it
    never affects timing.
    """

    src_rank: int
    dst_rank: int
    channel: int
    tag: int | None
    size: int
    inject_time: float
    kind: str = "tagged-send"
    payload: Any = None


class EventQueue:
    """Time-ordered action queue; ties resolve by insertion order."""

    def __init__(self) -> None:
        self.clock = 0.0
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, time: float, action: Callable[[], None]) -> None:
        if time < self.clock:
            raise ValueError(
                f"cannot schedule at {time} before current clock {self.clock}"
            )
        heapq.heappush(self._heap, (time, self._seq, action))
        self._seq += 1

    def step(self) -> bool:
        """Run the next action, advancing the clock.  False when empty."""
        if not self._heap:
            return False
        time, _, action = heapq.heappop(self._heap)
        self.clock = time
        action()
        return True

    def run(self) -> None:
        while self.step():
            pass


class SendHandle:
    """Observable timeline of one posted message."""

    def __init__(self, msg: SimMessage) -> None:
        self.msg = msg
        self.injection_start: float | None = None
        self.injection_end: float | None = None
        self.wire_start: float | None = None
        self.wire_end: float | None = None
        self.delivery_time: float | None = None
        self._on_delivery: list[Callable[["SendHandle"], None]] = []

    @property
    def delivered(self) -> bool:
        return self.delivery_time is not None

    @property
    def send_complete_time(self) -> float | None:
        """When the sender may consider the message done (its delivery)."""
        return self.delivery_time

    def on_delivery(self, callback: Callable[["SendHandle"], None]) -> None:
        if self.delivered:
            callback(self)
        else:
            self._on_delivery.append(callback)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        m = self.msg
        state = "delivered" if self.delivered else "in flight"
        return (
            f"<SendHandle {m.kind} {m.src_rank}->{m.dst_rank} tag={m.tag} "
            f"size={m.size} ch={m.channel} {state}>"
        )


class RecvHandle:
    """Observable state of one posted tagged receive."""

    def __init__(self, rank: int, tag: int, channel: int, post_time: float) -> None:
        self.rank = rank
        self.tag = tag
        self.channel = channel
        self.post_time = post_time
        self.completion_time: float | None = None
        self.matched: SendHandle | None = None
        self._on_complete: list[Callable[["RecvHandle"], None]] = []

    @property
    def completed(self) -> bool:
        return self.completion_time is not None

    def on_complete(self, callback: Callable[["RecvHandle"], None]) -> None:
        if self.completed:
            callback(self)
        else:
            self._on_complete.append(callback)


@dataclass
class _ChannelState:
    """Stage watermarks for one (source rank, channel) pipeline."""

    injection_free: float = 0.0
    wire_free: float = 0.0


class Network:
    """Two-rank network with per-channel injection and wire pipelines."""

    def __init__(
        self,
        timing: TimingModel | None = None,
        num_channels: int = 1,
        n_ranks: int = 2,
    ) -> None:
        if num_channels < 1:
            raise ValueError("num_channels must be at least 1")
        if n_ranks < 2:
            raise ValueError("n_ranks must be at least 2")
        self.timing = timing if timing is not None else TimingModel()
        self.num_channels = num_channels
        self.n_ranks = n_ranks
        self.queue = EventQueue()
        self._channels: dict[tuple[int, int], _ChannelState] = {}
        # (dst_rank, tag, channel) -> FIFO of pending receives / arrivals.
        self._pending_recvs: dict[tuple[int, int, int], deque[RecvHandle]] = {}
        self._unexpected: dict[tuple[int, int, int], deque[SendHandle]] = {}
        self._parked: dict[tuple[int, int, int], deque[SendHandle]] = {}
        self._rendezvous_claims: dict[tuple[int, int, int], int] = {}
        self.send_handles: list[SendHandle] = []
        self.recv_handles: list[RecvHandle] = []

    @property
    def clock(self) -> float:
        return self.queue.clock

    # -- posting ---------------------------------------------------------

    def post_message(
        self,
        msg: SimMessage,
        on_delivery: Callable[[SendHandle], None] | None = None,
    ) -> SendHandle:
        """Hand a message to the network at ``msg.inject_time``."""
        self._validate_message(msg)
        handle = SendHandle(msg)
        if on_delivery is not None:
            handle.on_delivery(on_delivery)
        self.send_handles.append(handle)
        self.queue.schedule(msg.inject_time, lambda: self._begin_injection(handle))
        return handle

    def post_recv(
        self,
        rank: int,
        tag: int,
        channel: int,
        on_complete: Callable[[RecvHandle], None] | None = None,
    ) -> RecvHandle:
        """Post a tagged receive on ``rank`` at the current clock."""
        self._check_rank(rank)
        self._check_channel(channel)
        if tag is None:
            raise ValueError("receives require an integer tag")
        handle = RecvHandle(rank, tag, channel, self.queue.clock)
        if on_complete is not None:
            handle.on_complete(on_complete)
        self.recv_handles.append(handle)
        key = (rank, tag, channel)
        arrived = self._unexpected.get(key)
        if arrived:
            self._complete_recv(handle, arrived.popleft())
            return handle
        self._pending_recvs.setdefault(key, deque()).append(handle)
        self._release_parked(key)
        return handle

    # -- advancing -------------------------------------------------------

    def step(self) -> bool:
        """Process the single next event; False when nothing is queued."""
        return self.queue.step()

    def advance_until_idle(self) -> float:
        """Drain the event queue; raise if rendezvous sends are stuck.

        A zero-copy send whose receive never appears sits parked forever;
        once the queue is empty that is a deadlock, not progress.
        """
        self.queue.run()
        stuck = [h for q in self._parked.values() for h in q]
        if stuck:
            raise DeadlockError(
                stuck, "rendezvous send(s) still waiting for a matching receive"
            )
        return self.queue.clock

    def reset_time(self) -> None:
        """Restart the clock at zero between independent replays.

        Repeated replays on one network would otherwise accumulate clock
        time, and identical relative timelines stop being bit-identical
        once they sit at different absolute offsets.  Only a fully
        drained network can rebase: nothing queued, parked, unexpected,
        or still waiting to match.
        """
        busy = (
            len(self.queue)
            or any(self._parked.values())
            or any(self._unexpected.values())
            or any(self._pending_recvs.values())
        )
        if busy:
            raise RuntimeError("cannot reset time while traffic is in flight")
        self.queue.clock = 0.0
        self._channels.clear()
        self._pending_recvs.clear()
        self._unexpected.clear()
        self._parked.clear()
        self._rendezvous_claims.clear()

    # -- internals -------------------------------------------------------

    def _validate_message(self, msg: SimMessage) -> None:
        self._check_rank(msg.src_rank)
        self._check_rank(msg.dst_rank)
        if msg.src_rank == msg.dst_rank:
            raise ValueError("src_rank and dst_rank must differ")
        self._check_channel(msg.channel)
        if msg.kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind {msg.kind!r}")
        if msg.size < 0:
            raise ValueError("size must be non-negative")
        if msg.kind == "control" and msg.size != 0:
            raise ValueError("control messages carry no bytes")
        if (msg.tag is None) != (msg.kind == "put"):
            raise ValueError("puts are untagged; sends and controls need a tag")
        if msg.inject_time < self.queue.clock:
            raise ValueError(
                f"inject_time {msg.inject_time} is before clock {self.queue.clock}"
            )

    def _check_rank(self, rank: int) -> None:
        if not 0 <= rank < self.n_ranks:
            raise ValueError(f"rank {rank} out of range [0, {self.n_ranks})")

    def _check_channel(self, channel: int) -> None:
        if not 0 <= channel < self.num_channels:
            raise ValueError(
                f"channel {channel} out of range [0, {self.num_channels})"
            )

    def _channel_state(self, rank: int, channel: int) -> _ChannelState:
        return self._channels.setdefault((rank, channel), _ChannelState())

    def _begin_injection(self, handle: SendHandle) -> None:
        msg = handle.msg
        state = self._channel_state(msg.src_rank, msg.channel)
        start = max(self.queue.clock, state.injection_free)
        handle.injection_start = start
        handle.injection_end = start + self.timing.injection_overhead
        state.injection_free = handle.injection_end
        self.queue.schedule(handle.injection_end, lambda: self._reach_wire(handle))

    def _needs_rendezvous(self, msg: SimMessage) -> bool:
        return (
            msg.kind == "tagged-send"
            and msg.size >= self.timing.rendezvous_threshold
        )

    def _reach_wire(self, handle: SendHandle) -> None:
        msg = handle.msg
        if self._needs_rendezvous(msg):
            key = (msg.dst_rank, msg.tag, msg.channel)
            available = len(self._pending_recvs.get(key, ()))
            if available <= self._rendezvous_claims.get(key, 0):
                self._parked.setdefault(key, deque()).append(handle)
                return
            self._rendezvous_claims[key] = self._rendezvous_claims.get(key, 0) + 1
        self._start_wire(handle)

    def _release_parked(self, key: tuple[int, int, int]) -> None:
        parked = self._parked.get(key)
        if not parked:
            return
        available = len(self._pending_recvs.get(key, ()))
        if available <= self._rendezvous_claims.get(key, 0):
            return
        handle = parked.popleft()
        if not parked:
            del self._parked[key]
        self._rendezvous_claims[key] = self._rendezvous_claims.get(key, 0) + 1
        self._start_wire(handle)

    def _start_wire(self, handle: SendHandle) -> None:
        msg = handle.msg
        state = self._channel_state(msg.src_rank, msg.channel)
        start = max(self.queue.clock, state.wire_free)
        handle.wire_start = start
        handle.wire_end = start + msg.size / self.timing.bandwidth
        state.wire_free = handle.wire_end
        delivery = handle.wire_end + _flight_latency(self.timing, msg.size, msg.kind)
        self.queue.schedule(delivery, lambda: self._deliver(handle))

    def _deliver(self, handle: SendHandle) -> None:
        handle.delivery_time = self.queue.clock
        msg = handle.msg
        if msg.tag is not None:
            key = (msg.dst_rank, msg.tag, msg.channel)
            if self._needs_rendezvous(msg):
                self._rendezvous_claims[key] -= 1
            pending = self._pending_recvs.get(key)
            if pending:
                recv = pending.popleft()
                if not pending:
                    del self._pending_recvs[key]
                self._complete_recv(recv, handle)
            else:
                self._unexpected.setdefault(key, deque()).append(handle)
        callbacks, handle._on_delivery = handle._on_delivery, []
        for callback in callbacks:
            callback(handle)

    def _complete_recv(self, recv: RecvHandle, send: SendHandle) -> None:
        recv.completion_time = self.queue.clock
        recv.matched = send
        callbacks, recv._on_complete = recv._on_complete, []
        for callback in callbacks:
            callback(recv)
