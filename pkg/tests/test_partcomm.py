"""Tests for the partitioned-send protocol engine."""

from __future__ import annotations

import math
import random

import pytest

from partsim.partcomm import (
    LifecycleError,
    PartConfig,
    PartEngine,
    ProtocolError,
    TagPlan,
    assign_channels,
    map_partitions_to_messages,
    precv_init,
    psend_init,
)
from partsim.simnet import DeadlockError, Network, TimingModel

T = TimingModel()


def _engine(
    *,
    n_send: int = 4,
    n_recv: int = 4,
    buffer_bytes: int = 4096,
    aggr: int = 0,
    channels: int = 1,
    legacy: bool = False,
    tag_space: int = 256,
) -> tuple[Network, PartEngine]:
    net = Network(T, num_channels=channels)
    config = PartConfig(
        part_aggr_size=aggr,
        num_channels=channels,
        reserved_tag_space=tag_space,
        legacy_am=legacy,
    )
    engine = PartEngine(net, n_send, n_recv, buffer_bytes, config)
    return net, engine


def _run_iteration(
    net: Network, engine: PartEngine, ready_times: list[float]
) -> tuple[float, float]:
    engine.recv_state.start()
    engine.send_state.start()
    for p, when in enumerate(ready_times):
        engine.send_state.pready(p, when)
    recv_done = engine.recv_state.wait()
    send_done = engine.send_state.wait()
    return send_done, recv_done


# -- partition-to-message mapping ---------------------------------------------


def test_mapping_equal_counts_no_aggregation() -> None:
    pm = map_partitions_to_messages(4, 4, 4096, 0)
    assert pm.n_messages == 4
    assert pm.message_bounds == [0, 1024, 2048, 3072, 4096]
    assert pm.send_map == [0, 1, 2, 3]
    assert pm.recv_map == [0, 1, 2, 3]


def test_mapping_uses_gcd_of_counts() -> None:
    pm = map_partitions_to_messages(6, 4, 12000, 0)
    assert pm.n_messages == 2  # gcd(6, 4)
    assert pm.send_map == [0, 0, 0, 1, 1, 1]
    assert pm.recv_map == [0, 0, 1, 1]
    assert pm.message_bounds == [0, 6000, 12000]


def test_mapping_aggregates_up_to_threshold() -> None:
    # four 512 B pieces, threshold 1024: pairs merge
    pm = map_partitions_to_messages(4, 4, 2048, 1024)
    assert pm.n_messages == 2
    assert pm.message_bounds == [0, 1024, 2048]
    assert pm.send_map == [0, 0, 1, 1]


def test_mapping_aggregates_everything_under_large_threshold() -> None:
    pm = map_partitions_to_messages(32, 32, 32 * 512, 16384)
    assert pm.n_messages == 1
    assert pm.message_bounds == [0, 16384]


def test_mapping_oversized_piece_travels_alone() -> None:
    # single pieces above the threshold are not split, only not merged
    pm = map_partitions_to_messages(3, 3, 3 * 4096, 4096)
    assert pm.n_messages == 3


def test_mapping_zero_threshold_disables_aggregation() -> None:
    pm = map_partitions_to_messages(8, 8, 64, 0)
    assert pm.n_messages == 8


def test_mapping_uneven_buffer_uses_floor_bounds() -> None:
    pm = map_partitions_to_messages(3, 3, 10, 0)
    assert pm.message_bounds == [0, 3, 6, 10]


def test_mapping_exhaustive_small_counts() -> None:
    """Reconstruction invariants for every pair of counts up to 12."""
    for n_send in range(1, 13):
        for n_recv in range(1, 13):
            for buffer_bytes in (n_send * n_recv, 4096, 40001):
                for aggr in (0, 1024):
                    pm = map_partitions_to_messages(
                        n_send, n_recv, buffer_bytes, aggr
                    )
                    bounds = pm.message_bounds
                    assert bounds[0] == 0
                    assert bounds[-1] == buffer_bytes
                    assert all(a < b for a, b in zip(bounds, bounds[1:]))
                    assert pm.n_messages == len(bounds) - 1
                    g = math.gcd(n_send, n_recv)
                    assert pm.n_messages <= g
                    # every message fed and drained by at least one partition
                    assert set(pm.send_map) == set(range(pm.n_messages))
                    assert set(pm.recv_map) == set(range(pm.n_messages))
                    # each partition's byte range nests inside its message
                    for n_parts, part_map in (
                        (n_send, pm.send_map),
                        (n_recv, pm.recv_map),
                    ):
                        assert len(part_map) == n_parts
                        for p, m in enumerate(part_map):
                            lo = buffer_bytes * p // n_parts
                            hi = buffer_bytes * (p + 1) // n_parts
                            assert bounds[m] <= lo
                            assert hi <= bounds[m + 1]
                    # maps are monotone: later partitions never map earlier
                    assert pm.send_map == sorted(pm.send_map)
                    assert pm.recv_map == sorted(pm.recv_map)


def test_mapping_validation() -> None:
    with pytest.raises(ValueError):
        map_partitions_to_messages(0, 4, 1024, 0)
    with pytest.raises(ValueError):
        map_partitions_to_messages(4, 4, 0, 0)
    with pytest.raises(ValueError):
        map_partitions_to_messages(4, 4, 1024, -1)


def test_assign_channels_round_robin() -> None:
    assert assign_channels(5, 2) == [0, 1, 0, 1, 0]
    assert assign_channels(3, 8) == [0, 1, 2]
    with pytest.raises(ValueError):
        assign_channels(4, 0)


# -- tag planning -------------------------------------------------------------


def test_tag_plan_allocates_contiguously_and_reuses_freed_blocks() -> None:
    plan = TagPlan(reserved_tag_space=16)
    a = plan.allocate(1, 8)
    b = plan.allocate(1, 8)
    assert a == 0 and b == 8
    assert plan.allocate(1, 1) is None  # exhausted
    plan.free(1, a)
    assert plan.tags_in_use(1) == 8
    c = plan.allocate(1, 4)  # first fit lands in the freed hole
    assert c == 0
    d = plan.allocate(1, 4)
    assert d == 4
    assert plan.allocate(1, 1) is None


def test_tag_plan_is_per_peer() -> None:
    plan = TagPlan(reserved_tag_space=8)
    assert plan.allocate(1, 8) == 0
    assert plan.allocate(2, 8) == 0
    assert plan.allocate(1, 1) is None


def test_tag_plan_errors() -> None:
    plan = TagPlan(reserved_tag_space=8)
    with pytest.raises(ValueError):
        plan.allocate(1, 0)
    with pytest.raises(ValueError):
        plan.free(1, 3)
    with pytest.raises(ValueError):
        TagPlan(reserved_tag_space=0)


def test_tag_exhaustion_falls_back_to_legacy() -> None:
    net = Network(T)
    config = PartConfig(reserved_tag_space=4)
    plan = TagPlan(config.reserved_tag_space)
    first = psend_init(net, 4, 4096, config, tag_plan=plan, request_id=0)
    assert first.mode == "tag-matched"
    second = psend_init(net, 4, 4096, config, tag_plan=plan, request_id=1)
    assert second.mode == "legacy-am"
    first.finalize()
    third = psend_init(net, 4, 4096, config, tag_plan=plan, request_id=2)
    assert third.mode == "tag-matched"


# -- handshake ----------------------------------------------------------------


def test_handshake_reports_receiver_decided_message_count() -> None:
    net, engine = _engine(n_send=6, n_recv=4, buffer_bytes=12000)
    _run_iteration(net, engine, [net.clock] * 6)
    assert engine.send_state.n_messages == 2
    assert engine.recv_state.n_messages == 2
    assert engine.send_state.message_bounds == [0, 6000, 12000]
    assert engine.send_state.send_map == [0, 0, 0, 1, 1, 1]


def test_handshake_buffer_mismatch_is_protocol_error() -> None:
    net = Network(T)
    config = PartConfig()
    psend_init(net, 4, 4096, config)
    recv = precv_init(net, 4, 8192, config)
    recv.start()
    with pytest.raises(ProtocolError, match="buffer size mismatch"):
        net.advance_until_idle()


def test_first_iteration_waits_for_cts() -> None:
    net, engine = _engine(buffer_bytes=4096)
    send_done, recv_done = _run_iteration(net, engine, [0.0] * 4)
    cts_time = engine.send_state.cts_time
    assert cts_time is not None and cts_time > 0.0
    for handle in engine.send_state.send_handles:
        assert handle.msg.inject_time >= cts_time


def test_later_iterations_inject_at_ready_time() -> None:
    net, engine = _engine(buffer_bytes=4096)
    _run_iteration(net, engine, [0.0] * 4)
    t0 = net.clock
    ready = [t0 + (p + 1) * 1e-6 for p in range(4)]
    _run_iteration(net, engine, ready)
    injects = sorted(h.msg.inject_time for h in engine.send_state.send_handles)
    assert injects == pytest.approx(ready)


def test_counters_match_partition_fan_in() -> None:
    net, engine = _engine(n_send=6, n_recv=4, buffer_bytes=12000)
    _run_iteration(net, engine, [0.0] * 6)
    engine.recv_state.start()
    engine.send_state.start()
    assert engine.send_state.counters == [3, 3]
    engine.send_state.pready(0, net.clock)
    engine.send_state.pready(1, net.clock)
    assert engine.send_state.counters == [1, 3]
    assert not engine.send_state.injected[0]
    engine.send_state.pready(2, net.clock)
    assert engine.send_state.counters == [0, 3]
    assert engine.send_state.injected[0]
    for p in (3, 4, 5):
        engine.send_state.pready(p, net.clock)
    engine.recv_state.wait()
    engine.send_state.wait()


def test_channel_assignment_round_robin_across_messages() -> None:
    net, engine = _engine(n_send=4, n_recv=4, buffer_bytes=4096, channels=2)
    _run_iteration(net, engine, [0.0] * 4)
    channels = [h.msg.channel for h in engine.send_state.send_handles]
    assert channels == [0, 1, 0, 1]


# -- lifecycle errors ----------------------------------------------------------


def test_lifecycle_violations() -> None:
    net, engine = _engine()
    send, recv = engine.send_state, engine.recv_state
    with pytest.raises(LifecycleError):
        send.pready(0, 0.0)
    with pytest.raises(LifecycleError):
        send.wait()
    with pytest.raises(LifecycleError):
        recv.wait()
    with pytest.raises(LifecycleError):
        recv.parrived(0)
    recv.start()
    send.start()
    with pytest.raises(LifecycleError):
        send.start()
    with pytest.raises(LifecycleError):
        recv.start()
    send.pready(1, 0.0)
    with pytest.raises(LifecycleError):
        send.pready(1, 0.0)  # double ready
    with pytest.raises(ValueError):
        send.pready(4, 0.0)
    with pytest.raises(ValueError):
        recv.parrived(-1)
    for p in (0, 2, 3):
        send.pready(p, 0.0)
    recv.wait()
    send.wait()


def test_request_argument_validation() -> None:
    net = Network(T)
    with pytest.raises(ValueError):
        psend_init(net, 0, 1024)
    with pytest.raises(ValueError):
        precv_init(net, 4, 0)
    with pytest.raises(ValueError):
        psend_init(net, 4, 1024, request_id=-1)
    with pytest.raises(ValueError):
        PartConfig(num_channels=0)
    with pytest.raises(ValueError):
        PartConfig(part_aggr_size=-1)


# -- protocol properties --------------------------------------------------------


def test_each_message_injected_exactly_once() -> None:
    rng = random.Random(5)
    net, engine = _engine(n_send=8, n_recv=6, buffer_bytes=9600, aggr=2048)
    for _ in range(5):
        t0 = net.clock
        order = list(range(8))
        rng.shuffle(order)
        engine.recv_state.start()
        engine.send_state.start()
        for p in order:
            engine.send_state.pready(p, t0 + rng.random() * 1e-5)
        engine.recv_state.wait()
        engine.send_state.wait()
        n_messages = engine.send_state.n_messages
        handles = engine.send_state.send_handles
        assert len(handles) == n_messages
        assert len({id(h) for h in handles}) == n_messages
        assert all(h.delivered for h in handles)
    # across the whole run: one data message per (iteration, wire message)
    data = [h for h in net.send_handles if h.msg.kind == "tagged-send"]
    assert len(data) == 5 * engine.send_state.n_messages


def test_counter_conservation() -> None:
    net, engine = _engine(n_send=12, n_recv=8, buffer_bytes=4800, aggr=0)
    _run_iteration(net, engine, [0.0] * 12)
    engine.recv_state.start()
    engine.send_state.start()
    send = engine.send_state
    total = sum(send.counters)
    assert total == 12  # every partition contributes exactly one decrement
    fired = 0
    for p in range(12):
        send.pready(p, net.clock)
        fired += 1
        assert sum(send.counters) == total - fired
        assert all(c >= 0 for c in send.counters)
    engine.recv_state.wait()
    send.wait()


def test_parrived_monotonic_and_complete() -> None:
    net, engine = _engine(n_send=6, n_recv=6, buffer_bytes=6144, aggr=2048)
    _run_iteration(net, engine, [0.0] * 6)
    t0 = net.clock
    engine.recv_state.start()
    engine.send_state.start()
    for p in range(6):
        engine.send_state.pready(p, t0 + p * 2e-6)
    seen = [False] * 6
    while net.step():
        for p in range(6):
            arrived = engine.recv_state.parrived(p)
            assert not (seen[p] and not arrived)  # never goes back down
            seen[p] = arrived
    assert all(seen)
    engine.recv_state.wait()
    engine.send_state.wait()
    # a fresh iteration resets arrival state
    engine.recv_state.start()
    engine.send_state.start()
    assert not engine.recv_state.parrived(0)


def test_pready_order_permutation_invariance() -> None:
    """The wire timeline depends on ready times, not pready call order."""
    ready = [3e-6, 1e-6, 4e-6, 1e-6, 5e-6, 2e-6]

    def run(order: list[int]) -> tuple[list[tuple[int, float, float]], float]:
        net, engine = _engine(n_send=6, n_recv=6, buffer_bytes=12288, aggr=4096)
        _run_iteration(net, engine, [net.clock] * 6)
        t0 = net.clock
        engine.recv_state.start()
        engine.send_state.start()
        for p in order:
            engine.send_state.pready(p, t0 + ready[p])
        recv_done = engine.recv_state.wait()
        engine.send_state.wait()
        timeline = sorted(
            (h.msg.size, h.msg.inject_time - t0, h.delivery_time - t0)
            for h in engine.send_state.send_handles
        )
        return timeline, recv_done - t0

    rng = random.Random(11)
    base_order = list(range(6))
    reference = run(base_order)
    for _ in range(8):
        order = base_order[:]
        rng.shuffle(order)
        assert run(order) == reference


def test_legacy_mode_single_message_and_counter() -> None:
    net, engine = _engine(buffer_bytes=8192, legacy=True)
    send = engine.send_state
    assert send.mode == "legacy-am"
    engine.recv_state.start()
    send.start()
    assert send.counters == [5]  # 4 partitions + 1 for the per-iteration CTS
    for p in range(4):
        send.pready(p, net.clock)
    assert send.counters == [1]  # still waiting on the CTS
    engine.recv_state.wait()
    send.wait()
    assert len(send.send_handles) == 1
    assert send.send_handles[0].msg.size == 8192


def test_legacy_cts_gates_every_iteration() -> None:
    net, engine = _engine(buffer_bytes=4096, legacy=True)
    cts_times = []
    for _ in range(4):
        _run_iteration(net, engine, [net.clock] * 4)
        cts_times.append(engine.send_state.cts_time)
        handle = engine.send_state.send_handles[0]
        assert handle.msg.inject_time >= cts_times[-1]
    # a fresh CTS arrived for each iteration
    assert sorted(cts_times) == cts_times
    assert len(set(cts_times)) == 4
    controls = [h for h in net.send_handles if h.msg.kind == "control"]
    # one RTS plus one CTS per iteration
    assert len(controls) == 1 + 4


def test_tag_matched_sends_no_control_after_first_iteration() -> None:
    net, engine = _engine(buffer_bytes=4096)
    _run_iteration(net, engine, [net.clock] * 4)
    before = len([h for h in net.send_handles if h.msg.kind == "control"])
    for _ in range(3):
        _run_iteration(net, engine, [net.clock] * 4)
    after = len([h for h in net.send_handles if h.msg.kind == "control"])
    assert before == 2  # RTS + CTS
    assert after == before


def test_deadlock_on_withheld_pready() -> None:
    net, engine = _engine(buffer_bytes=4096)
    _run_iteration(net, engine, [0.0] * 4)
    engine.recv_state.start()
    engine.send_state.start()
    for p in (0, 1, 3):  # partition 2 never becomes ready
        engine.send_state.pready(p, net.clock)
    with pytest.raises(DeadlockError, match=r"\[2\]"):
        engine.send_state.wait()


def test_receiver_deadlocks_when_sender_never_readies() -> None:
    net, engine = _engine(buffer_bytes=4096)
    _run_iteration(net, engine, [0.0] * 4)
    engine.recv_state.start()
    engine.send_state.start()
    with pytest.raises(DeadlockError):
        engine.recv_state.wait()


def test_sender_deadlocks_without_receiver() -> None:
    net = Network(T)
    send = psend_init(net, 4, 4096)
    send.start()
    for p in range(4):
        send.pready(p, 0.0)
    with pytest.raises(DeadlockError, match="clear-to-send"):
        send.wait()


def test_legacy_sender_blocks_until_receiver_starts_iteration() -> None:
    net, engine = _engine(buffer_bytes=4096, legacy=True)
    _run_iteration(net, engine, [0.0] * 4)
    engine.send_state.start()
    for p in range(4):
        engine.send_state.pready(p, net.clock)
    with pytest.raises(DeadlockError, match="clear-to-send"):
        engine.send_state.wait()


def test_two_requests_coexist_on_one_network() -> None:
    net = Network(T)
    config = PartConfig(part_aggr_size=0)
    plan = TagPlan(config.reserved_tag_space)
    engines = [
        PartEngine(net, 4, 4, 4096, config, tag_plan=plan, request_id=i)
        for i in range(2)
    ]
    for engine in engines:
        engine.recv_state.start()
        engine.send_state.start()
    for engine in engines:
        for p in range(4):
            engine.send_state.pready(p, net.clock)
    for engine in engines:
        engine.recv_state.wait()
        engine.send_state.wait()
    tags = {h.msg.tag for h in net.send_handles if h.msg.kind == "tagged-send"}
    assert len(tags) == 8  # distinct tag blocks per request
