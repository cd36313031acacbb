"""Event plane: frame codec, prefix routing, ordering and isolation."""

import io
import socket
import struct
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowsentry.bus import (
    Broker,
    BusConnectionError,
    EventPublisher,
    EventSubscriber,
    MonitoringEvent,
    ProtocolViolation,
    topic_matches,
)
from flowsentry.bus import frames


@pytest.fixture
def broker():
    b = Broker(port=0, ping_interval=60.0)
    b.start()
    yield b
    b.stop()


def addr(broker) -> str:
    host, port = broker.address
    return f"{host}:{port}"


# -- frames -------------------------------------------------------------------


def test_pub_frame_round_trip():
    event = MonitoringEvent("probe/p1/alert/synflood", 1700000000_005000, 42, "src=10.0.0.1")
    data = frames.encode_pub(event)
    fp = io.BytesIO(data)
    kind, body = frames.read_frame(fp)
    assert kind == frames.KIND_PUB
    assert frames.decode_pub(body) == event


def test_hello_and_sub_round_trip():
    kind, body = frames.read_frame(io.BytesIO(frames.encode_hello(frames.ROLE_PUBLISHER, "p1")))
    assert kind == frames.KIND_HELLO
    assert frames.decode_hello(body) == (frames.ROLE_PUBLISHER, "p1")
    kind, body = frames.read_frame(io.BytesIO(frames.encode_sub("probe/p1/")))
    assert frames.decode_sub(body) == "probe/p1/"


def test_oversize_frame_rejected():
    with pytest.raises(ProtocolViolation):
        frames.encode_frame(frames.KIND_PUB, b"x" * (1 << 20))
    huge = struct.pack(">I", (1 << 20) + 1)
    with pytest.raises(ProtocolViolation):
        frames.read_frame(io.BytesIO(huge + b"\x03"))


def test_frame_length_is_big_endian_and_counts_kind():
    data = frames.encode_frame(frames.KIND_PING)
    assert data == b"\x00\x00\x00\x01\x04"


# -- prefix semantics -----------------------------------------------------------

PREFIX_CASES = [
    ("", "probe/p1/alert/synflood", True),
    ("", "anything", True),
    ("probe/p1/alert", "probe/p1/alert/synflood", True),
    ("probe/p1/alert", "probe/p1/log/heartbeat", False),
    ("probe/p1", "probe/p10/alert/x", True),  # byte prefix, not path segments
    ("probe/p1/", "probe/p10/alert/x", False),
    ("probe/p2", "probe/p1/alert/x", False),
    ("probe/p1/alert/synflood", "probe/p1/alert/synflood", True),
    ("probe/p1/alert/synflood/extra", "probe/p1/alert/synflood", False),
    ("p", "probe/p1/info/a", True),
    ("q", "probe/p1/info/a", False),
    ("probe/p1/warning", "probe/p1/warning/w", True),
    ("probe/p1/info", "probe/p1/info/x", True),
    ("probe/p1/log", "probe/p1/log/eof", True),
    ("probe/p1/log/eof", "probe/p1/log/eof", True),
    ("probe/p1/alert", "probe/p1/alert", True),
    ("probe/p1/alerts", "probe/p1/alert", False),
    ("probe/", "other/p1/alert", False),
    ("probe/p1/a", "probe/p1/alert/x", True),
    ("robe", "probe/p1/alert/x", False),
]


@pytest.mark.parametrize("prefix,topic,expected", PREFIX_CASES)
def test_prefix_table(prefix, topic, expected):
    assert topic_matches(prefix, topic) is expected


@given(st.text(max_size=12), st.text(max_size=12))
@settings(max_examples=200, deadline=None)
def test_prefix_matches_startswith_definition(prefix, topic):
    assert topic_matches(prefix, topic) == topic.startswith(prefix)


# -- live broker ------------------------------------------------------------------


def test_subscriber_with_prefix_receives_matching_events(broker):
    sub = EventSubscriber(addr(broker), "s1", prefixes=("probe/p1/alert",))
    time.sleep(0.05)
    pub = EventPublisher(addr(broker), "p1")
    pub.publish("probe/p1/alert/synflood", 1, "hit")
    pub.publish("probe/p1/log/heartbeat", 2, "beat")
    pub.publish("probe/p1/alert/portscan", 3, "hit2")
    got = [sub.get(timeout=2) for _ in range(2)]
    assert [e.topic for e in got] == ["probe/p1/alert/synflood", "probe/p1/alert/portscan"]
    assert sub.get(timeout=0.2) is None
    pub.close()
    sub.close()


def test_empty_prefix_receives_everything(broker):
    sub = EventSubscriber(addr(broker), "catch-all", prefixes=("",))
    time.sleep(0.05)
    pub = EventPublisher(addr(broker), "p1")
    topics = ["probe/p1/info/a", "probe/p1/log/b", "other/x/alert/c"]
    for i, t in enumerate(topics):
        pub.publish(t, i, "x")
    got = [sub.get(timeout=2).topic for _ in range(3)]
    assert got == topics
    pub.close()
    sub.close()


def test_overlapping_prefixes_deliver_once_per_subscriber(broker):
    both = EventSubscriber(addr(broker), "both", prefixes=("probe/p1", "probe/p1/alert"))
    coarse = EventSubscriber(addr(broker), "coarse", prefixes=("probe/p1",))
    time.sleep(0.05)
    pub = EventPublisher(addr(broker), "p1")
    pub.publish("probe/p1/alert/synflood", 1, "hit")
    assert both.get(timeout=2).topic == "probe/p1/alert/synflood"
    assert both.get(timeout=0.2) is None  # no duplicate despite two matching prefixes
    assert coarse.get(timeout=2).topic == "probe/p1/alert/synflood"
    pub.close()
    both.close()
    coarse.close()


def test_publish_order_and_seq(broker):
    sub = EventSubscriber(addr(broker), "s", prefixes=("",))
    time.sleep(0.05)
    pub = EventPublisher(addr(broker), "p1")
    for i in range(3):
        pub.publish("probe/p1/info/tick", i, f"n={i}")
    seqs = [sub.get(timeout=2).seq for _ in range(3)]
    assert seqs == [1, 2, 3]
    pub.close()
    sub.close()


def test_no_replay_for_late_subscriber(broker):
    pub = EventPublisher(addr(broker), "p1")
    for i in range(5):
        pub.publish("probe/p1/info/tick", i, f"n={i}")
    time.sleep(0.1)
    sub = EventSubscriber(addr(broker), "late", prefixes=("",))
    time.sleep(0.05)
    pub.publish("probe/p1/info/tick", 5, "n=5")
    event = sub.get(timeout=2)
    assert event.payload == "n=5"
    assert sub.get(timeout=0.2) is None
    pub.close()
    sub.close()


def test_three_publishers_hundred_events_each(broker):
    sub = EventSubscriber(addr(broker), "all", prefixes=("",))
    time.sleep(0.05)

    def blast(name):
        pub = EventPublisher(addr(broker), name)
        for i in range(100):
            pub.publish(f"probe/{name}/info/tick", i, f"{name}:{i}")
        pub.close()

    threads = [threading.Thread(target=blast, args=(f"p{i}",)) for i in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    received = [sub.get(timeout=5) for _ in range(300)]
    assert all(e is not None for e in received)
    assert sub.get(timeout=0.3) is None
    per_publisher: dict[str, list[int]] = {}
    for e in received:
        per_publisher.setdefault(e.topic.split("/")[1], []).append(e.seq)
    assert set(per_publisher) == {"p0", "p1", "p2"}
    for seqs in per_publisher.values():
        assert seqs == list(range(1, 101))  # FIFO, no gaps
    sub.close()


def test_subscriber_disconnect_does_not_disturb_others(broker):
    keeper = EventSubscriber(addr(broker), "keeper", prefixes=("",))
    leaver = EventSubscriber(addr(broker), "leaver", prefixes=("",))
    time.sleep(0.05)
    pub = EventPublisher(addr(broker), "p1")
    pub.publish("probe/p1/info/a", 1, "one")
    assert keeper.get(timeout=2).payload == "one"
    assert leaver.get(timeout=2).payload == "one"
    leaver.close()
    time.sleep(0.05)
    pub.publish("probe/p1/info/b", 2, "two")
    assert keeper.get(timeout=2).payload == "two"
    pub.close()
    keeper.close()


def test_publish_before_hello_is_violation(broker):
    host, port = broker.address
    sock = socket.create_connection((host, port))
    event = MonitoringEvent("t", 0, 1, "x")
    sock.sendall(frames.encode_pub(event))
    # Broker closes the connection; the read returns EOF.
    sock.settimeout(2)
    assert sock.recv(1) == b""
    sock.close()


def test_sub_from_publisher_is_violation(broker):
    host, port = broker.address
    sock = socket.create_connection((host, port))
    sock.sendall(frames.encode_hello(frames.ROLE_PUBLISHER, "p"))
    sock.sendall(frames.encode_sub("x"))
    sock.settimeout(2)
    assert sock.recv(1) == b""
    sock.close()


def test_slow_subscriber_is_dropped_but_publisher_unaffected():
    broker = Broker(port=0, ping_interval=60.0, subscriber_queue_limit=10)
    broker.start()
    try:
        host, port = broker.address
        # A raw socket that HELLOs as subscriber but never reads.
        stuck = socket.create_connection((host, port))
        stuck.sendall(frames.encode_hello(frames.ROLE_SUBSCRIBER, "stuck"))
        stuck.sendall(frames.encode_sub(""))
        time.sleep(0.1)

        pub = EventPublisher(f"{host}:{port}", "p1")
        for i in range(5000):
            pub.publish("probe/p1/info/flood", i, "x" * 200)
        # Publisher stayed healthy the whole way through.
        assert pub._seq == 5000
        deadline = time.time() + 5
        while broker.subscribers_dropped == 0 and time.time() < deadline:
            time.sleep(0.02)
        assert broker.subscribers_dropped >= 1
        pub.close()
        stuck.close()
    finally:
        broker.stop()


def test_keepalive_drops_silent_peer():
    broker = Broker(port=0, ping_interval=0.1)
    broker.start()
    try:
        host, port = broker.address
        # Raw socket that never answers pings.
        mute = socket.create_connection((host, port))
        mute.sendall(frames.encode_hello(frames.ROLE_PUBLISHER, "mute"))
        mute.settimeout(3)
        start = time.time()
        buf = b"x"
        while buf:
            try:
                buf = mute.recv(4096)
            except socket.timeout:
                buf = b"x"
                if time.time() - start > 3:
                    break
        # Connection was closed by the broker after 3 missed pings.
        assert time.time() - start < 3
        mute.close()
    finally:
        broker.stop()


def test_duplicate_subscription_is_idempotent(broker):
    sub = EventSubscriber(addr(broker), "s", prefixes=("probe/", "probe/"))
    sub.subscribe("probe/")
    time.sleep(0.05)
    pub = EventPublisher(addr(broker), "p1")
    pub.publish("probe/p1/info/a", 1, "x")
    assert sub.get(timeout=2) is not None
    assert sub.get(timeout=0.2) is None
    pub.close()
    sub.close()
