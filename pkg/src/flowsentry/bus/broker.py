"""Topic broker: accepts publisher and subscriber connections, routes each
published event to every subscriber holding a byte-prefix of its topic.

Routing is linearized under one lock, so per-publisher order is preserved
to every subscriber and an optional in-process sink (the controller's event
logger) always sees an event before any external subscriber. Subscribers
that cannot drain their outbound queue are disconnected; publishers are
never blocked by slow subscribers.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from typing import Callable, Optional

from . import frames
from .frames import MonitoringEvent, ProtocolViolation

log = logging.getLogger(__name__)

DEFAULT_BUS_PORT = 7500
PING_INTERVAL = 10.0
MAX_MISSED_PINGS = 3


def topic_matches(prefix: str, topic: str) -> bool:
    """Byte-prefix subscription predicate."""
    return topic.startswith(prefix)


class _Connection:
    def __init__(self, sock: socket.socket, peer: str) -> None:
        self.sock = sock
        self.peer = peer
        self.role: Optional[int] = None
        self.identity = ""
        self.prefixes: set[str] = set()
        self.outbound: queue.Queue = queue.Queue()
        self.missed_pings = 0
        self.alive = True
        self.send_lock = threading.Lock()

    def send(self, data: bytes) -> None:
        with self.send_lock:
            self.sock.sendall(data)

    def close(self) -> None:
        self.alive = False
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


class Broker:
    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        event_sink: Optional[Callable[[MonitoringEvent], None]] = None,
        subscriber_queue_limit: int = 10_000,
        ping_interval: float = PING_INTERVAL,
    ) -> None:
        self._host = host
        self._requested_port = port
        self._event_sink = event_sink
        self._queue_limit = subscriber_queue_limit
        self._ping_interval = ping_interval
        self._route_lock = threading.Lock()
        self._conn_lock = threading.Lock()
        self._connections: set[_Connection] = set()
        self._sock: Optional[socket.socket] = None
        self._running = False
        self.events_routed = 0
        self.subscribers_dropped = 0

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((self._host, self._requested_port))
        self._sock.listen(64)
        self._running = True
        threading.Thread(target=self._accept_loop, name="broker-accept", daemon=True).start()
        threading.Thread(target=self._ping_loop, name="broker-ping", daemon=True).start()

    @property
    def address(self) -> tuple[str, int]:
        assert self._sock is not None, "broker not started"
        return self._sock.getsockname()

    def stop(self) -> None:
        self._running = False
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        with self._conn_lock:
            conns = list(self._connections)
        for conn in conns:
            conn.close()

    # -- connection handling ---------------------------------------------------

    def _accept_loop(self) -> None:
        while self._running:
            try:
                sock, addr = self._sock.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = _Connection(sock, f"{addr[0]}:{addr[1]}")
            with self._conn_lock:
                self._connections.add(conn)
            threading.Thread(target=self._reader_loop, args=(conn,), daemon=True).start()

    def _drop(self, conn: _Connection) -> None:
        with self._conn_lock:
            self._connections.discard(conn)
        conn.close()

    def _reader_loop(self, conn: _Connection) -> None:
        fp = conn.sock.makefile("rb")
        try:
            while self._running and conn.alive:
                frame = frames.read_frame(fp)
                if frame is None:
                    break
                kind, body = frame
                conn.missed_pings = 0
                if kind == frames.KIND_PONG:
                    continue
                if kind == frames.KIND_PING:
                    conn.send(frames.encode_frame(frames.KIND_PONG))
                    continue
                if kind == frames.KIND_HELLO:
                    role, identity = frames.decode_hello(body)
                    if role not in (frames.ROLE_PUBLISHER, frames.ROLE_SUBSCRIBER):
                        raise ProtocolViolation(f"bad role {role}")
                    conn.role = role
                    conn.identity = identity
                    if role == frames.ROLE_SUBSCRIBER:
                        threading.Thread(target=self._writer_loop, args=(conn,), daemon=True).start()
                    continue
                if conn.role is None:
                    raise ProtocolViolation(f"{kind:#x} before HELLO")
                if kind == frames.KIND_SUB:
                    if conn.role != frames.ROLE_SUBSCRIBER:
                        raise ProtocolViolation("SUB from a publisher")
                    conn.prefixes.add(frames.decode_sub(body))  # duplicates are no-ops
                    continue
                if kind == frames.KIND_PUB:
                    if conn.role != frames.ROLE_PUBLISHER:
                        raise ProtocolViolation("PUB from a subscriber")
                    self._route(frames.decode_pub(body))
                    continue
                raise ProtocolViolation(f"unknown frame kind {kind:#x}")
        except ProtocolViolation as exc:
            log.warning("protocol violation from %s (%s): %s", conn.peer, conn.identity, exc)
        except OSError:
            pass
        finally:
            self._drop(conn)

    def _writer_loop(self, conn: _Connection) -> None:
        while conn.alive:
            data = conn.outbound.get()
            if data is None:
                return
            try:
                conn.send(data)
            except OSError:
                self._drop(conn)
                return

    # -- routing ---------------------------------------------------------------

    def _route(self, event: MonitoringEvent) -> None:
        data = frames.encode_pub(event)
        with self._route_lock:
            self.events_routed += 1
            if self._event_sink is not None:
                self._event_sink(event)
            with self._conn_lock:
                subscribers = [
                    c
                    for c in self._connections
                    if c.role == frames.ROLE_SUBSCRIBER and c.alive
                ]
            for conn in subscribers:
                if not any(topic_matches(p, event.topic) for p in conn.prefixes):
                    continue
                if conn.outbound.qsize() >= self._queue_limit:
                    # Slow consumer: cut it loose rather than stall publishers.
                    self.subscribers_dropped += 1
                    log.warning("dropping slow subscriber %s (%s)", conn.peer, conn.identity)
                    self._drop(conn)
                    conn.outbound.put(None)
                    continue
                conn.outbound.put(data)

    # -- keepalive --------------------------------------------------------------

    def _ping_loop(self) -> None:
        while self._running:
            time.sleep(self._ping_interval)
            with self._conn_lock:
                conns = list(self._connections)
            for conn in conns:
                conn.missed_pings += 1
                if conn.missed_pings > MAX_MISSED_PINGS:
                    log.warning("dropping unresponsive peer %s (%s)", conn.peer, conn.identity)
                    self._drop(conn)
                    continue
                try:
                    conn.send(frames.encode_frame(frames.KIND_PING))
                except OSError:
                    self._drop(conn)
