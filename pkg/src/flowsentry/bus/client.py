"""Publisher and subscriber handles for the event plane.

Both run a background reader that answers broker keepalives; the subscriber
additionally queues incoming events for iteration. Sequence numbers are
assigned by the publisher, starting at 1 per connection.
"""

from __future__ import annotations

import queue
import socket
import threading
from typing import Iterator, Optional

from . import frames
from .frames import MonitoringEvent


def parse_bus_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    return host or "127.0.0.1", int(port)


class BusConnectionError(Exception):
    pass


class _BusClient:
    def __init__(self, address: str, role: int, identity: str, timeout: float = 10.0) -> None:
        host, port = parse_bus_address(address)
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise BusConnectionError(f"cannot reach bus at {address}: {exc}") from exc
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._fp = self._sock.makefile("rb")
        self._send_lock = threading.Lock()
        self._closed = False
        self._send(frames.encode_hello(role, identity))
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _send(self, data: bytes) -> None:
        with self._send_lock:
            try:
                self._sock.sendall(data)
            except OSError as exc:
                raise BusConnectionError(str(exc)) from exc

    def _read_loop(self) -> None:
        try:
            while not self._closed:
                frame = frames.read_frame(self._fp)
                if frame is None:
                    break
                kind, body = frame
                if kind == frames.KIND_PING:
                    self._send(frames.encode_frame(frames.KIND_PONG))
                else:
                    self._handle(kind, body)
        except (frames.ProtocolViolation, OSError, BusConnectionError):
            pass
        finally:
            self._on_disconnect()

    def _handle(self, kind: int, body: bytes) -> None:
        pass

    def _on_disconnect(self) -> None:
        pass

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass


class EventPublisher(_BusClient):
    def __init__(self, address: str, identity: str, timeout: float = 10.0) -> None:
        super().__init__(address, frames.ROLE_PUBLISHER, identity, timeout)
        self._seq = 0

    def publish(self, topic: str, ts_micros: int, payload: str) -> MonitoringEvent:
        self._seq += 1
        event = MonitoringEvent(topic=topic, ts_micros=ts_micros, seq=self._seq, payload=payload)
        self._send(frames.encode_pub(event))
        return event


class EventSubscriber(_BusClient):
    def __init__(
        self,
        address: str,
        identity: str,
        prefixes: tuple[str, ...] = ("",),
        timeout: float = 10.0,
    ) -> None:
        self._events: queue.Queue = queue.Queue()
        super().__init__(address, frames.ROLE_SUBSCRIBER, identity, timeout)
        for prefix in prefixes:
            self.subscribe(prefix)

    def subscribe(self, prefix: str) -> None:
        self._send(frames.encode_sub(prefix))

    def _handle(self, kind: int, body: bytes) -> None:
        if kind == frames.KIND_PUB:
            self._events.put(frames.decode_pub(body))

    def _on_disconnect(self) -> None:
        self._events.put(None)

    def get(self, timeout: Optional[float] = None) -> Optional[MonitoringEvent]:
        """Next event, or None on disconnect/timeout."""
        try:
            return self._events.get(timeout=timeout)
        except queue.Empty:
            return None

    def events(self, timeout: Optional[float] = None) -> Iterator[MonitoringEvent]:
        """Iterate events until disconnect (or per-event timeout expiry)."""
        while True:
            event = self.get(timeout)
            if event is None:
                return
            yield event
