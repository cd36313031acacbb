"""Port-mirroring harness: fan one packet stream out to several taps.

Two flavors:

* ``mirror()`` duplicates an in-process iterable to n independent consumers
  with bounded buffering. A full tap buffer blocks the producer instead of
  dropping, so mirrored streams are exact copies.
* ``TapServer`` serves the same duplication over TCP: each connecting tap
  receives the whole trace as a pcap byte stream. TCP flow control provides
  the backpressure. Probes attach to it with a ``tap:host:port`` source.
"""

from __future__ import annotations

import queue
import socket
import threading
from typing import Iterable, Iterator

from .model import PacketRecord
from .pcap import PcapStream, write_global_header, write_record

_SENTINEL = object()


class Tap:
    """One mirrored consumer; iterate to drain, close to detach early."""

    def __init__(self, buffer_size: int) -> None:
        self._queue: queue.Queue = queue.Queue(maxsize=buffer_size)
        self.closed = False

    def __iter__(self) -> Iterator[PacketRecord]:
        while True:
            item = self._queue.get()
            if item is _SENTINEL:
                return
            yield item

    def close(self) -> None:
        self.closed = True
        # Unblock a producer stuck on a full queue.
        try:
            self._queue.get_nowait()
        except queue.Empty:
            pass


def mirror(packets: Iterable[PacketRecord], n_taps: int, buffer_size: int = 1024) -> list[Tap]:
    """Duplicate a packet stream to n taps, preserving order and content."""
    if n_taps < 1:
        raise ValueError("n_taps must be >= 1")
    taps = [Tap(buffer_size) for _ in range(n_taps)]

    def produce():
        for pkt in packets:
            for tap in taps:
                while not tap.closed:
                    try:
                        tap._queue.put(pkt, timeout=0.05)
                        break
                    except queue.Full:
                        continue
        for tap in taps:
            while not tap.closed:
                try:
                    tap._queue.put(_SENTINEL, timeout=0.05)
                    break
                except queue.Full:
                    continue

    threading.Thread(target=produce, name="mirror-producer", daemon=True).start()
    return taps


class TapServer:
    """Stream one trace to every connecting tap as a pcap byte stream."""

    def __init__(self, packets: list[PacketRecord], n_taps: int, host: str = "127.0.0.1") -> None:
        if n_taps < 1:
            raise ValueError("n_taps must be >= 1")
        self._packets = packets
        self._n_taps = n_taps
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, 0))
        self._sock.listen(n_taps)
        self._threads: list[threading.Thread] = []
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()

    @property
    def endpoint(self) -> str:
        host, port = self.address
        return f"tap:{host}:{port}"

    def _accept_loop(self) -> None:
        for _ in range(self._n_taps):
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve_tap, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)
        self._sock.close()

    def _serve_tap(self, conn: socket.socket) -> None:
        try:
            with conn, conn.makefile("wb") as fp:
                write_global_header(fp)
                for pkt in self._packets:
                    write_record(fp, pkt)
                fp.flush()
        except (BrokenPipeError, ConnectionResetError, OSError):
            # A disconnected tap only affects itself.
            pass

    def wait(self, timeout: float | None = None) -> None:
        self._accept_thread.join(timeout)
        for t in self._threads:
            t.join(timeout)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def open_tap(endpoint: str, timeout: float = 10.0):
    """Connect to a tap endpoint ("tap:host:port"); returns a PcapStream
    plus the socket file to close when done."""
    if not endpoint.startswith("tap:"):
        raise ValueError(f"not a tap endpoint: {endpoint}")
    host, _, port = endpoint[4:].rpartition(":")
    sock = socket.create_connection((host, int(port)), timeout=timeout)
    sock.settimeout(None)
    fp = sock.makefile("rb")
    return PcapStream(fp), fp, sock
