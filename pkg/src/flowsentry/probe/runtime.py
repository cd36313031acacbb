"""The deployable probe process.

Loads a compiled program, attaches to its traffic source, runs the engine
packet by packet and publishes the resulting events on the bus. A control
thread answers line-oriented STATUS/STOP requests on stdin/stdout; all
logging goes to stderr so stdout stays a clean control channel.

Exit codes: 0 clean, 2 config error, 3 artifact error, 4 bus failure.
"""

from __future__ import annotations

import json
import logging
import os
import socket
import sys
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Optional

from ..bus.client import BusConnectionError, EventPublisher
from ..compiler.artifact import ArtifactError, load_artifact
from ..packets.mirror import open_tap
from ..packets.model import PacketRecord
from ..packets.pcap import PcapStream, UnreadableCaptureError
from ..xfsm.engine import Engine
from .config import ProbeConfig

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_BUS = 4

EVENT_BUFFER_LIMIT = 10_000
DEFAULT_BUS_CONNECT_TIMEOUT = 30.0
_PACING_MAX_SLEEP = 5.0


class BusLostError(Exception):
    """The bus went away and the retention buffer overflowed."""


@dataclass
class ProbeStatus:
    state: str = "installed"
    packets_processed: int = 0
    events_published: int = 0
    packets_skipped: int = 0
    started_at: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "state": self.state,
            "packets_processed": self.packets_processed,
            "events_published": self.events_published,
            "packets_skipped": self.packets_skipped,
            "started_at": self.started_at,
        }


def _connect_timeout() -> float:
    raw = os.environ.get("FLOWSENTRY_BUS_TIMEOUT")
    return float(raw) if raw else DEFAULT_BUS_CONNECT_TIMEOUT


class BufferedPublisher:
    """Publisher that rides out short bus outages.

    Failed events are retained (up to EVENT_BUFFER_LIMIT) and replayed in
    order once the connection comes back; overflow raises BusLostError so
    nothing is ever dropped silently.
    """

    def __init__(self, address: str, identity: str) -> None:
        self._address = address
        self._identity = identity
        self._buffer: list[tuple[str, int, str]] = []
        self._publisher = self._connect_with_backoff(_connect_timeout())

    def _connect_with_backoff(self, total_timeout: float) -> EventPublisher:
        deadline = time.monotonic() + total_timeout
        delay = 0.1
        while True:
            try:
                return EventPublisher(self._address, self._identity, timeout=2.0)
            except BusConnectionError:
                if time.monotonic() + delay > deadline:
                    raise
                time.sleep(delay)
                delay = min(delay * 2, 2.0)

    def _try_reconnect(self) -> bool:
        try:
            self._publisher = EventPublisher(self._address, self._identity, timeout=0.5)
            return True
        except BusConnectionError:
            return False

    def publish(self, topic: str, ts_micros: int, payload: str) -> None:
        self._buffer.append((topic, ts_micros, payload))
        if len(self._buffer) > EVENT_BUFFER_LIMIT:
            raise BusLostError(f"buffered events exceed {EVENT_BUFFER_LIMIT}")
        self._drain()

    def _drain(self) -> None:
        if self._publisher is None and not self._try_reconnect():
            return
        while self._buffer:
            topic, ts_micros, payload = self._buffer[0]
            try:
                self._publisher.publish(topic, ts_micros, payload)
            except BusConnectionError:
                self._publisher = None
                return
            self._buffer.pop(0)

    def flush(self, timeout: float = 5.0) -> None:
        """Deliver everything still buffered or raise BusLostError."""
        deadline = time.monotonic() + timeout
        while self._buffer:
            self._drain()
            if self._buffer:
                if time.monotonic() > deadline:
                    raise BusLostError(f"{len(self._buffer)} events undeliverable")
                time.sleep(0.1)

    def close(self) -> None:
        if self._publisher is not None:
            self._publisher.close()


class ProbeRuntime:
    def __init__(self, config: ProbeConfig, status_path: Optional[str] = None) -> None:
        self.config = config
        self.status = ProbeStatus()
        self._status_path = status_path
        self._status_lock = threading.Lock()
        self._stop_requested = threading.Event()
        self._done = threading.Event()
        self._source_handles: tuple = ()
        self._source_sock: Optional[socket.socket] = None

    def _write_terminal_status(self) -> None:
        # Leaves a snapshot the controller can read after the process is gone.
        if self._status_path is None:
            return
        try:
            with self._status_lock:
                snapshot = self.status.to_json()
            with open(self._status_path, "w", encoding="utf-8") as fp:
                json.dump(snapshot, fp)
        except OSError:
            pass

    # -- control channel -----------------------------------------------------

    def _control_loop(self) -> None:
        for line in sys.stdin:
            command = line.strip()
            if not command:
                continue
            if command == "STATUS":
                self._reply_ok()
            elif command == "STOP":
                self._stop_requested.set()
                self._abort_source()
                self._done.wait(timeout=30.0)
                self._reply_ok()
            else:
                sys.stdout.write(f"ERR unknown command {command}\n")
                sys.stdout.flush()

    def _reply_ok(self) -> None:
        with self._status_lock:
            snapshot = self.status.to_json()
        sys.stdout.write(f"OK {json.dumps(snapshot)}\n")
        sys.stdout.flush()

    # -- traffic source --------------------------------------------------------

    def _open_source(self) -> Iterable[PacketRecord]:
        source = self.config.attach_source
        if source.startswith("pcap:"):
            path = source[len("pcap:") :]
            fp = open(path, "rb")
            self._source_handles = (fp,)
            return PcapStream(fp)
        stream, fp, sock = open_tap(source)
        self._source_handles = (fp, sock)
        self._source_sock = sock
        return stream

    def _abort_source(self) -> None:
        # Called from the control thread: shutting the socket down unblocks
        # a reader parked in recv; actually closing the handles stays with
        # the thread that owns the read (close would contend for its lock).
        if self._source_sock is not None:
            try:
                self._source_sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def _close_source(self) -> None:
        for handle in self._source_handles:
            try:
                handle.close()
            except OSError:
                pass

    # -- main ---------------------------------------------------------------------

    def run(self) -> int:
        try:
            program = load_artifact(self.config.artifact_path)
        except (ArtifactError, OSError) as exc:
            log.error("artifact load failed: %s", exc)
            with self._status_lock:
                self.status.state = "failed"
            self._done.set()
            return EXIT_ARTIFACT

        try:
            publisher = BufferedPublisher(self.config.bus_address, self.config.probe_id)
        except BusConnectionError as exc:
            log.error("bus unreachable: %s", exc)
            with self._status_lock:
                self.status.state = "failed"
            self._done.set()
            return EXIT_BUS

        threading.Thread(target=self._control_loop, name="probe-control", daemon=True).start()

        engine = Engine(program)
        topic_base = f"probe/{self.config.probe_id}"
        pace = self.config.replay_pacing == "honor_timestamps"
        prev_ts: Optional[int] = None
        last_ts = (0, 0)
        exit_code = EXIT_OK
        exhausted = False

        with self._status_lock:
            self.status.state = "running"
            self.status.started_at = time.time()

        try:
            stream = self._open_source()
        except (OSError, UnreadableCaptureError, ValueError) as exc:
            log.error("cannot open traffic source: %s", exc)
            with self._status_lock:
                self.status.state = "failed"
            self._done.set()
            return EXIT_CONFIG

        try:
            iterator = iter(stream)
            while not self._stop_requested.is_set():
                try:
                    pkt = next(iterator)
                except StopIteration:
                    # A shut-down tap also reads as EOF; that is a stop, not
                    # an exhausted trace.
                    exhausted = not self._stop_requested.is_set()
                    break
                except (OSError, ValueError):
                    # Source yanked away mid-read (stop or tap loss).
                    exhausted = False
                    break
                if pace and prev_ts is not None:
                    gap = (pkt.ts_micros - prev_ts) / 1_000_000
                    if gap > 0:
                        time.sleep(min(gap, _PACING_MAX_SLEEP))
                prev_ts = pkt.ts_micros
                last_ts = (pkt.ts_sec, pkt.ts_usec)

                events = engine.step(pkt)
                with self._status_lock:
                    self.status.packets_processed += 1
                for ev in events:
                    publisher.publish(
                        f"{topic_base}/{ev.severity}/{ev.label}", ev.ts_micros, ev.payload
                    )
                    with self._status_lock:
                        self.status.events_published += 1

            if isinstance(stream, PcapStream):
                with self._status_lock:
                    self.status.packets_skipped = stream.skipped

            if exhausted:
                with self._status_lock:
                    counters = (
                        self.status.packets_processed,
                        self.status.events_published,
                        self.status.packets_skipped,
                    )
                eof_ts = last_ts[0] * 1_000_000 + last_ts[1]
                publisher.publish(
                    f"{topic_base}/log/eof",
                    eof_ts,
                    f"packets={counters[0]} events={counters[1]} skipped={counters[2]}",
                )
            publisher.flush()
        except BusLostError as exc:
            log.error("bus lost: %s", exc)
            with self._status_lock:
                self.status.state = "failed"
            exit_code = EXIT_BUS
        finally:
            self._close_source()
            publisher.close()
            with self._status_lock:
                if self.status.state == "running":
                    self.status.state = "stopped"
            self._write_terminal_status()
            self._done.set()

        if self._stop_requested.is_set():
            # Give the control thread a beat to write its STOP reply.
            time.sleep(0.05)
        return exit_code
