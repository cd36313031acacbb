"""The control plane process: HTTP API, embedded event broker, subscribe-all
event logger, live event streams and optional static dashboard assets.

The broker routes every published event through ``_on_bus_event`` before any
external subscriber sees it, so the persistent log is always a superset of
any subscriber's view.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import queue
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlparse

from ..bus.broker import Broker
from ..bus.frames import MonitoringEvent
from .lifecycle import (
    DuplicateProbeError,
    IllegalTransitionError,
    ProbeManager,
    UnknownArtifactError,
    UnknownProbeError,
)
from .storage import ConfigCatalog, EventLog

log = logging.getLogger(__name__)

DEFAULT_HTTP_PORT = 7080
DEFAULT_BUS_PORT = 7500

_STREAM_KEEPALIVE_SECONDS = 10.0


class _StreamHub:
    """Fan-out of freshly logged records to open streaming responses."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._streams: list[tuple[str, queue.Queue]] = []

    def register(self, prefix: str) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._streams.append((prefix, q))
        return q

    def unregister(self, q: queue.Queue) -> None:
        with self._lock:
            self._streams = [(p, s) for p, s in self._streams if s is not q]

    def dispatch(self, record) -> None:
        with self._lock:
            targets = list(self._streams)
        for prefix, q in targets:
            if record.event.topic.startswith(prefix):
                q.put(record)


class Controller:
    def __init__(
        self,
        data_dir,
        http_port: int = DEFAULT_HTTP_PORT,
        bus_port: int = DEFAULT_BUS_PORT,
        host: str = "127.0.0.1",
        ui_dir: Optional[str] = None,
    ) -> None:
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._host = host
        self.catalog = ConfigCatalog(self.data_dir)
        self.event_log = EventLog(self.data_dir / "events.log")
        self.streams = _StreamHub()
        self.broker = Broker(host=host, port=bus_port, event_sink=self._on_bus_event)
        self._http_port = http_port
        self._httpd: Optional[ThreadingHTTPServer] = None
        self.probes: Optional[ProbeManager] = None
        self.ui_dir = Path(ui_dir).resolve() if ui_dir else None

    def _on_bus_event(self, event: MonitoringEvent) -> None:
        record = self.event_log.append(event)
        self.streams.dispatch(record)

    def start(self) -> None:
        self.broker.start()
        bus_host, bus_port = self.broker.address
        self.probes = ProbeManager(self.data_dir, self.catalog, f"{bus_host}:{bus_port}")
        handler = _make_handler(self)
        self._httpd = ThreadingHTTPServer((self._host, self._http_port), handler)
        self._httpd.daemon_threads = True
        threading.Thread(target=self._httpd.serve_forever, name="controller-http", daemon=True).start()
        log.info(
            "controller up: http=%s:%s bus=%s:%s data=%s",
            *self.http_address,
            *self.broker.address,
            self.data_dir,
        )

    @property
    def http_address(self) -> tuple[str, int]:
        assert self._httpd is not None, "controller not started"
        return self._httpd.server_address[:2]

    @property
    def http_url(self) -> str:
        host, port = self.http_address
        return f"http://{host}:{port}"

    def stop(self) -> None:
        if self.probes is not None:
            self.probes.shutdown()
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
        self.broker.stop()
        self.event_log.close()


def _make_handler(controller: Controller):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "flowsentry-controller"

        # -- plumbing ---------------------------------------------------------

        def log_message(self, fmt, *args):
            log.debug("http: " + fmt, *args)

        def _send_json(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _read_body(self) -> bytes:
            length = int(self.headers.get("Content-Length") or 0)
            return self.rfile.read(length) if length else b""

        def _json_body(self) -> dict:
            raw = self._read_body()
            if not raw:
                return {}
            return json.loads(raw)

        # -- routing -----------------------------------------------------------

        def do_GET(self):
            try:
                self._route("GET")
            except BrokenPipeError:
                pass
            except Exception as exc:  # pragma: no cover - defensive
                log.exception("GET %s failed", self.path)
                self._send_json(500, {"error": str(exc)})

        def do_POST(self):
            try:
                self._route("POST")
            except json.JSONDecodeError:
                self._send_json(400, {"error": "request body is not valid JSON"})
            except Exception as exc:  # pragma: no cover - defensive
                log.exception("POST %s failed", self.path)
                self._send_json(500, {"error": str(exc)})

        def do_DELETE(self):
            try:
                self._route("DELETE")
            except Exception as exc:  # pragma: no cover - defensive
                log.exception("DELETE %s failed", self.path)
                self._send_json(500, {"error": str(exc)})

        def _route(self, method: str) -> None:
            url = urlparse(self.path)
            path = url.path
            query = parse_qs(url.query)

            if method == "GET" and path == "/api/health":
                bus_host, bus_port = controller.broker.address
                self._send_json(200, {"status": "ok", "bus_address": f"{bus_host}:{bus_port}"})
                return

            if path == "/api/probes" and method == "GET":
                probes = [d.to_json() for d in controller.probes.poll_all()]
                self._send_json(200, {"probes": probes})
                return
            if path == "/api/probes" and method == "POST":
                self._create_probe()
                return

            m = re.fullmatch(r"/api/probes/([^/]+)", path)
            if m and method == "GET":
                self._with_probe_errors(lambda: self._send_json(200, controller.probes.poll(m.group(1)).to_json()))
                return
            if m and method == "DELETE":
                self._with_probe_errors(lambda: (controller.probes.remove(m.group(1)), self._send_json(200, {"removed": m.group(1)})))
                return

            m = re.fullmatch(r"/api/probes/([^/]+)/(install|start|stop)", path)
            if m and method == "POST":
                self._probe_command(m.group(1), m.group(2))
                return

            if path == "/api/configs" and method == "POST":
                self._upload_config()
                return
            if path == "/api/configs" and method == "GET":
                self._send_json(200, {"configs": controller.catalog.list()})
                return

            if path == "/api/events" and method == "GET":
                prefix = query.get("prefix", [""])[0]
                since = int(query.get("since", ["0"])[0])
                limit = min(int(query.get("limit", ["1000"])[0]), 10_000)
                records = controller.event_log.query(prefix, since, limit)
                self._send_json(200, {"events": [r.to_json() for r in records]})
                return

            if path == "/api/events/stream" and method == "GET":
                self._stream_events(query.get("prefix", [""])[0])
                return

            if path.startswith("/ui") and method == "GET":
                self._serve_ui(path)
                return

            self._send_json(404, {"error": f"no route for {method} {path}"})

        # -- handlers -------------------------------------------------------------

        def _with_probe_errors(self, fn) -> None:
            try:
                fn()
            except UnknownProbeError as exc:
                self._send_json(404, {"error": f"unknown probe {exc.args[0]!r}"})
            except UnknownArtifactError as exc:
                self._send_json(404, {"error": f"unknown artifact {exc.args[0]}"})
            except DuplicateProbeError as exc:
                self._send_json(409, {"error": str(exc)})
            except IllegalTransitionError as exc:
                self._send_json(409, {"error": str(exc), "state": exc.state})
            except (ValueError, KeyError) as exc:
                self._send_json(400, {"error": str(exc)})

        def _create_probe(self) -> None:
            body = self._json_body()
            probe_id = body.get("probe_id", "")
            host_label = body.get("host_label", "")

            def run():
                desc = controller.probes.add(probe_id, host_label)
                self._send_json(201, desc.to_json())

            self._with_probe_errors(run)

        def _probe_command(self, probe_id: str, command: str) -> None:
            def run():
                if command == "install":
                    controller.probes.get(probe_id)  # unknown probe beats a bad body
                    body = self._json_body()
                    attach = body.get("attach") or {}
                    mode = attach.get("mode", "direct")
                    source = attach.get("source", "")
                    if mode not in ("direct", "mirrored"):
                        raise ValueError(f"bad attach mode {mode!r}")
                    if not (source.startswith("pcap:") or source.startswith("tap:")):
                        raise ValueError("attach source must be pcap:<path> or tap:<host>:<port>")
                    desc = controller.probes.install(
                        probe_id,
                        body.get("program_id", ""),
                        body.get("version"),
                        mode,
                        source,
                    )
                elif command == "start":
                    desc = controller.probes.start(probe_id)
                else:
                    desc = controller.probes.stop(probe_id)
                self._send_json(200, desc.to_json())

            self._with_probe_errors(run)

        def _upload_config(self) -> None:
            text = self._read_body().decode("utf-8", errors="replace")
            entry, report = controller.catalog.upload(text)
            if entry is None:
                self._send_json(422, report.to_json())
                return
            payload = entry.to_json()
            payload["warnings"] = report.to_json()["warnings"]
            self._send_json(201, payload)

        def _stream_events(self, prefix: str) -> None:
            q = controller.streams.register(prefix)
            try:
                self.send_response(200)
                self.send_header("Content-Type", "application/x-ndjson")
                self.send_header("Cache-Control", "no-store")
                self.send_header("Connection", "close")
                self.end_headers()
                while True:
                    try:
                        record = q.get(timeout=_STREAM_KEEPALIVE_SECONDS)
                    except queue.Empty:
                        self.wfile.write(b"\n")  # keepalive; readers skip blanks
                        self.wfile.flush()
                        continue
                    self.wfile.write((json.dumps(record.to_json()) + "\n").encode())
                    self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError, OSError):
                pass
            finally:
                controller.streams.unregister(q)

        def _serve_ui(self, path: str) -> None:
            if controller.ui_dir is None:
                self._send_json(404, {"error": "dashboard assets not configured (--ui-dir)"})
                return
            rel = path[len("/ui") :].lstrip("/") or "index.html"
            target = (controller.ui_dir / rel).resolve()
            if not str(target).startswith(str(controller.ui_dir)) or not target.is_file():
                self._send_json(404, {"error": f"no asset {rel!r}"})
                return
            content = target.read_bytes()
            ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(content)))
            self.end_headers()
            self.wfile.write(content)

    return Handler
