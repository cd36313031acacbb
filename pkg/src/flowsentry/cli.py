"""Operator command line: drives the controller HTTP API and the traffic
harness.

Exit codes: 0 success, 1 API/connection error, 2 usage error (argparse).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
import urllib.error
import urllib.request
from typing import Optional

from .catalog import BUILTIN_PROGRAMS, builtin_program_text
from .packets.pcap import write_pcap
from .packets.synth import BenignSpec, PortScanSpec, SynFloodSpec, synthesize

DEFAULT_CONTROLLER = "http://127.0.0.1:7080"
ENV_CONTROLLER = "FLOWSENTRY_CONTROLLER"


class ApiError(Exception):
    def __init__(self, status: int, payload: dict) -> None:
        super().__init__(payload.get("error") or json.dumps(payload))
        self.status = status
        self.payload = payload


class ControllerClient:
    def __init__(self, base_url: str) -> None:
        self.base_url = base_url.rstrip("/")

    def _request(self, method: str, path: str, body: Optional[bytes] = None, content_type: str = "application/json"):
        req = urllib.request.Request(
            self.base_url + path,
            data=body,
            method=method,
            headers={"Content-Type": content_type} if body is not None else {},
        )
        try:
            with urllib.request.urlopen(req, timeout=30) as resp:
                return json.loads(resp.read() or b"{}")
        except urllib.error.HTTPError as exc:
            try:
                payload = json.loads(exc.read() or b"{}")
            except json.JSONDecodeError:
                payload = {"error": f"HTTP {exc.code}"}
            raise ApiError(exc.code, payload) from None
        except urllib.error.URLError as exc:
            raise ApiError(0, {"error": f"controller unreachable at {self.base_url}: {exc.reason}"}) from None

    def get(self, path: str):
        return self._request("GET", path)

    def post(self, path: str, payload: Optional[dict] = None):
        body = json.dumps(payload or {}).encode()
        return self._request("POST", path, body)

    def post_text(self, path: str, text: str):
        return self._request("POST", path, text.encode(), content_type="application/xml")

    def delete(self, path: str):
        return self._request("DELETE", path)

    def stream(self, path: str):
        """Yield parsed NDJSON records from a streaming endpoint."""
        req = urllib.request.Request(self.base_url + path)
        resp = urllib.request.urlopen(req, timeout=300)
        for line in resp:
            line = line.strip()
            if line:
                yield json.loads(line)


def _render_table(rows: list[dict], columns: list[str]) -> str:
    if not rows:
        return "(empty)"
    widths = {c: max(len(c), *(len(str(r.get(c, ""))) for r in rows)) for c in columns}
    header = "  ".join(c.ljust(widths[c]) for c in columns)
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append("  ".join(str(r.get(c, "")).ljust(widths[c]) for c in columns))
    return "\n".join(lines)


def _emit(args, rows: list[dict], columns: list[str]) -> None:
    if args.format == "json":
        print(json.dumps(rows, indent=2))
    else:
        print(_render_table(rows, columns))


def _flatten_probe(desc: dict) -> dict:
    artifact = desc.get("artifact") or {}
    status = desc.get("last_status") or {}
    return {
        "probe_id": desc.get("probe_id"),
        "lifecycle": desc.get("lifecycle"),
        "program": f"{artifact.get('program_id', '')}@v{artifact.get('version', '')}" if artifact else "",
        "packets": status.get("packets_processed", ""),
        "events": status.get("events_published", ""),
    }


# -- command implementations -----------------------------------------------------


def cmd_config_upload(client: ControllerClient, args) -> int:
    with open(args.file, "r", encoding="utf-8") as fp:
        text = fp.read()
    try:
        result = client.post_text("/api/configs", text)
    except ApiError as exc:
        if exc.status == 422:
            print("validation failed:", file=sys.stderr)
            for issue in exc.payload.get("errors", []):
                print(f"  {issue['path']}: {issue['message']}", file=sys.stderr)
            return 1
        raise
    print(json.dumps(result, indent=2) if args.format == "json" else
          f"uploaded {result['program_id']} version {result['version']} checksum {result['checksum']}")
    return 0


def cmd_config_list(client: ControllerClient, args) -> int:
    configs = client.get("/api/configs")["configs"]
    rows = [
        {"program_id": c["program_id"], "versions": ", ".join(str(v["version"]) for v in c["versions"])}
        for c in configs
    ]
    _emit(args, rows, ["program_id", "versions"])
    return 0


def cmd_probe_add(client: ControllerClient, args) -> int:
    desc = client.post("/api/probes", {"probe_id": args.probe_id, "host_label": args.host_label})
    _emit(args, [_flatten_probe(desc)], ["probe_id", "lifecycle", "program", "packets", "events"])
    return 0


def cmd_probe_install(client: ControllerClient, args) -> int:
    payload = {
        "program_id": args.program,
        "attach": {"mode": args.attach_mode, "source": args.attach},
    }
    if args.version is not None:
        payload["version"] = args.version
    desc = client.post(f"/api/probes/{args.probe_id}/install", payload)
    _emit(args, [_flatten_probe(desc)], ["probe_id", "lifecycle", "program", "packets", "events"])
    return 0


def cmd_probe_simple(command: str):
    def run(client: ControllerClient, args) -> int:
        if command == "remove":
            client.delete(f"/api/probes/{args.probe_id}")
            print(f"removed {args.probe_id}")
            return 0
        desc = client.post(f"/api/probes/{args.probe_id}/{command}")
        _emit(args, [_flatten_probe(desc)], ["probe_id", "lifecycle", "program", "packets", "events"])
        return 0

    return run


def cmd_probe_list(client: ControllerClient, args) -> int:
    probes = client.get("/api/probes")["probes"]
    _emit(args, [_flatten_probe(p) for p in probes], ["probe_id", "lifecycle", "program", "packets", "events"])
    return 0


def cmd_events_query(client: ControllerClient, args) -> int:
    path = f"/api/events?prefix={args.prefix}&since={args.since}&limit={args.limit}"
    events = client.get(path)["events"]
    if args.format == "json":
        print(json.dumps(events, indent=2))
    else:
        for e in events:
            print(f"{e['offset']} {e['topic']} {e['payload']}")
    return 0


def cmd_events_tail(client: ControllerClient, args) -> int:
    try:
        for record in client.stream(f"/api/events/stream?prefix={args.prefix}"):
            print(f"{record['offset']} {record['topic']} {record['payload']}", flush=True)
    except KeyboardInterrupt:
        pass
    return 0


def _build_trace_spec(args):
    if args.scenario == "synflood":
        return SynFloodSpec(
            attacker_ip=args.attacker_ip,
            victim_ip=args.victim_ip,
            victim_port=args.victim_port,
            count=args.count,
            inter_arrival_us=args.inter_arrival_us,
            seed=args.seed,
        )
    if args.scenario == "portscan":
        return PortScanSpec(
            scanner_ip=args.attacker_ip,
            victim_ip=args.victim_ip,
            port_lo=args.port_lo,
            port_hi=args.port_hi,
            inter_arrival_us=args.inter_arrival_us,
            seed=args.seed,
        )
    return BenignSpec(
        flow_count=args.flows,
        packets_per_flow=args.packets_per_flow,
        inter_arrival_us=args.inter_arrival_us,
        seed=args.seed,
    )


def cmd_trace_synth(client: ControllerClient, args) -> int:
    packets = synthesize(_build_trace_spec(args))
    write_pcap(args.output, packets)
    print(f"wrote {len(packets)} packets to {args.output}")
    return 0


def cmd_scenario_run(client_or_none, args) -> int:
    """End to end: synth trace, upload program, run a probe, print alerts."""
    scenario = args.scenario
    owned_controller = None
    if args.controller:
        client = ControllerClient(args.controller)
    else:
        # Self-hosted run: ephemeral controller on free ports, temp data dir.
        from .controller.server import Controller

        tmp = tempfile.mkdtemp(prefix="flowsentry-scenario-")
        owned_controller = Controller(data_dir=tmp, http_port=0, bus_port=0)
        owned_controller.start()
        client = ControllerClient(owned_controller.http_url)

    try:
        if scenario == "synflood":
            spec = SynFloodSpec(count=6, seed=args.seed)
        else:
            spec = PortScanSpec(port_lo=80, port_hi=99, seed=args.seed)
        fd, trace_path = tempfile.mkstemp(suffix=".pcap", prefix=f"flowsentry-{scenario}-")
        os.close(fd)
        write_pcap(trace_path, synthesize(spec))

        uploaded = client.post_text("/api/configs", builtin_program_text(scenario))
        probe_id = args.probe_id
        client.post("/api/probes", {"probe_id": probe_id, "host_label": "scenario"})
        client.post(
            f"/api/probes/{probe_id}/install",
            {
                "program_id": uploaded["program_id"],
                "version": uploaded["version"],
                "attach": {"mode": "direct", "source": f"pcap:{trace_path}"},
            },
        )
        client.post(f"/api/probes/{probe_id}/start")

        eof_prefix = f"probe/{probe_id}/log/eof"
        deadline = time.time() + args.timeout
        while time.time() < deadline:
            if client.get(f"/api/events?prefix={eof_prefix}&since=0&limit=1")["events"]:
                break
            time.sleep(0.1)
        else:
            print("scenario timed out waiting for the probe to finish", file=sys.stderr)
            return 1

        alerts = client.get(f"/api/events?prefix=probe/{probe_id}/alert&since=0&limit=100")["events"]
        for alert in alerts:
            print(f"ALERT {alert['topic']} {alert['payload']}")
        print(f"scenario {scenario}: {len(alerts)} alert(s)")

        try:
            client.post(f"/api/probes/{probe_id}/stop")
        except ApiError:
            pass  # already stopped after eof
        client.delete(f"/api/probes/{probe_id}")
        os.unlink(trace_path)
        return 0
    finally:
        if owned_controller is not None:
            owned_controller.stop()


# -- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowsentry",
        description="Operate monitoring probes through the controller API.",
    )
    parser.add_argument(
        "--controller",
        default=os.environ.get(ENV_CONTROLLER, DEFAULT_CONTROLLER),
        help=f"controller base URL (env {ENV_CONTROLLER})",
    )
    parser.add_argument("--format", choices=("table", "json"), default="table")
    sub = parser.add_subparsers(dest="command", required=True)

    config = sub.add_parser("config", help="manage monitoring programs").add_subparsers(
        dest="subcommand", required=True
    )
    upload = config.add_parser("upload")
    upload.add_argument("file")
    upload.set_defaults(func=cmd_config_upload)
    config.add_parser("list").set_defaults(func=cmd_config_list)

    probe = sub.add_parser("probe", help="manage probe lifecycles").add_subparsers(
        dest="subcommand", required=True
    )
    add = probe.add_parser("add")
    add.add_argument("probe_id")
    add.add_argument("--host-label", default="")
    add.set_defaults(func=cmd_probe_add)
    install = probe.add_parser("install")
    install.add_argument("probe_id")
    install.add_argument("--program", required=True)
    install.add_argument("--version", type=int, default=None)
    install.add_argument("--attach-mode", choices=("direct", "mirrored"), default="direct")
    install.add_argument("--attach", required=True, help="pcap:<path> or tap:<host>:<port>")
    install.set_defaults(func=cmd_probe_install)
    for name in ("start", "stop", "remove"):
        p = probe.add_parser(name)
        p.add_argument("probe_id")
        p.set_defaults(func=cmd_probe_simple(name))
    probe.add_parser("list").set_defaults(func=cmd_probe_list)

    events = sub.add_parser("events", help="query or follow the event log").add_subparsers(
        dest="subcommand", required=True
    )
    query = events.add_parser("query")
    query.add_argument("--prefix", default="")
    query.add_argument("--since", type=int, default=0)
    query.add_argument("--limit", type=int, default=100)
    query.set_defaults(func=cmd_events_query)
    tail = events.add_parser("tail")
    tail.add_argument("--prefix", default="")
    tail.set_defaults(func=cmd_events_tail)

    trace = sub.add_parser("trace", help="synthesize traffic captures").add_subparsers(
        dest="subcommand", required=True
    )
    synth = trace.add_parser("synth")
    synth.add_argument("scenario", choices=("synflood", "portscan", "benign"))
    synth.add_argument("-o", "--output", required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--inter-arrival-us", type=int, default=1000)
    synth.add_argument("--attacker-ip", default="10.0.0.1")
    synth.add_argument("--victim-ip", default="10.0.0.100")
    synth.add_argument("--victim-port", type=int, default=80)
    synth.add_argument("--count", type=int, default=100)
    synth.add_argument("--port-lo", type=int, default=80)
    synth.add_argument("--port-hi", type=int, default=99)
    synth.add_argument("--flows", type=int, default=10)
    synth.add_argument("--packets-per-flow", type=int, default=8)
    synth.set_defaults(func=cmd_trace_synth)

    scenario = sub.add_parser("scenario", help="run a packaged end-to-end scenario").add_subparsers(
        dest="subcommand", required=True
    )
    run = scenario.add_parser("run")
    run.add_argument("scenario", choices=BUILTIN_PROGRAMS)
    run.add_argument("--probe-id", default="p1")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--timeout", type=float, default=30.0)
    run.add_argument(
        "--use-controller",
        dest="controller_override",
        action="store_true",
        help="run against --controller instead of a self-hosted instance",
    )
    run.set_defaults(func=cmd_scenario_run, scenario_cmd=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if getattr(args, "scenario_cmd", False) and not args.controller_override:
        args.controller = None  # self-host
        return cmd_scenario_run(None, args)

    client = ControllerClient(args.controller)
    try:
        return args.func(client, args)
    except ApiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
