"""Acceptance criteria, one test per criterion, at the stated tolerances.

The terminal summary (see conftest) prints one PASS/FAIL line per test here.
"""

import json
import os
import random
import signal
import subprocess
import sys
import time

import pytest

from flowsentry.bus import Broker, EventPublisher, EventSubscriber, topic_matches
from flowsentry.catalog import builtin_program_text
from flowsentry.compiler import (
    BadMagicError,
    ChecksumMismatchError,
    TruncatedArtifactError,
    compile_ir,
    decompile,
    parse_dsl,
)
from flowsentry.controller.lifecycle import COMMAND_EDGES
from flowsentry.controller.server import Controller
from flowsentry.packets.mirror import TapServer
from flowsentry.packets.pcap import write_pcap
from flowsentry.packets.synth import BenignSpec, PortScanSpec, SynFloodSpec, synthesize
from flowsentry.xfsm.engine import Engine
from flowsentry.xfsm.metrics import MetricStore
from flowsentry.xfsm.model import (
    METRIC_EXACT,
    Comparison,
    EventDef,
    FeatureDef,
    FeatureRef,
    FlagIs,
    IncrementMetric,
    IntConst,
    MetricDef,
    ProtoIs,
    Publish,
    Transition,
    TrueCond,
    XfsmProgram,
)

from helpers import synflood_program
from program_gen import random_program, random_trace
from reference_interpreter import ReferenceInterpreter

# ---------------------------------------------------------------------------
# Criterion: 500 random programs x random traces, engine == naive reference,
# 100% of cases, suite under 60 seconds.
# ---------------------------------------------------------------------------


def test_oracle_equivalence_500_programs():
    started = time.monotonic()
    for case in range(500):
        rng = random.Random(100_000 + case)
        program = random_program(rng)
        trace = random_trace(rng, 1000)

        engine = Engine(program)
        got = [
            (e.severity, e.label, e.payload, e.ts_sec, e.ts_usec)
            for pkt in trace
            for e in engine.step(pkt)
        ]

        ref = ReferenceInterpreter(program)
        want = [
            (e.severity, e.label, e.payload, e.ts_sec, e.ts_usec) for e in ref.run(trace)
        ]

        assert got == want, f"event mismatch in case {case}"
        assert {k: v.current_state for k, v in engine.flow_table.items()} == ref.flow_states, (
            f"flow-table mismatch in case {case}"
        )
        assert engine.store.dump_exact() == ref.counter_snapshot(), (
            f"metric mismatch in case {case}"
        )
    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"oracle equivalence took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# Criterion: SYN flood, threshold 5: count=6 -> exactly one alert on packet 6
# (1-based); count=4 -> zero alerts. Exact, no tolerance.
# ---------------------------------------------------------------------------


def test_synflood_scenario_exact():
    program, report = parse_dsl(builtin_program_text("synflood"))
    assert report.ok

    engine = Engine(program)
    hits = [
        (index, e)
        for index, pkt in enumerate(synthesize(SynFloodSpec(count=6, seed=0)), start=1)
        for e in engine.step(pkt)
    ]
    assert len(hits) == 1
    assert hits[0][0] == 6
    assert hits[0][1].severity == "alert"
    assert hits[0][1].label == "synflood"

    engine = Engine(program)
    hits = [e for pkt in synthesize(SynFloodSpec(count=4, seed=0)) for e in engine.step(pkt)]
    assert hits == []


# ---------------------------------------------------------------------------
# Criterion: port scan, distinct-port counter with threshold 10: ports
# 80..=99 -> exactly one alert; benign trace -> zero alerts.
# ---------------------------------------------------------------------------


def test_portscan_scenario_exact():
    program, report = parse_dsl(builtin_program_text("portscan"))
    assert report.ok

    engine = Engine(program)
    alerts = [
        e
        for pkt in synthesize(PortScanSpec(port_lo=80, port_hi=99, seed=0))
        for e in engine.step(pkt)
        if e.severity == "alert"
    ]
    assert len(alerts) == 1

    engine = Engine(program)
    alerts = [
        e
        for pkt in synthesize(BenignSpec(flow_count=10, packets_per_flow=8, seed=0))
        for e in engine.step(pkt)
        if e.severity == "alert"
    ]
    assert alerts == []


# ---------------------------------------------------------------------------
# Criterion: count-min soundness over 10 000 insertions, width 1024 depth 4:
# zero underestimates (hard), and >= 99% of point queries overestimate by at
# most 2 N / width, across 10 seeds.
# ---------------------------------------------------------------------------


def test_count_min_soundness_ten_seeds():
    width, depth, n = 1024, 4, 10_000
    bound = 2 * n / width
    for seed in range(10):
        rng = random.Random(seed)
        store = MetricStore(
            (MetricDef("s", "count_min_sketch", sketch_width=width, sketch_depth=depth),),
            hash_seed=0xACCE5 + seed,
        )
        truth: dict[bytes, int] = {}
        keys = [f"flow-{seed}-{i}".encode() for i in range(3000)]
        for _ in range(n):
            key = rng.choice(keys)
            store.update("s", key, 1)
            truth[key] = truth.get(key, 0) + 1

        overshoot_ok = 0
        total = 0
        for key, true_count in truth.items():
            estimate = store.query("s", key)
            assert estimate >= true_count, "count-min underestimated"
            total += 1
            if estimate - true_count <= bound:
                overshoot_ok += 1
        assert overshoot_ok / total >= 0.99, f"seed {seed}: only {overshoot_ok}/{total} within bound"


# ---------------------------------------------------------------------------
# Criterion: identical artifact and trace under direct attach and under
# mirror(n_taps=2) produce byte-identical published event sequences.
# ---------------------------------------------------------------------------


def _chatty_program() -> XfsmProgram:
    # Publishes on every packet so the comparison covers a long stream.
    return XfsmProgram(
        program_id="chatty",
        version=1,
        flow_key_spec=("src_ip",),
        event_defs=(EventDef("tcp_syn", (ProtoIs(6), FlagIs("SYN", True), FlagIs("ACK", False))),),
        metric_defs=(MetricDef("n", METRIC_EXACT),),
        feature_defs=(FeatureDef("seen", "n"),),
        states=("SAFE", "LOUD"),
        initial_state="SAFE",
        transitions=(
            Transition(
                "SAFE",
                "tcp_syn",
                Comparison(FeatureRef("seen"), ">=", IntConst(5)),
                (Publish("alert", "burst", "k={flow_key} n={seen} t={ts}"),),
                "LOUD",
            ),
            Transition(
                "SAFE",
                "tcp_syn",
                TrueCond(),
                (IncrementMetric("n", 1), Publish("info", "tick", "k={flow_key} n={seen}")),
                "SAFE",
            ),
            Transition(
                "LOUD",
                "tcp_syn",
                TrueCond(),
                (IncrementMetric("n", 1), Publish("log", "after", "n={seen} t={ts}")),
                "LOUD",
            ),
        ),
    )


def _run_probe_once(tmp_path, artifact_path, source, mode, tag):
    broker = Broker(port=0, ping_interval=60.0)
    broker.start()
    host, port = broker.address
    sub = EventSubscriber(f"{host}:{port}", f"acc-{tag}", prefixes=("",))
    time.sleep(0.05)

    cfg_path = tmp_path / f"probe-{tag}.cfg"
    cfg_path.write_text(
        "probe_id=px\n"
        f"attach_mode={mode}\n"
        f"attach_source={source}\n"
        f"bus_address={host}:{port}\n"
        f"artifact_path={artifact_path}\n"
        "replay_pacing=as_fast_as_possible\n"
    )
    env = dict(os.environ, FLOWSENTRY_BUS_TIMEOUT="5")
    proc = subprocess.Popen(
        [sys.executable, "-m", "flowsentry.probe", "--config", str(cfg_path)],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        env=env,
    )
    events = []
    deadline = time.time() + 20
    try:
        while time.time() < deadline:
            ev = sub.get(timeout=0.5)
            if ev is None:
                continue
            events.append((ev.topic, ev.seq, ev.ts_micros, ev.payload))
            if ev.topic.endswith("/log/eof"):
                break
        assert proc.wait(timeout=10) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
        sub.close()
        broker.stop()
    return events


def test_direct_vs_mirrored_equivalence(tmp_path):
    artifact = compile_ir(_chatty_program())
    artifact_path = tmp_path / "chatty.bin"
    artifact_path.write_bytes(artifact.data)

    packets = synthesize(SynFloodSpec(count=30, seed=5))
    trace_path = tmp_path / "trace.pcap"
    write_pcap(trace_path, packets)

    direct = _run_probe_once(tmp_path, artifact_path, f"pcap:{trace_path}", "direct", "direct")
    assert len(direct) > 30  # one tick per packet plus alert and eof

    server = TapServer(packets, n_taps=2)
    tap_a = _run_probe_once(tmp_path, artifact_path, server.endpoint, "mirrored", "tap-a")
    tap_b = _run_probe_once(tmp_path, artifact_path, server.endpoint, "mirrored", "tap-b")
    server.wait(5)

    assert direct == tap_a == tap_b


# ---------------------------------------------------------------------------
# Criterion: bus properties. 3 publishers x 100 events -> exactly 300 at a
# subscribe-all subscriber with per-publisher FIFO and no gaps; a table of
# at least 20 prefix/topic pairs matches the byte-prefix predicate exactly.
# ---------------------------------------------------------------------------


def test_bus_fanin_and_prefix_table():
    broker = Broker(port=0, ping_interval=60.0)
    broker.start()
    try:
        host, port = broker.address
        sub = EventSubscriber(f"{host}:{port}", "audit", prefixes=("",))
        time.sleep(0.05)

        import threading

        def blast(name):
            pub = EventPublisher(f"{host}:{port}", name)
            for i in range(100):
                pub.publish(f"probe/{name}/info/tick", i, f"{name}:{i}")
            pub.close()

        workers = [threading.Thread(target=blast, args=(f"p{i}",)) for i in range(3)]
        for w in workers:
            w.start()
        for w in workers:
            w.join()

        received = []
        for _ in range(300):
            ev = sub.get(timeout=5)
            assert ev is not None, "fewer than 300 events arrived"
            received.append(ev)
        assert sub.get(timeout=0.3) is None, "more than 300 events arrived"

        per_pub: dict[str, list[int]] = {}
        for ev in received:
            per_pub.setdefault(ev.topic.split("/")[1], []).append(ev.seq)
        assert set(per_pub) == {"p0", "p1", "p2"}
        for name, seqs in per_pub.items():
            assert seqs == list(range(1, 101)), f"{name} order/gap violation"
        sub.close()
    finally:
        broker.stop()

    table = [
        ("", "probe/p1/alert/synflood", True),
        ("", "x", True),
        ("probe/p1/alert", "probe/p1/alert/synflood", True),
        ("probe/p1/alert", "probe/p1/log/heartbeat", False),
        ("probe/p1", "probe/p10/alert/x", True),
        ("probe/p1/", "probe/p10/alert/x", False),
        ("probe/p2", "probe/p1/alert/x", False),
        ("probe/p1/alert/synflood", "probe/p1/alert/synflood", True),
        ("probe/p1/alert/synflood/x", "probe/p1/alert/synflood", False),
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
        ("probe/p1/i", "probe/p1/info/x", True),
        ("probe/p1/x", "probe/p1/info/x", False),
    ]
    assert len(table) >= 20
    for prefix, topic, expected in table:
        assert topic_matches(prefix, topic) is expected, (prefix, topic)
        assert topic.startswith(prefix) is expected, (prefix, topic)


# ---------------------------------------------------------------------------
# Criterion: compile round trip. decompile(compile_ir(p)) re-serializes byte
# identically and behaves identically on 100 random traces; flipped byte,
# truncation and bad magic raise their distinct errors.
# ---------------------------------------------------------------------------


def test_compile_round_trip_and_corruption():
    rng = random.Random(0xC0FFEE)
    program = synflood_program()
    artifact = compile_ir(program)
    reloaded = decompile(artifact.data)
    assert compile_ir(reloaded).data == artifact.data

    for case in range(100):
        trace = random_trace(rng, 120)
        a, b = Engine(program), Engine(reloaded)
        events_a = [ev for pkt in trace for ev in a.step(pkt)]
        events_b = [ev for pkt in trace for ev in b.step(pkt)]
        assert events_a == events_b, f"behavior diverged on trace {case}"
        assert a.store.dump_exact() == b.store.dump_exact()

    flipped = bytearray(artifact.data)
    flipped[11] ^= 0x40  # hash-seed byte: framing intact, payload corrupt
    with pytest.raises(ChecksumMismatchError):
        decompile(bytes(flipped))

    with pytest.raises(TruncatedArtifactError):
        decompile(artifact.data[:-9])

    with pytest.raises(BadMagicError):
        decompile(b"XXXX" + artifact.data[4:])


# ---------------------------------------------------------------------------
# Criterion: lifecycle soundness. Exhaustive (state, command) driver matches
# the declared edge set exactly; kill -9 on the controller preserves the
# registry and the event log.
# ---------------------------------------------------------------------------


def _api(base_url):
    import urllib.error
    import urllib.request

    def call(method, path, body=None, as_text=False):
        data = None
        headers = {}
        if body is not None:
            data = body.encode() if as_text else json.dumps(body).encode()
            headers["Content-Type"] = "application/xml" if as_text else "application/json"
        req = urllib.request.Request(base_url + path, data=data, method=method, headers=headers)
        try:
            with urllib.request.urlopen(req, timeout=10) as resp:
                return resp.status, json.loads(resp.read() or b"{}")
        except urllib.error.HTTPError as exc:
            return exc.code, json.loads(exc.read() or b"{}")

    return call


def test_lifecycle_soundness_exhaustive(tmp_path):
    # The edge set under test, stated independently of the implementation.
    legal = {
        ("registered", "install"),
        ("installed", "start"),
        ("stopped", "start"),
        ("running", "stop"),
        ("installed", "remove"),
        ("running", "remove"),
        ("stopped", "remove"),
        ("failed", "remove"),
    }
    states = ("registered", "installed", "running", "stopped", "failed")
    commands = ("install", "start", "stop", "remove")
    assert {(s, c) for c, ss in COMMAND_EDGES.items() for s in ss} == legal

    controller = Controller(data_dir=tmp_path / "data", http_port=0, bus_port=0)
    controller.start()
    call = _api(controller.http_url)
    call("POST", "/api/configs", builtin_program_text("synflood"), as_text=True)
    trace = tmp_path / "long.pcap"
    write_pcap(trace, synthesize(SynFloodSpec(count=100_000, seed=3)))
    install_payload = {
        "program_id": "synflood",
        "version": 1,
        "attach": {"mode": "direct", "source": f"pcap:{trace}"},
    }

    def drive_to(name, state):
        call("POST", "/api/probes", {"probe_id": name})
        if state == "registered":
            return
        assert call("POST", f"/api/probes/{name}/install", install_payload)[0] == 200
        if state == "installed":
            return
        assert call("POST", f"/api/probes/{name}/start")[0] == 200
        if state == "running":
            return
        if state == "stopped":
            assert call("POST", f"/api/probes/{name}/stop")[0] == 200
            return
        _, desc = call("GET", f"/api/probes/{name}")
        os.kill(desc["pid"], signal.SIGKILL)
        deadline = time.time() + 10
        while time.time() < deadline:
            _, desc = call("GET", f"/api/probes/{name}")
            if desc["lifecycle"] == "failed":
                return
            time.sleep(0.1)
        raise AssertionError("probe never failed")

    try:
        n = 0
        for state in states:
            for command in commands:
                n += 1
                name = f"x{n}"
                drive_to(name, state)
                if command == "remove":
                    status, body = call("DELETE", f"/api/probes/{name}")
                else:
                    status, body = call("POST", f"/api/probes/{name}/{command}", install_payload if command == "install" else {})
                if (state, command) in legal:
                    assert status == 200, (state, command, body)
                else:
                    assert status == 409, (state, command, body)
                    assert "illegal transition" in body["error"]
                    _, desc = call("GET", f"/api/probes/{name}")
                    assert desc["lifecycle"] == state
                # Park any still-running probe.
                status, desc = call("GET", f"/api/probes/{name}")
                if status == 200 and desc.get("lifecycle") == "running":
                    call("POST", f"/api/probes/{name}/stop")
    finally:
        controller.stop()


def test_controller_kill_dash_nine_crash_safety(tmp_path):
    data_dir = tmp_path / "cdata"

    def spawn():
        proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "flowsentry.controller",
                "--data-dir",
                str(data_dir),
                "--http-port",
                "0",
                "--bus-port",
                "0",
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )
        line = proc.stdout.readline().strip()
        parts = dict(kv.split("=") for kv in line.split()[2:])
        return proc, parts["http"], parts["bus"]

    proc, http_addr, bus_addr = spawn()
    try:
        call = _api(f"http://{http_addr}")
        status, _ = call("POST", "/api/configs", builtin_program_text("synflood"), as_text=True)
        assert status == 201
        assert call("POST", "/api/probes", {"probe_id": "p1", "host_label": "rack-7"})[0] == 201

        pub = EventPublisher(bus_addr, "p1")
        for i in range(5):
            pub.publish("probe/p1/info/tick", i, f"n={i}")
        pub.close()
        deadline = time.time() + 10
        while time.time() < deadline:
            _, body = call("GET", "/api/events?prefix=&since=0&limit=10")
            if len(body["events"]) == 5:
                break
            time.sleep(0.1)
        assert len(body["events"]) == 5
    finally:
        proc.kill()  # SIGKILL: no cleanup, no flush beyond what is contractual
        proc.wait()

    proc2, http_addr2, _ = spawn()
    try:
        call = _api(f"http://{http_addr2}")
        _, configs = call("GET", "/api/configs")
        assert [c["program_id"] for c in configs["configs"]] == ["synflood"]
        _, probes = call("GET", "/api/probes")
        assert [(p["probe_id"], p["host_label"]) for p in probes["probes"]] == [("p1", "rack-7")]
        _, events = call("GET", "/api/events?prefix=&since=0&limit=10")
        assert [e["payload"] for e in events["events"]] == [f"n={i}" for i in range(5)]
        assert [e["offset"] for e in events["events"]] == list(range(1, 6))
    finally:
        proc2.kill()
        proc2.wait()


# ---------------------------------------------------------------------------
# Criterion: `scenario run synflood` completes in under 10 seconds with exit
# code 0 and exactly one alert line.
# ---------------------------------------------------------------------------


def test_cli_scenario_synflood_under_ten_seconds():
    started = time.monotonic()
    proc = subprocess.run(
        [sys.executable, "-m", "flowsentry.cli", "scenario", "run", "synflood"],
        capture_output=True,
        text=True,
        timeout=60,
    )
    elapsed = time.monotonic() - started
    assert proc.returncode == 0, proc.stderr
    alert_lines = [l for l in proc.stdout.splitlines() if l.startswith("ALERT ")]
    assert len(alert_lines) == 1, proc.stdout
    assert "probe/p1/alert/synflood" in alert_lines[0]
    assert elapsed < 10.0, f"scenario took {elapsed:.1f}s"
