"""Deterministic single-threaded execution of a monitoring program over a
packet stream.

Per-packet processing order:

1. derive the event (first matching event definition, else no-op);
2. extract the flow key, materializing unseen flows in the initial state;
3. lazily roll tumbling windows against the packet's capture time;
4. fire the first transition whose (state, event, guard) all match, running
   its actions in order; later actions see earlier metric updates;
5. otherwise leave everything untouched.

Packets that derive no event are total no-ops, including window rolls.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..packets.model import PacketRecord, encode_fields, format_ts, render_fields
from .metrics import MetricStore
from .model import (
    Condition,
    IncrementMetric,
    ProgramIntegrityError,
    Publish,
    ResetMetric,
    XfsmProgram,
    condition_feature_names,
    eval_condition,
)

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass
class FlowState:
    flow_key: bytes
    current_state: str


@dataclass(frozen=True)
class EngineEvent:
    """An event emitted by a publish action, before bus framing."""

    severity: str
    label: str
    payload: str
    ts_sec: int
    ts_usec: int

    @property
    def ts_micros(self) -> int:
        return self.ts_sec * 1_000_000 + self.ts_usec


FlowTable = dict[bytes, FlowState]


def derive_event(program: XfsmProgram, pkt: PacketRecord) -> str | None:
    """Name of the first event definition matching the packet, if any."""
    for ev in program.event_defs:
        if ev.matches(pkt):
            return ev.name
    return None


def metric_key(program: XfsmProgram, metric_name: str, pkt: PacketRecord) -> bytes:
    mdef = program.metric(metric_name)
    fields = mdef.key_fields if mdef.key_fields is not None else program.flow_key_spec
    return encode_fields(pkt, fields)


def _feature_values(
    program: XfsmProgram, store: MetricStore, pkt: PacketRecord, names: set[str]
) -> dict[str, int]:
    values: dict[str, int] = {}
    for name in names:
        fdef = program.feature(name)
        raw = store.query(fdef.metric, metric_key(program, fdef.metric, pkt))
        values[name] = fdef.value(raw)
    return values


def _guard_holds(
    program: XfsmProgram, store: MetricStore, pkt: PacketRecord, cond: Condition
) -> bool:
    needed = condition_feature_names(cond)
    return eval_condition(cond, _feature_values(program, store, pkt, needed))


def _render_payload(
    program: XfsmProgram, store: MetricStore, pkt: PacketRecord, template: str
) -> str:
    feature_names = {f.name for f in program.feature_defs}

    def substitute(match: re.Match[str]) -> str:
        name = match.group(1)
        if name == "flow_key":
            return render_fields(pkt, program.flow_key_spec)
        if name == "ts":
            return format_ts(pkt.ts_sec, pkt.ts_usec)
        if name in feature_names:
            fdef = program.feature(name)
            raw = store.query(fdef.metric, metric_key(program, fdef.metric, pkt))
            return str(fdef.value(raw))
        raise ProgramIntegrityError(f"unknown payload placeholder {name!r}")

    return _PLACEHOLDER.sub(substitute, template)


def step(
    program: XfsmProgram,
    flow_table: FlowTable,
    store: MetricStore,
    pkt: PacketRecord,
) -> list[EngineEvent]:
    """Process one packet, returning any published events in action order."""
    event_name = derive_event(program, pkt)
    if event_name is None:
        return []

    key = encode_fields(pkt, program.flow_key_spec)
    flow = flow_table.get(key)
    if flow is None:
        flow = FlowState(flow_key=key, current_state=program.initial_state)
        flow_table[key] = flow

    store.roll_windows(pkt.ts_micros)

    emitted: list[EngineEvent] = []
    for t in program.transitions:
        if t.from_state != flow.current_state or t.event != event_name:
            continue
        if not _guard_holds(program, store, pkt, t.condition):
            continue
        for action in t.actions:
            if isinstance(action, IncrementMetric):
                store.update(action.metric, metric_key(program, action.metric, pkt), action.amount)
            elif isinstance(action, ResetMetric):
                store.reset(action.metric)
            elif isinstance(action, Publish):
                emitted.append(
                    EngineEvent(
                        severity=action.severity,
                        label=action.label,
                        payload=_render_payload(program, store, pkt, action.template),
                        ts_sec=pkt.ts_sec,
                        ts_usec=pkt.ts_usec,
                    )
                )
            else:
                raise ProgramIntegrityError(f"unknown action {action!r}")
        flow.current_state = t.to_state
        break

    return emitted


class Engine:
    """Convenience wrapper owning the flow table and metric store."""

    def __init__(self, program: XfsmProgram) -> None:
        self.program = program
        self.flow_table: FlowTable = {}
        self.store = MetricStore(program.metric_defs, program.hash_seed)

    def step(self, pkt: PacketRecord) -> list[EngineEvent]:
        return step(self.program, self.flow_table, self.store, pkt)
