"""Portable binary form of a compiled monitoring program.

Layout (all integers little-endian, strings u16-length-prefixed UTF-8):

    magic            4 bytes  b"DSMC"
    format version   u16
    header           program_id str, program version u32, hash seed u64,
                     flow key field count u8 + field codes u8 each
    five sections    events, metrics, features, states, transitions,
                     each u32 byte-length prefixed
    checksum         u32 CRC-32 over everything after the magic

Name references inside sections are resolved to integer indices, so the
bytes carry no host-dependent values and reload identically anywhere.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass
from fractions import Fraction

from ..xfsm.model import (
    CMP_OPS,
    FIELD_SELECTORS,
    METRIC_EXACT,
    METRIC_SKETCH,
    SEVERITIES,
    BoolAnd,
    BoolNot,
    BoolOr,
    Comparison,
    Condition,
    EventDef,
    FeatureDef,
    FeatureRef,
    FlagIs,
    IncrementMetric,
    IntConst,
    MetricDef,
    Operand,
    PortEquals,
    PortInRange,
    ProtoIs,
    Publish,
    ResetMetric,
    Transition,
    TrueCond,
    XfsmProgram,
)
from .dsl import validate_program

MAGIC = b"DSMC"
FORMAT_VERSION = 1

_FLAG_ORDER = ("SYN", "ACK", "FIN", "RST")


class ArtifactError(Exception):
    """Base class for artifact load failures."""


class BadMagicError(ArtifactError):
    pass


class UnsupportedVersionError(ArtifactError):
    pass


class ChecksumMismatchError(ArtifactError):
    pass


class TruncatedArtifactError(ArtifactError):
    pass


class MalformedArtifactError(ArtifactError):
    """Structurally complete but semantically impossible content."""


class InvalidProgramError(ValueError):
    """compile_ir was handed a program that fails validation."""

    def __init__(self, report):
        super().__init__("; ".join(str(i) for i in report.errors))
        self.report = report


@dataclass(frozen=True)
class CompiledArtifact:
    data: bytes
    program_id: str
    version: int
    checksum: int


class _Writer:
    def __init__(self) -> None:
        self.buf = io.BytesIO()

    def u8(self, v: int) -> None:
        self.buf.write(struct.pack("<B", v))

    def u16(self, v: int) -> None:
        self.buf.write(struct.pack("<H", v))

    def u32(self, v: int) -> None:
        self.buf.write(struct.pack("<I", v))

    def u64(self, v: int) -> None:
        self.buf.write(struct.pack("<Q", v))

    def i64(self, v: int) -> None:
        self.buf.write(struct.pack("<q", v))

    def string(self, s: str) -> None:
        raw = s.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError("string too long for u16 length prefix")
        self.u16(len(raw))
        self.buf.write(raw)

    def raw(self, data: bytes) -> None:
        self.buf.write(data)

    def getvalue(self) -> bytes:
        return self.buf.getvalue()


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedArtifactError(
                f"needed {n} bytes at offset {self.pos}, only {len(self.data) - self.pos} left"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self.take(8))[0]

    def string(self) -> str:
        n = self.u16()
        return self.take(n).decode("utf-8")

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)


def _field_code(name: str) -> int:
    return FIELD_SELECTORS.index(name)


def _encode_predicates(w: _Writer, ev: EventDef) -> None:
    w.string(ev.name)
    w.u16(len(ev.predicates))
    for p in ev.predicates:
        if isinstance(p, ProtoIs):
            w.u8(1)
            w.u8(p.proto)
        elif isinstance(p, FlagIs):
            w.u8(2)
            w.u8(_FLAG_ORDER.index(p.flag))
            w.u8(1 if p.value else 0)
        elif isinstance(p, PortEquals):
            w.u8(3)
            w.u8(0 if p.side == "src" else 1)
            w.u16(p.port)
        elif isinstance(p, PortInRange):
            w.u8(4)
            w.u8(0 if p.side == "src" else 1)
            w.u16(p.lo)
            w.u16(p.hi)
        else:
            raise ValueError(f"unknown predicate {p!r}")


def _decode_event(r: _Reader) -> EventDef:
    name = r.string()
    preds = []
    for _ in range(r.u16()):
        kind = r.u8()
        if kind == 1:
            preds.append(ProtoIs(r.u8()))
        elif kind == 2:
            flag_idx = r.u8()
            if flag_idx >= len(_FLAG_ORDER):
                raise MalformedArtifactError(f"bad flag index {flag_idx}")
            preds.append(FlagIs(_FLAG_ORDER[flag_idx], r.u8() == 1))
        elif kind == 3:
            preds.append(PortEquals("src" if r.u8() == 0 else "dst", r.u16()))
        elif kind == 4:
            side = "src" if r.u8() == 0 else "dst"
            preds.append(PortInRange(side, r.u16(), r.u16()))
        else:
            raise MalformedArtifactError(f"bad predicate kind {kind}")
    return EventDef(name, tuple(preds))


def _encode_condition(w: _Writer, cond: Condition, feature_index: dict[str, int]) -> None:
    if isinstance(cond, TrueCond):
        w.u8(0)
    elif isinstance(cond, Comparison):
        w.u8(1)
        w.u8(CMP_OPS.index(cond.op))
        _encode_operand(w, cond.lhs, feature_index)
        _encode_operand(w, cond.rhs, feature_index)
    elif isinstance(cond, BoolAnd):
        w.u8(2)
        w.u16(len(cond.items))
        for item in cond.items:
            _encode_condition(w, item, feature_index)
    elif isinstance(cond, BoolOr):
        w.u8(3)
        w.u16(len(cond.items))
        for item in cond.items:
            _encode_condition(w, item, feature_index)
    elif isinstance(cond, BoolNot):
        w.u8(4)
        _encode_condition(w, cond.item, feature_index)
    else:
        raise ValueError(f"unknown condition node {cond!r}")


def _encode_operand(w: _Writer, op: Operand, feature_index: dict[str, int]) -> None:
    if isinstance(op, IntConst):
        w.u8(0)
        w.i64(op.value)
    else:
        w.u8(1)
        w.u16(feature_index[op.name])


def _decode_condition(r: _Reader, features: list[FeatureDef]) -> Condition:
    kind = r.u8()
    if kind == 0:
        return TrueCond()
    if kind == 1:
        op_idx = r.u8()
        if op_idx >= len(CMP_OPS):
            raise MalformedArtifactError(f"bad comparison op {op_idx}")
        lhs = _decode_operand(r, features)
        rhs = _decode_operand(r, features)
        return Comparison(lhs, CMP_OPS[op_idx], rhs)
    if kind == 2:
        return BoolAnd(tuple(_decode_condition(r, features) for _ in range(r.u16())))
    if kind == 3:
        return BoolOr(tuple(_decode_condition(r, features) for _ in range(r.u16())))
    if kind == 4:
        return BoolNot(_decode_condition(r, features))
    raise MalformedArtifactError(f"bad condition kind {kind}")


def _decode_operand(r: _Reader, features: list[FeatureDef]) -> Operand:
    kind = r.u8()
    if kind == 0:
        return IntConst(r.i64())
    if kind == 1:
        idx = r.u16()
        if idx >= len(features):
            raise MalformedArtifactError(f"bad feature index {idx}")
        return FeatureRef(features[idx].name)
    raise MalformedArtifactError(f"bad operand kind {kind}")


def compile_ir(program: XfsmProgram) -> CompiledArtifact:
    """Serialize a validated program into its portable binary form."""
    report = validate_program(program)
    if not report.ok:
        raise InvalidProgramError(report)

    event_index = {e.name: i for i, e in enumerate(program.event_defs)}
    metric_index = {m.name: i for i, m in enumerate(program.metric_defs)}
    feature_index = {f.name: i for i, f in enumerate(program.feature_defs)}
    state_index = {s: i for i, s in enumerate(program.states)}

    body = _Writer()
    body.u16(FORMAT_VERSION)
    body.string(program.program_id)
    body.u32(program.version)
    body.u64(program.hash_seed & (2**64 - 1))
    body.u8(len(program.flow_key_spec))
    for f in program.flow_key_spec:
        body.u8(_field_code(f))

    def section(fill) -> None:
        w = _Writer()
        fill(w)
        blob = w.getvalue()
        body.u32(len(blob))
        body.raw(blob)

    def fill_events(w: _Writer) -> None:
        w.u16(len(program.event_defs))
        for ev in program.event_defs:
            _encode_predicates(w, ev)

    def fill_metrics(w: _Writer) -> None:
        w.u16(len(program.metric_defs))
        for m in program.metric_defs:
            w.string(m.name)
            w.u8(0 if m.kind == METRIC_EXACT else 1)
            w.u16(m.sketch_width)
            w.u16(m.sketch_depth)
            if m.window is None:
                w.u8(0)
            else:
                w.u8(1)
                w.u64(m.window.numerator)
                w.u64(m.window.denominator)
            if m.key_fields is None:
                w.u8(0)
            else:
                w.u8(len(m.key_fields))
                for f in m.key_fields:
                    w.u8(_field_code(f))

    def fill_features(w: _Writer) -> None:
        w.u16(len(program.feature_defs))
        for f in program.feature_defs:
            w.string(f.name)
            w.u16(metric_index[f.metric])
            w.u64(f.scale.numerator)
            w.u64(f.scale.denominator)
            w.i64(f.offset)

    def fill_states(w: _Writer) -> None:
        w.u16(len(program.states))
        for s in program.states:
            w.string(s)
        w.u16(state_index[program.initial_state])

    def fill_transitions(w: _Writer) -> None:
        w.u16(len(program.transitions))
        for t in program.transitions:
            w.u16(state_index[t.from_state])
            w.u16(event_index[t.event])
            _encode_condition(w, t.condition, feature_index)
            w.u16(len(t.actions))
            for a in t.actions:
                if isinstance(a, IncrementMetric):
                    w.u8(0)
                    w.u16(metric_index[a.metric])
                    w.u32(a.amount)
                elif isinstance(a, ResetMetric):
                    w.u8(1)
                    w.u16(metric_index[a.metric])
                elif isinstance(a, Publish):
                    w.u8(2)
                    w.u8(SEVERITIES.index(a.severity))
                    w.string(a.label)
                    w.string(a.template)
                else:
                    raise ValueError(f"unknown action {a!r}")
            w.u16(state_index[t.to_state])

    for fill in (fill_events, fill_metrics, fill_features, fill_states, fill_transitions):
        section(fill)

    payload = body.getvalue()
    checksum = zlib.crc32(payload) & 0xFFFFFFFF
    data = MAGIC + payload + struct.pack("<I", checksum)
    return CompiledArtifact(data=data, program_id=program.program_id, version=program.version, checksum=checksum)


def decompile(data: bytes) -> XfsmProgram:
    """Reconstruct the program from artifact bytes, verifying integrity.

    Raises BadMagicError, UnsupportedVersionError, TruncatedArtifactError,
    ChecksumMismatchError or MalformedArtifactError, in that precedence.
    """
    if len(data) < 4:
        raise TruncatedArtifactError("shorter than the magic")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")

    # Structure walk distinguishes truncation from in-place corruption.
    walker = _Reader(data[4:])
    version = walker.u16()
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} not supported")
    walker.string()  # program id
    walker.u32()
    walker.u64()
    n_fields = walker.u8()
    walker.take(n_fields)
    for _ in range(5):
        walker.take(walker.u32())
    if len(data[4:]) - walker.pos < 4:
        raise TruncatedArtifactError("missing checksum trailer")
    if len(data[4:]) - walker.pos > 4:
        raise MalformedArtifactError("trailing bytes after checksum")

    payload = data[4:-4]
    stored = struct.unpack("<I", data[-4:])[0]
    actual = zlib.crc32(payload) & 0xFFFFFFFF
    if stored != actual:
        raise ChecksumMismatchError(f"stored 0x{stored:08X}, computed 0x{actual:08X}")

    r = _Reader(payload)
    r.u16()  # format version, already checked
    program_id = r.string()
    prog_version = r.u32()
    hash_seed = r.u64()
    n_fields = r.u8()
    flow_key = []
    for _ in range(n_fields):
        code = r.u8()
        if code >= len(FIELD_SELECTORS):
            raise MalformedArtifactError(f"bad field code {code}")
        flow_key.append(FIELD_SELECTORS[code])

    def open_section() -> _Reader:
        length = r.u32()
        return _Reader(r.take(length))

    sec = open_section()
    events = tuple(_decode_event(sec) for _ in range(sec.u16()))

    sec = open_section()
    metrics = []
    for _ in range(sec.u16()):
        name = sec.string()
        kind_code = sec.u8()
        if kind_code not in (0, 1):
            raise MalformedArtifactError(f"bad metric kind {kind_code}")
        kind = METRIC_EXACT if kind_code == 0 else METRIC_SKETCH
        width = sec.u16()
        depth = sec.u16()
        window = None
        if sec.u8() == 1:
            num = sec.u64()
            den = sec.u64()
            if den == 0:
                raise MalformedArtifactError("window denominator is zero")
            window = Fraction(num, den)
        n_key = sec.u8()
        key_fields = None
        if n_key:
            fields = []
            for _ in range(n_key):
                code = sec.u8()
                if code >= len(FIELD_SELECTORS):
                    raise MalformedArtifactError(f"bad field code {code}")
                fields.append(FIELD_SELECTORS[code])
            key_fields = tuple(fields)
        metrics.append(MetricDef(name, kind, sketch_width=width, sketch_depth=depth, window=window, key_fields=key_fields))
    metrics = tuple(metrics)

    sec = open_section()
    features = []
    for _ in range(sec.u16()):
        name = sec.string()
        metric_idx = sec.u16()
        if metric_idx >= len(metrics):
            raise MalformedArtifactError(f"bad metric index {metric_idx}")
        num = sec.u64()
        den = sec.u64()
        if den == 0:
            raise MalformedArtifactError("scale denominator is zero")
        offset = sec.i64()
        features.append(FeatureDef(name, metrics[metric_idx].name, scale=Fraction(num, den), offset=offset))
    features = tuple(features)

    sec = open_section()
    states = tuple(sec.string() for _ in range(sec.u16()))
    initial_idx = sec.u16()
    if initial_idx >= len(states):
        raise MalformedArtifactError(f"bad initial state index {initial_idx}")
    initial_state = states[initial_idx]

    sec = open_section()
    transitions = []
    for _ in range(sec.u16()):
        from_idx = sec.u16()
        event_idx = sec.u16()
        if from_idx >= len(states) or event_idx >= len(events):
            raise MalformedArtifactError("bad transition reference")
        condition = _decode_condition(sec, list(features))
        actions = []
        for _ in range(sec.u16()):
            kind = sec.u8()
            if kind == 0:
                metric_idx = sec.u16()
                if metric_idx >= len(metrics):
                    raise MalformedArtifactError(f"bad metric index {metric_idx}")
                actions.append(IncrementMetric(metrics[metric_idx].name, sec.u32()))
            elif kind == 1:
                metric_idx = sec.u16()
                if metric_idx >= len(metrics):
                    raise MalformedArtifactError(f"bad metric index {metric_idx}")
                actions.append(ResetMetric(metrics[metric_idx].name))
            elif kind == 2:
                sev_idx = sec.u8()
                if sev_idx >= len(SEVERITIES):
                    raise MalformedArtifactError(f"bad severity index {sev_idx}")
                label = sec.string()
                template = sec.string()
                actions.append(Publish(SEVERITIES[sev_idx], label, template))
            else:
                raise MalformedArtifactError(f"bad action kind {kind}")
        to_idx = sec.u16()
        if to_idx >= len(states):
            raise MalformedArtifactError(f"bad state index {to_idx}")
        transitions.append(
            Transition(states[from_idx], events[event_idx].name, condition, tuple(actions), states[to_idx])
        )

    return XfsmProgram(
        program_id=program_id,
        version=prog_version,
        flow_key_spec=tuple(flow_key),
        event_defs=events,
        metric_defs=metrics,
        feature_defs=features,
        states=states,
        initial_state=initial_state,
        transitions=tuple(transitions),
        hash_seed=hash_seed,
    )


def load_artifact(path) -> XfsmProgram:
    with open(path, "rb") as fp:
        return decompile(fp.read())
