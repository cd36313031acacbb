"""XML monitoring DSL: parsing and exhaustive validation.

Document shape:

    <program id="..." version="1" seed="...">
      <flowkey fields="src_ip,dst_ip"/>
      <events>    <event name="..." match="proto=tcp syn=1"/> ...  </events>
      <metrics>   <metric name="..." kind="exact_counter"
                          width="1024" depth="4" window="3/2" key="src_ip"/> ... </metrics>
      <features>  <feature name="..." metric="..." scale="1/2" offset="-1"/> ... </features>
      <states initial="SAFE"> <state name="SAFE"/> ... </states>
      <transitions>
        <t from="SAFE" on="tcp_syn" cond="syns &gt;= 5" to="ALARM">
          <action kind="publish" severity="alert" label="synflood" payload="..."/>
          <action kind="increment" metric="syn_count" amount="1"/>
          <action kind="reset" metric="syn_count"/>
        </t> ...
      </transitions>
    </program>

Validation is exhaustive: every problem in the document is reported with a
location path, in document order; nothing fails fast.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from ..xfsm.model import (
    DEFAULT_HASH_SEED,
    FIELD_SELECTORS,
    METRIC_EXACT,
    METRIC_SKETCH,
    SEVERITIES,
    Action,
    EventDef,
    FeatureDef,
    IncrementMetric,
    MetricDef,
    Publish,
    ResetMetric,
    Transition,
    TrueCond,
    XfsmProgram,
    condition_feature_names,
)
from .grammar import GrammarError, parse_condition, parse_match

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_LABEL_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.,-]*$")
_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_RESERVED_FEATURE_NAMES = {"flow_key", "ts"}


@dataclass(frozen=True)
class ValidationIssue:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass
class ValidationReport:
    errors: list[ValidationIssue] = field(default_factory=list)
    warnings: list[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def error(self, path: str, message: str) -> None:
        self.errors.append(ValidationIssue(path, message))

    def warn(self, path: str, message: str) -> None:
        self.warnings.append(ValidationIssue(path, message))

    def to_json(self) -> dict:
        return {
            "errors": [{"path": i.path, "message": i.message} for i in self.errors],
            "warnings": [{"path": i.path, "message": i.message} for i in self.warnings],
        }


def _parse_rational(text: str) -> Fraction:
    if "/" in text:
        num_text, _, den_text = text.partition("/")
        return Fraction(int(num_text), int(den_text))
    return Fraction(int(text))


def _split_fields(text: str) -> list[str]:
    return [f for f in re.split(r"[,\s]+", text.strip()) if f]


def parse_dsl(text: str) -> tuple[Optional[XfsmProgram], ValidationReport]:
    """Parse and validate a DSL document.

    Returns the program and an empty-error report on success, or (None,
    report) with every detected problem on failure.
    """
    report = ValidationReport()
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        report.error("document", f"XML syntax error: {exc}")
        return None, report

    if root.tag != "program":
        report.error("document", f"root element must be <program>, found <{root.tag}>")
        return None, report

    program_id = root.get("id", "")
    if not program_id:
        report.error("program/@id", "missing or empty program id")
    elif not _NAME_RE.match(program_id):
        report.error("program/@id", f"invalid program id {program_id!r}")

    version = 1
    if root.get("version") is not None:
        try:
            version = int(root.get("version"))
            if version < 1:
                raise ValueError
        except ValueError:
            report.error("program/@version", f"version must be a positive integer")

    hash_seed = DEFAULT_HASH_SEED
    if root.get("seed") is not None:
        try:
            hash_seed = int(root.get("seed")) & (2**64 - 1)
        except ValueError:
            report.error("program/@seed", "seed must be an integer")

    # flowkey ---------------------------------------------------------------
    flow_key: tuple[str, ...] = ()
    fk_el = root.find("flowkey")
    if fk_el is None:
        report.error("flowkey", "missing <flowkey> element")
    else:
        fields = _split_fields(fk_el.get("fields", ""))
        if not fields:
            report.error("flowkey/@fields", "flow key must select at least one field")
        bad = [f for f in fields if f not in FIELD_SELECTORS]
        for f in bad:
            report.error("flowkey/@fields", f"unknown field selector {f!r}")
        if len(set(fields)) != len(fields):
            report.error("flowkey/@fields", "duplicate field selector")
        if not bad:
            flow_key = tuple(fields)

    # events ----------------------------------------------------------------
    event_defs: list[EventDef] = []
    event_names: set[str] = set()
    for i, el in enumerate(root.findall("events/event"), start=1):
        path = f"events/event[{i}]"
        name = el.get("name", "")
        if not _NAME_RE.match(name):
            report.error(f"{path}/@name", f"invalid event name {name!r}")
            continue
        if name in event_names:
            report.error(f"{path}/@name", f"duplicate event name {name!r}")
            continue
        event_names.add(name)
        match_text = el.get("match", "")
        try:
            predicates = parse_match(match_text)
        except GrammarError as exc:
            report.error(f"{path}/@match", str(exc))
            continue
        event_defs.append(EventDef(name, predicates))

    # metrics ---------------------------------------------------------------
    metric_defs: list[MetricDef] = []
    metric_names: set[str] = set()
    for i, el in enumerate(root.findall("metrics/metric"), start=1):
        path = f"metrics/metric[{i}]"
        name = el.get("name", "")
        if not _NAME_RE.match(name):
            report.error(f"{path}/@name", f"invalid metric name {name!r}")
            continue
        if name in metric_names:
            report.error(f"{path}/@name", f"duplicate metric name {name!r}")
            continue
        metric_names.add(name)

        kind = el.get("kind", METRIC_EXACT)
        width = depth = 0
        if kind == METRIC_SKETCH:
            try:
                width = int(el.get("width", "0"))
                depth = int(el.get("depth", "0"))
            except ValueError:
                report.error(path, "width and depth must be integers")
                continue
            if width < 2:
                report.error(f"{path}/@width", "count_min_sketch requires width >= 2")
            if depth < 1:
                report.error(f"{path}/@depth", "count_min_sketch requires depth >= 1")
        elif kind == METRIC_EXACT:
            if el.get("width") or el.get("depth"):
                report.warn(path, "exact_counter ignores sketch dimensions")
        else:
            report.error(f"{path}/@kind", f"unknown metric kind {kind!r}")
            continue

        window = None
        if el.get("window") is not None:
            try:
                window = _parse_rational(el.get("window"))
                if window <= 0:
                    report.error(f"{path}/@window", "window must be positive")
                    window = None
            except (ValueError, ZeroDivisionError):
                report.error(f"{path}/@window", f"bad window {el.get('window')!r}")

        key_fields = None
        if el.get("key") is not None:
            fields = _split_fields(el.get("key"))
            bad = [f for f in fields if f not in FIELD_SELECTORS]
            for f in bad:
                report.error(f"{path}/@key", f"unknown field selector {f!r}")
            if not fields:
                report.error(f"{path}/@key", "metric key must select at least one field")
            elif not bad:
                key_fields = tuple(fields)

        metric_defs.append(
            MetricDef(name, kind, sketch_width=width, sketch_depth=depth, window=window, key_fields=key_fields)
        )

    # features --------------------------------------------------------------
    feature_defs: list[FeatureDef] = []
    feature_names: set[str] = set()
    for i, el in enumerate(root.findall("features/feature"), start=1):
        path = f"features/feature[{i}]"
        name = el.get("name", "")
        if not _NAME_RE.match(name):
            report.error(f"{path}/@name", f"invalid feature name {name!r}")
            continue
        if name in _RESERVED_FEATURE_NAMES:
            report.error(f"{path}/@name", f"{name!r} is reserved for payload templates")
            continue
        if name in feature_names:
            report.error(f"{path}/@name", f"duplicate feature name {name!r}")
            continue
        feature_names.add(name)

        metric = el.get("metric", "")
        if metric not in metric_names:
            report.error(f"{path}/@metric", f"unknown metric {metric!r}")
            continue

        scale = Fraction(1)
        if el.get("scale") is not None:
            try:
                scale = _parse_rational(el.get("scale"))
                if scale <= 0:
                    report.error(f"{path}/@scale", "scale must be positive")
                    continue
            except (ValueError, ZeroDivisionError):
                report.error(f"{path}/@scale", f"bad scale {el.get('scale')!r}")
                continue

        offset = 0
        if el.get("offset") is not None:
            try:
                offset = int(el.get("offset"))
            except ValueError:
                report.error(f"{path}/@offset", f"offset must be an integer")
                continue

        feature_defs.append(FeatureDef(name, metric, scale=scale, offset=offset))

    # states ----------------------------------------------------------------
    states: list[str] = []
    states_el = root.find("states")
    initial_state = ""
    if states_el is None:
        report.error("states", "missing <states> element")
    else:
        for i, el in enumerate(states_el.findall("state"), start=1):
            name = el.get("name", "")
            if not _NAME_RE.match(name):
                report.error(f"states/state[{i}]/@name", f"invalid state name {name!r}")
            elif name in states:
                report.error(f"states/state[{i}]/@name", f"duplicate state name {name!r}")
            else:
                states.append(name)
        if not states:
            report.error("states", "at least one state is required")
        initial_state = states_el.get("initial", "")
        if not initial_state:
            report.error("states/@initial", "missing initial state")
        elif initial_state not in states:
            report.error("states/@initial", f"initial state {initial_state!r} not declared")

    # transitions -------------------------------------------------------------
    transitions: list[Transition] = []
    for i, el in enumerate(root.findall("transitions/t"), start=1):
        path = f"transitions/t[{i}]"
        broken = False

        from_state = el.get("from", "")
        if from_state not in states:
            report.error(f"{path}/@from", f"unknown state {from_state!r}")
            broken = True
        to_state = el.get("to", "")
        if to_state not in states:
            report.error(f"{path}/@to", f"unknown state {to_state!r}")
            broken = True
        event = el.get("on", "")
        if event not in event_names:
            report.error(f"{path}/@on", f"unknown event {event!r}")
            broken = True

        condition = TrueCond()
        cond_text = el.get("cond", "true")
        try:
            condition = parse_condition(cond_text)
        except GrammarError as exc:
            report.error(f"{path}/@cond", str(exc))
            broken = True
        else:
            for ref in sorted(condition_feature_names(condition)):
                if ref not in feature_names:
                    report.error(f"{path}/@cond", f"unknown feature {ref!r}")
                    broken = True

        actions: list[Action] = []
        for j, act_el in enumerate(el.findall("action"), start=1):
            act_path = f"{path}/action[{j}]"
            kind = act_el.get("kind", "")
            if kind == "increment":
                metric = act_el.get("metric", "")
                if metric not in metric_names:
                    report.error(f"{act_path}/@metric", f"unknown metric {metric!r}")
                    broken = True
                    continue
                try:
                    amount = int(act_el.get("amount", "1"))
                except ValueError:
                    report.error(f"{act_path}/@amount", "amount must be an integer")
                    broken = True
                    continue
                if amount < 1:
                    report.error(f"{act_path}/@amount", "amount must be >= 1")
                    broken = True
                    continue
                actions.append(IncrementMetric(metric, amount))
            elif kind == "reset":
                metric = act_el.get("metric", "")
                if metric not in metric_names:
                    report.error(f"{act_path}/@metric", f"unknown metric {metric!r}")
                    broken = True
                    continue
                actions.append(ResetMetric(metric))
            elif kind == "publish":
                severity = act_el.get("severity", "")
                if severity not in SEVERITIES:
                    report.error(f"{act_path}/@severity", f"severity must be one of {', '.join(SEVERITIES)}")
                    broken = True
                    continue
                label = act_el.get("label", "")
                if not _LABEL_RE.match(label):
                    report.error(f"{act_path}/@label", f"invalid label {label!r}")
                    broken = True
                    continue
                payload = act_el.get("payload", "")
                bad_refs = [
                    ref
                    for ref in _PLACEHOLDER_RE.findall(payload)
                    if ref not in feature_names and ref not in _RESERVED_FEATURE_NAMES
                ]
                if bad_refs:
                    report.error(
                        f"{act_path}/@payload",
                        f"unknown placeholder {bad_refs[0]!r}",
                    )
                    broken = True
                    continue
                actions.append(Publish(severity, label, payload))
            else:
                report.error(f"{act_path}/@kind", f"unknown action kind {kind!r}")
                broken = True

        if not broken:
            transitions.append(Transition(from_state, event, condition, tuple(actions), to_state))

    if not report.ok:
        return None, report

    program = XfsmProgram(
        program_id=program_id,
        version=version,
        flow_key_spec=flow_key,
        event_defs=tuple(event_defs),
        metric_defs=tuple(metric_defs),
        feature_defs=tuple(feature_defs),
        states=tuple(states),
        initial_state=initial_state,
        transitions=tuple(transitions),
        hash_seed=hash_seed,
    )
    return program, report


def validate_program(program: XfsmProgram) -> ValidationReport:
    """Structural validation for programs built in code rather than parsed."""
    report = ValidationReport()

    if not program.flow_key_spec:
        report.error("flow_key_spec", "flow key must select at least one field")
    for f in program.flow_key_spec:
        if f not in FIELD_SELECTORS:
            report.error("flow_key_spec", f"unknown field selector {f!r}")

    event_names = set()
    for i, ev in enumerate(program.event_defs, start=1):
        if ev.name in event_names:
            report.error(f"event[{i}]", f"duplicate event name {ev.name!r}")
        event_names.add(ev.name)
        if not ev.predicates:
            report.error(f"event[{i}]", "match must contain at least one predicate")

    metric_names = set()
    for i, m in enumerate(program.metric_defs, start=1):
        if m.name in metric_names:
            report.error(f"metric[{i}]", f"duplicate metric name {m.name!r}")
        metric_names.add(m.name)
        if m.kind == METRIC_SKETCH:
            if m.sketch_width < 2:
                report.error(f"metric[{i}]", "count_min_sketch requires width >= 2")
            if m.sketch_depth < 1:
                report.error(f"metric[{i}]", "count_min_sketch requires depth >= 1")
        elif m.kind != METRIC_EXACT:
            report.error(f"metric[{i}]", f"unknown metric kind {m.kind!r}")
        if m.window is not None and m.window <= 0:
            report.error(f"metric[{i}]", "window must be positive")
        if m.key_fields is not None:
            if not m.key_fields:
                report.error(f"metric[{i}]", "metric key must select at least one field")
            for f in m.key_fields:
                if f not in FIELD_SELECTORS:
                    report.error(f"metric[{i}]", f"unknown field selector {f!r}")

    feature_names = set()
    for i, f in enumerate(program.feature_defs, start=1):
        if f.name in feature_names:
            report.error(f"feature[{i}]", f"duplicate feature name {f.name!r}")
        feature_names.add(f.name)
        if f.metric not in metric_names:
            report.error(f"feature[{i}]", f"unknown metric {f.metric!r}")
        if f.scale <= 0:
            report.error(f"feature[{i}]", "scale must be positive")

    state_names = set()
    for i, s in enumerate(program.states, start=1):
        if s in state_names:
            report.error(f"state[{i}]", f"duplicate state name {s!r}")
        state_names.add(s)
    if not program.states:
        report.error("states", "at least one state is required")
    if program.initial_state not in state_names:
        report.error("states", f"initial state {program.initial_state!r} not declared")

    for i, t in enumerate(program.transitions, start=1):
        path = f"transition[{i}]"
        if t.from_state not in state_names:
            report.error(path, f"unknown state {t.from_state!r}")
        if t.to_state not in state_names:
            report.error(path, f"unknown state {t.to_state!r}")
        if t.event not in event_names:
            report.error(path, f"unknown event {t.event!r}")
        for ref in sorted(condition_feature_names(t.condition)):
            if ref not in feature_names:
                report.error(path, f"unknown feature {ref!r}")
        for j, a in enumerate(t.actions, start=1):
            if isinstance(a, (IncrementMetric, ResetMetric)):
                if a.metric not in metric_names:
                    report.error(f"{path}/action[{j}]", f"unknown metric {a.metric!r}")
                if isinstance(a, IncrementMetric) and a.amount < 1:
                    report.error(f"{path}/action[{j}]", "amount must be >= 1")
            elif isinstance(a, Publish):
                if a.severity not in SEVERITIES:
                    report.error(f"{path}/action[{j}]", f"bad severity {a.severity!r}")
                for ref in _PLACEHOLDER_RE.findall(a.template):
                    if ref not in feature_names and ref not in _RESERVED_FEATURE_NAMES:
                        report.error(f"{path}/action[{j}]", f"unknown placeholder {ref!r}")

    return report
