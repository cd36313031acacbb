"""Monitoring program model: packet-derived events, stream metrics, guard
features and the state machine that ties them together.

Programs are immutable once built. All semantic choices that matter for
reproducibility are fixed here:

* transitions are scanned in declaration order, first match wins;
* a packet maps to at most one event (first matching event definition);
* guard arithmetic is integer-only, rational scaling uses floor division;
* time is capture time taken from packet timestamps, never wall clock.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

from ..packets.model import (
    PROTO_TCP,
    TCP_FLAG_BITS,
    FIELD_SELECTORS,
    PacketRecord,
)

SEVERITIES = ("info", "alert", "warning", "log")

# Default program-level hash seed. Keeping it a constant means two compiles
# of the same source produce byte-identical artifacts.
DEFAULT_HASH_SEED = 0x9E3779B97F4A7C15


class ProgramIntegrityError(Exception):
    """A runtime reference that validation should have made impossible."""


# ---------------------------------------------------------------------------
# Event match predicates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtoIs:
    proto: int

    def matches(self, pkt: PacketRecord) -> bool:
        return pkt.ip_proto == self.proto


@dataclass(frozen=True)
class FlagIs:
    """TCP flag set/unset test; only meaningful for TCP packets."""

    flag: str  # one of SYN, ACK, FIN, RST
    value: bool

    def matches(self, pkt: PacketRecord) -> bool:
        if pkt.ip_proto != PROTO_TCP:
            return False
        return pkt.flag(TCP_FLAG_BITS[self.flag]) == self.value


@dataclass(frozen=True)
class PortEquals:
    side: str  # "src" or "dst"
    port: int

    def matches(self, pkt: PacketRecord) -> bool:
        actual = pkt.src_port if self.side == "src" else pkt.dst_port
        return actual == self.port


@dataclass(frozen=True)
class PortInRange:
    side: str
    lo: int
    hi: int  # inclusive

    def matches(self, pkt: PacketRecord) -> bool:
        actual = pkt.src_port if self.side == "src" else pkt.dst_port
        return self.lo <= actual <= self.hi


Predicate = Union[ProtoIs, FlagIs, PortEquals, PortInRange]


@dataclass(frozen=True)
class EventDef:
    """Named conjunction of packet predicates."""

    name: str
    predicates: tuple[Predicate, ...]

    def matches(self, pkt: PacketRecord) -> bool:
        return all(p.matches(pkt) for p in self.predicates)


# ---------------------------------------------------------------------------
# Metrics and features
# ---------------------------------------------------------------------------

METRIC_EXACT = "exact_counter"
METRIC_SKETCH = "count_min_sketch"


@dataclass(frozen=True)
class MetricDef:
    """A named stream counter.

    ``window`` is an optional tumbling-window period in capture-time seconds
    (exact rational). When the window epoch advances, all counters of the
    metric are zeroed.

    ``key_fields`` overrides the key scope: when set, updates and queries use
    those packet fields instead of the program flow key. This is what lets a
    program count, say, one unit per distinct destination port while its flow
    key is finer grained.
    """

    name: str
    kind: str  # METRIC_EXACT or METRIC_SKETCH
    sketch_width: int = 0
    sketch_depth: int = 0
    window: Optional[Fraction] = None
    key_fields: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class FeatureDef:
    """Integer feature: floor(scale * metric_value) + offset."""

    name: str
    metric: str
    scale: Fraction = Fraction(1)
    offset: int = 0

    def value(self, metric_value: int) -> int:
        num, den = self.scale.numerator, self.scale.denominator
        return (num * metric_value) // den + self.offset


# ---------------------------------------------------------------------------
# Guard conditions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IntConst:
    value: int


@dataclass(frozen=True)
class FeatureRef:
    name: str


Operand = Union[IntConst, FeatureRef]

CMP_OPS = ("<", "<=", "=", ">=", ">")


@dataclass(frozen=True)
class Comparison:
    lhs: Operand
    op: str
    rhs: Operand


@dataclass(frozen=True)
class BoolAnd:
    items: tuple["Condition", ...]


@dataclass(frozen=True)
class BoolOr:
    items: tuple["Condition", ...]


@dataclass(frozen=True)
class BoolNot:
    item: "Condition"


@dataclass(frozen=True)
class TrueCond:
    pass


Condition = Union[Comparison, BoolAnd, BoolOr, BoolNot, TrueCond]


def eval_condition(cond: Condition, features: dict[str, int]) -> bool:
    """Evaluate a guard against already-computed feature values."""
    if isinstance(cond, TrueCond):
        return True
    if isinstance(cond, Comparison):
        lhs = _operand_value(cond.lhs, features)
        rhs = _operand_value(cond.rhs, features)
        if cond.op == "<":
            return lhs < rhs
        if cond.op == "<=":
            return lhs <= rhs
        if cond.op == "=":
            return lhs == rhs
        if cond.op == ">=":
            return lhs >= rhs
        if cond.op == ">":
            return lhs > rhs
        raise ProgramIntegrityError(f"bad comparison operator {cond.op!r}")
    if isinstance(cond, BoolAnd):
        return all(eval_condition(c, features) for c in cond.items)
    if isinstance(cond, BoolOr):
        return any(eval_condition(c, features) for c in cond.items)
    if isinstance(cond, BoolNot):
        return not eval_condition(cond.item, features)
    raise ProgramIntegrityError(f"bad condition node {cond!r}")


def _operand_value(op: Operand, features: dict[str, int]) -> int:
    if isinstance(op, IntConst):
        return op.value
    try:
        return features[op.name]
    except KeyError:
        raise ProgramIntegrityError(f"unknown feature {op.name!r}") from None


def condition_feature_names(cond: Condition) -> set[str]:
    """All feature names referenced anywhere in a guard."""
    names: set[str] = set()
    stack: list[Condition] = [cond]
    while stack:
        node = stack.pop()
        if isinstance(node, Comparison):
            for operand in (node.lhs, node.rhs):
                if isinstance(operand, FeatureRef):
                    names.add(operand.name)
        elif isinstance(node, (BoolAnd, BoolOr)):
            stack.extend(node.items)
        elif isinstance(node, BoolNot):
            stack.append(node.item)
    return names


# ---------------------------------------------------------------------------
# Actions and transitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IncrementMetric:
    metric: str
    amount: int = 1


@dataclass(frozen=True)
class ResetMetric:
    metric: str


@dataclass(frozen=True)
class Publish:
    """Emit a monitoring event.

    ``template`` may reference ``{flow_key}``, ``{ts}`` and any declared
    feature by name; features are evaluated at action time, so they observe
    increments made earlier in the same transition.
    """

    severity: str
    label: str
    template: str


Action = Union[IncrementMetric, ResetMetric, Publish]


@dataclass(frozen=True)
class Transition:
    from_state: str
    event: str
    condition: Condition
    actions: tuple[Action, ...]
    to_state: str


# ---------------------------------------------------------------------------
# The program
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class XfsmProgram:
    program_id: str
    version: int
    flow_key_spec: tuple[str, ...]
    event_defs: tuple[EventDef, ...]
    metric_defs: tuple[MetricDef, ...]
    feature_defs: tuple[FeatureDef, ...]
    states: tuple[str, ...]
    initial_state: str
    transitions: tuple[Transition, ...]
    hash_seed: int = DEFAULT_HASH_SEED

    def metric(self, name: str) -> MetricDef:
        for m in self.metric_defs:
            if m.name == name:
                return m
        raise ProgramIntegrityError(f"unknown metric {name!r}")

    def feature(self, name: str) -> FeatureDef:
        for f in self.feature_defs:
            if f.name == name:
                return f
        raise ProgramIntegrityError(f"unknown feature {name!r}")


__all__ = [
    "SEVERITIES",
    "DEFAULT_HASH_SEED",
    "FIELD_SELECTORS",
    "ProgramIntegrityError",
    "ProtoIs",
    "FlagIs",
    "PortEquals",
    "PortInRange",
    "Predicate",
    "EventDef",
    "METRIC_EXACT",
    "METRIC_SKETCH",
    "MetricDef",
    "FeatureDef",
    "IntConst",
    "FeatureRef",
    "Operand",
    "CMP_OPS",
    "Comparison",
    "BoolAnd",
    "BoolOr",
    "BoolNot",
    "TrueCond",
    "Condition",
    "eval_condition",
    "condition_feature_names",
    "IncrementMetric",
    "ResetMetric",
    "Publish",
    "Action",
    "Transition",
    "XfsmProgram",
]
