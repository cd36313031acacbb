"""Text grammars used by the monitoring DSL: guard conditions and event
match expressions.

Condition grammar (standard precedence, not > and > or):

    cond    := or
    or      := and ("or" and)*
    and     := unary ("and" unary)*
    unary   := "not" unary | atom
    atom    := "true" | "(" cond ")" | operand CMP operand
    operand := INTEGER | IDENT
    CMP     := "<" | "<=" | "=" | ">=" | ">"

Event match expressions are whitespace-separated conjunctions of:

    proto=tcp|udp|icmp|<number>
    syn|ack|fin|rst=0|1
    src_port|dst_port=<port>
    src_port|dst_port=<lo>-<hi>
"""

from __future__ import annotations

import re

from ..packets.model import PROTO_ICMP, PROTO_TCP, PROTO_UDP
from ..xfsm.model import (
    BoolAnd,
    BoolNot,
    BoolOr,
    Comparison,
    Condition,
    FeatureRef,
    FlagIs,
    IntConst,
    Operand,
    PortEquals,
    PortInRange,
    Predicate,
    ProtoIs,
    TrueCond,
)


class GrammarError(ValueError):
    """Raised with a human-readable message; callers attach the location."""


_TOKEN = re.compile(
    r"\s*(?:(?P<num>-?\d+)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op><=|>=|<|>|=)|(?P<paren>[()]))"
)

_KEYWORDS = {"and", "or", "not", "true"}


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            remainder = text[pos:].strip()
            if not remainder:
                break
            raise GrammarError(f"unexpected character {remainder[0]!r}")
        pos = m.end()
        if m.group("num") is not None:
            tokens.append(("num", m.group("num")))
        elif m.group("ident") is not None:
            word = m.group("ident")
            tokens.append((word, word) if word in _KEYWORDS else ("ident", word))
        elif m.group("op") is not None:
            tokens.append(("cmp", m.group("op")))
        else:
            tokens.append((m.group("paren"), m.group("paren")))
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, str]]) -> None:
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect(self, kind: str) -> str:
        k, v = self.take()
        if k != kind:
            raise GrammarError(f"expected {kind!r}, found {v!r}")
        return v

    def parse(self) -> Condition:
        cond = self.parse_or()
        k, v = self.peek()
        if k is not None:
            raise GrammarError(f"unexpected trailing token {v!r}")
        return cond

    def parse_or(self) -> Condition:
        items = [self.parse_and()]
        while self.peek()[0] == "or":
            self.take()
            items.append(self.parse_and())
        return items[0] if len(items) == 1 else BoolOr(tuple(items))

    def parse_and(self) -> Condition:
        items = [self.parse_unary()]
        while self.peek()[0] == "and":
            self.take()
            items.append(self.parse_unary())
        return items[0] if len(items) == 1 else BoolAnd(tuple(items))

    def parse_unary(self) -> Condition:
        if self.peek()[0] == "not":
            self.take()
            return BoolNot(self.parse_unary())
        return self.parse_atom()

    def parse_atom(self) -> Condition:
        kind, value = self.peek()
        if kind == "true":
            self.take()
            return TrueCond()
        if kind == "(":
            self.take()
            inner = self.parse_or()
            self.expect(")")
            return inner
        lhs = self.parse_operand()
        op = self.expect("cmp")
        rhs = self.parse_operand()
        return Comparison(lhs, op, rhs)

    def parse_operand(self) -> Operand:
        kind, value = self.take()
        if kind == "num":
            return IntConst(int(value))
        if kind == "ident":
            return FeatureRef(value)
        raise GrammarError(f"expected feature name or integer, found {value!r}")


def parse_condition(text: str) -> Condition:
    """Parse a guard condition string into its AST."""
    tokens = _tokenize(text)
    if not tokens:
        raise GrammarError("empty condition")
    return _Parser(tokens).parse()


_PROTO_ALIASES = {"tcp": PROTO_TCP, "udp": PROTO_UDP, "icmp": PROTO_ICMP}
_FLAG_NAMES = {"syn": "SYN", "ack": "ACK", "fin": "FIN", "rst": "RST"}


def _parse_port(text: str) -> int:
    value = int(text)
    if not 0 <= value <= 65535:
        raise GrammarError(f"port {value} out of range")
    return value


def parse_match(text: str) -> tuple[Predicate, ...]:
    """Parse an event match expression into a predicate conjunction."""
    terms = text.split()
    if not terms:
        raise GrammarError("match expression must contain at least one predicate")
    predicates: list[Predicate] = []
    for term in terms:
        if "=" not in term:
            raise GrammarError(f"malformed match term {term!r}")
        key, _, value = term.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if key == "proto":
            if value.lower() in _PROTO_ALIASES:
                predicates.append(ProtoIs(_PROTO_ALIASES[value.lower()]))
            elif value.isdigit() and 0 <= int(value) <= 255:
                predicates.append(ProtoIs(int(value)))
            else:
                raise GrammarError(f"bad protocol {value!r}")
        elif key in _FLAG_NAMES:
            if value not in ("0", "1"):
                raise GrammarError(f"flag {key} must be 0 or 1, found {value!r}")
            predicates.append(FlagIs(_FLAG_NAMES[key], value == "1"))
        elif key in ("src_port", "dst_port"):
            side = "src" if key == "src_port" else "dst"
            if "-" in value:
                lo_text, _, hi_text = value.partition("-")
                try:
                    lo, hi = _parse_port(lo_text), _parse_port(hi_text)
                except ValueError:
                    raise GrammarError(f"bad port range {value!r}") from None
                if hi < lo:
                    raise GrammarError(f"empty port range {value!r}")
                predicates.append(PortInRange(side, lo, hi))
            else:
                try:
                    predicates.append(PortEquals(side, _parse_port(value)))
                except ValueError:
                    raise GrammarError(f"bad port {value!r}") from None
        else:
            raise GrammarError(f"unknown match key {key!r}")
    return tuple(predicates)
