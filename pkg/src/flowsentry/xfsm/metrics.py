"""Stream metric store: exact counters and count-min sketches, with lazy
tumbling-window resets driven by capture time.

Sketch row hashes are derived deterministically from the program-level hash
seed and the (metric name, row index) pair, so two probes running the same
compiled program report identical estimates.
"""

from __future__ import annotations

from ..packets.model import MICROS_PER_SECOND
from .model import METRIC_EXACT, METRIC_SKETCH, MetricDef, ProgramIntegrityError

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    # Standard splitmix64 finalizer; pure integer math, platform independent.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _fold_key(key: bytes) -> int:
    """Fold an arbitrary-length byte key into the 64-bit hash domain."""
    x = int.from_bytes(key, "big") if key else 0
    folded = len(key) & _MASK64
    while x:
        folded ^= x & _MASK64
        x >>= 64
    return folded


def row_hash_params(hash_seed: int, metric_name: str, row: int) -> tuple[int, int]:
    """Multiplier/addend pair for one sketch row."""
    base = hash_seed & _MASK64
    for b in metric_name.encode("utf-8"):
        base = _splitmix64(base ^ b)
    base = _splitmix64(base ^ row)
    a = _splitmix64(base) | 1
    b = _splitmix64(base ^ 0xD6E8FEB86659FD93)
    return a, b


def sketch_index(a: int, b: int, key: bytes, width: int) -> int:
    h = (a * _fold_key(key) + b) & _MASK64
    return (h * width) >> 64


class _ExactCounter:
    __slots__ = ("counts",)

    def __init__(self) -> None:
        self.counts: dict[bytes, int] = {}

    def update(self, key: bytes, amount: int) -> None:
        self.counts[key] = self.counts.get(key, 0) + amount

    def query(self, key: bytes) -> int:
        return self.counts.get(key, 0)

    def reset(self) -> None:
        self.counts.clear()


class _CountMinSketch:
    __slots__ = ("width", "depth", "params", "rows")

    def __init__(self, width: int, depth: int, hash_seed: int, metric_name: str) -> None:
        self.width = width
        self.depth = depth
        self.params = [row_hash_params(hash_seed, metric_name, r) for r in range(depth)]
        self.rows = [[0] * width for _ in range(depth)]

    def update(self, key: bytes, amount: int) -> None:
        for r, (a, b) in enumerate(self.params):
            self.rows[r][sketch_index(a, b, key, self.width)] += amount

    def query(self, key: bytes) -> int:
        return min(
            self.rows[r][sketch_index(a, b, key, self.width)]
            for r, (a, b) in enumerate(self.params)
        )

    def reset(self) -> None:
        for row in self.rows:
            for i in range(len(row)):
                row[i] = 0


def window_epoch(window_num: int, window_den: int, ts_micros: int) -> int:
    """Tumbling-window epoch index for a capture timestamp.

    The window period is the exact rational window_num/window_den seconds;
    everything stays in integer arithmetic.
    """
    return (ts_micros * window_den) // (window_num * MICROS_PER_SECOND)


class MetricStore:
    """All metric state for one engine instance. Not thread safe."""

    def __init__(self, metric_defs: tuple[MetricDef, ...], hash_seed: int) -> None:
        self._defs: dict[str, MetricDef] = {}
        self._impl: dict[str, _ExactCounter | _CountMinSketch] = {}
        self._epochs: dict[str, int] = {}
        for m in metric_defs:
            self._defs[m.name] = m
            if m.kind == METRIC_EXACT:
                self._impl[m.name] = _ExactCounter()
            elif m.kind == METRIC_SKETCH:
                self._impl[m.name] = _CountMinSketch(m.sketch_width, m.sketch_depth, hash_seed, m.name)
            else:
                raise ProgramIntegrityError(f"unknown metric kind {m.kind!r}")

    def _get(self, name: str):
        try:
            return self._impl[name]
        except KeyError:
            raise ProgramIntegrityError(f"unknown metric {name!r}") from None

    def update(self, name: str, key: bytes, amount: int) -> None:
        self._get(name).update(key, amount)

    def query(self, name: str, key: bytes) -> int:
        return self._get(name).query(key)

    def reset(self, name: str) -> None:
        self._get(name).reset()

    def roll_windows(self, ts_micros: int) -> None:
        """Zero every windowed metric whose epoch advanced at this timestamp."""
        for name, mdef in self._defs.items():
            if mdef.window is None:
                continue
            epoch = window_epoch(mdef.window.numerator, mdef.window.denominator, ts_micros)
            last = self._epochs.get(name)
            if last is None:
                self._epochs[name] = epoch
            elif epoch != last:
                self._impl[name].reset()
                self._epochs[name] = epoch

    def dump_exact(self) -> dict[tuple[str, bytes], int]:
        """Snapshot of all nonzero exact counters, for test comparison."""
        out: dict[tuple[str, bytes], int] = {}
        for name, impl in self._impl.items():
            if isinstance(impl, _ExactCounter):
                for key, count in impl.counts.items():
                    if count != 0:
                        out[(name, key)] = count
        return out
