"""Count-min sketch, dyadic range array and inner-product queries.

Sizing follows the usual (epsilon, delta) form: ``width = ceil(e / epsilon)``
and ``depth = ceil(ln(1 / delta))``.  Point estimates never undercount and
exceed the true count by at most ``epsilon * total`` with probability at
least ``1 - delta``.
"""

from __future__ import annotations

import math
from typing import Any, Iterable

import numpy as np

from .. import hashing
from ..errors import DomainError, IncompatibleSketchError, SaturationError
from . import _codec

COUNTER_MAX = (1 << 64) - 1


class CountMinSketch:
    def __init__(self, width: int, depth: int, seed: int = 0) -> None:
        if width < 1 or depth < 1:
            raise DomainError(f"width and depth must be positive, got {width}, {depth}")
        self.width = int(width)
        self.depth = int(depth)
        self.seed = int(seed)
        self.seeds = hashing.derive_seeds(self.seed, self.depth)
        self.grid = np.zeros((self.depth, self.width), dtype=np.uint64)
        self.total = 0

    @classmethod
    def from_error(cls, epsilon: float, delta: float, seed: int = 0) -> CountMinSketch:
        if not (0 < epsilon < 1 and 0 < delta < 1):
            raise DomainError("epsilon and delta must lie in (0, 1)")
        return cls(math.ceil(math.e / epsilon), math.ceil(math.log(1 / delta)), seed)

    @property
    def epsilon(self) -> float:
        return math.e / self.width

    @property
    def delta(self) -> float:
        return math.exp(-self.depth)

    def _columns(self, key: int) -> list[int]:
        return [hashing.hash64(key, s) % self.width for s in self.seeds]

    def _saturate_guard(self, added: int) -> bool:
        # any single counter is bounded by the running total
        return self.total + added > COUNTER_MAX

    def add(self, item: Any, count: int = 1) -> None:
        if count < 0:
            raise DomainError("counts must be non-negative")
        key = hashing.item_key(item)
        saturated = self._saturate_guard(count)
        for row, col in enumerate(self._columns(key)):
            cur = int(self.grid[row, col])
            self.grid[row, col] = min(COUNTER_MAX, cur + count)
        self.total = min(COUNTER_MAX, self.total + count)
        if saturated:
            raise SaturationError("count-min counters saturated at 2**64 - 1")

    def add_many(self, items: Iterable[Any] | np.ndarray, counts: np.ndarray | None = None) -> None:
        keys = hashing.keys_array(items)
        if counts is None:
            weights = None
            added = len(keys)
        else:
            counts = np.asarray(counts)
            if counts.shape != keys.shape:
                raise DomainError("counts must align with items")
            if np.any(counts < 0):
                raise DomainError("counts must be non-negative")
            weights = counts.astype(np.float64)
            added = int(counts.sum())
        if self._saturate_guard(added):
            for i, key in enumerate(keys.tolist()):
                self.add(key, 1 if counts is None else int(counts[i]))
            return
        w = np.uint64(self.width)
        for row, s in enumerate(self.seeds):
            cols = (hashing.hash64_array(keys, s) % w).astype(np.int64)
            if weights is None:
                inc = np.bincount(cols, minlength=self.width)
            else:
                inc = np.bincount(cols, weights=weights, minlength=self.width)
            self.grid[row] += inc.astype(np.uint64)
        self.total += added

    def estimate(self, item: Any) -> int:
        key = hashing.item_key(item)
        return min(int(self.grid[row, col]) for row, col in enumerate(self._columns(key)))

    def estimate_many(self, items: Iterable[Any] | np.ndarray) -> np.ndarray:
        keys = hashing.keys_array(items)
        w = np.uint64(self.width)
        best = None
        for row, s in enumerate(self.seeds):
            vals = self.grid[row, (hashing.hash64_array(keys, s) % w).astype(np.int64)]
            best = vals if best is None else np.minimum(best, vals)
        return best if best is not None else np.zeros(0, dtype=np.uint64)

    def compatible(self, other: object) -> bool:
        return (
            isinstance(other, CountMinSketch)
            and (self.width, self.depth, self.seed) == (other.width, other.depth, other.seed)
        )

    def _check_compatible(self, other: object) -> None:
        if not self.compatible(other):
            raise IncompatibleSketchError("count-min sketches differ in width, depth or seed")

    def inner_product(self, other: CountMinSketch) -> int:
        """Overestimate of ``sum_x f_a(x) f_b(x)``: min over rows of the row dot product."""
        self._check_compatible(other)
        a = self.grid.astype(object) if self.total > (1 << 31) else self.grid.astype(np.float64)
        b = other.grid.astype(object) if other.total > (1 << 31) else other.grid.astype(np.float64)
        rows = [int(np.dot(a[r], b[r])) for r in range(self.depth)]
        return min(rows)

    def merge(self, other: CountMinSketch) -> CountMinSketch:
        self._check_compatible(other)
        out = self.copy()
        if self.total + other.total > COUNTER_MAX:
            big = np.minimum(self.grid.astype(object) + other.grid.astype(object), COUNTER_MAX)
            out.grid = big.astype(np.uint64)
            out.total = COUNTER_MAX
            raise SaturationError("merged counters saturated at 2**64 - 1")
        out.grid = self.grid + other.grid
        out.total = self.total + other.total
        return out

    def copy(self) -> CountMinSketch:
        out = CountMinSketch.__new__(CountMinSketch)
        out.__dict__.update(self.__dict__)
        out.seeds = list(self.seeds)
        out.grid = self.grid.copy()
        return out

    def __eq__(self, other: object) -> bool:
        return self.compatible(other) and self.total == other.total and bool(np.array_equal(self.grid, other.grid))

    def to_bytes(self) -> bytes:
        params = {"width": self.width, "depth": self.depth, "seed": self.seed, "total": self.total}
        return _codec.pack(_codec.KIND_CMS, params, self.grid.astype("<u8").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> CountMinSketch:
        kind, p, payload = _codec.unpack(data)
        _codec.expect_kind(kind, _codec.KIND_CMS)
        out = cls(p["width"], p["depth"], p["seed"])
        out.grid = np.frombuffer(payload, dtype="<u8").reshape(out.depth, out.width).astype(np.uint64)
        out.total = p["total"]
        return out


class DyadicCountMin:
    """Array of count-min sketches over dyadic levels of ``[0, universe)``.

    Level ``j`` counts item ``x`` under key ``x >> j``; a range query sums at
    most ``2 log2(universe)`` point estimates.
    """

    def __init__(self, width: int, depth: int, universe: int = 1 << 32, seed: int = 0) -> None:
        if universe < 1:
            raise DomainError("universe must be >= 1")
        self.universe = int(universe)
        self.width = int(width)
        self.depth = int(depth)
        self.seed = int(seed)
        n_levels = max(1, math.ceil(math.log2(self.universe))) + 1 if self.universe > 1 else 1
        level_seeds = hashing.derive_seeds(self.seed ^ 0xD1AD1C, n_levels)
        self.levels = [CountMinSketch(width, depth, s) for s in level_seeds]

    @property
    def total(self) -> int:
        return self.levels[0].total

    def _check_item(self, x: int) -> None:
        if not 0 <= x < self.universe:
            raise DomainError(f"item {x} outside universe [0, {self.universe})")

    def add(self, x: int, count: int = 1) -> None:
        x = int(x)
        self._check_item(x)
        for j, level in enumerate(self.levels):
            level.add(x >> j, count)

    def add_many(self, xs: Iterable[int] | np.ndarray) -> None:
        arr = np.asarray(list(xs) if not isinstance(xs, np.ndarray) else xs, dtype=np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= self.universe):
            raise DomainError(f"items outside universe [0, {self.universe})")
        for j, level in enumerate(self.levels):
            level.add_many(arr >> j)

    def range_count(self, lo: int, hi: int) -> int:
        """Overestimate of the number of items in the closed range ``[lo, hi]``."""
        if lo > hi:
            raise DomainError("lo must be <= hi")
        if lo < 0 or hi >= self.universe:
            raise DomainError(f"range outside universe [0, {self.universe})")
        total = 0
        left, right, j = lo, hi + 1, 0
        while left < right:
            if left & 1:
                total += self.levels[j].estimate(left)
                left += 1
            if right & 1:
                right -= 1
                total += self.levels[j].estimate(right)
            left >>= 1
            right >>= 1
            j += 1
        return total

    def merge(self, other: DyadicCountMin) -> DyadicCountMin:
        if not isinstance(other, DyadicCountMin) or (self.universe, self.width, self.depth, self.seed) != (
            other.universe, other.width, other.depth, other.seed
        ):
            raise IncompatibleSketchError("dyadic arrays differ in parameters")
        out = self.copy()
        out.levels = [a.merge(b) for a, b in zip(self.levels, other.levels)]
        return out

    def copy(self) -> DyadicCountMin:
        out = DyadicCountMin.__new__(DyadicCountMin)
        out.__dict__.update(self.__dict__)
        out.levels = [lv.copy() for lv in self.levels]
        return out

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DyadicCountMin) and self.universe == other.universe and self.levels == other.levels

    def to_bytes(self) -> bytes:
        params = {
            "universe": self.universe, "width": self.width, "depth": self.depth,
            "seed": self.seed, "totals": [lv.total for lv in self.levels],
        }
        payload = b"".join(lv.grid.astype("<u8").tobytes() for lv in self.levels)
        return _codec.pack(_codec.KIND_DYADIC, params, payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> DyadicCountMin:
        kind, p, payload = _codec.unpack(data)
        _codec.expect_kind(kind, _codec.KIND_DYADIC)
        out = cls(p["width"], p["depth"], p["universe"], p["seed"])
        size = out.width * out.depth * 8
        for i, lv in enumerate(out.levels):
            chunk = payload[i * size:(i + 1) * size]
            lv.grid = np.frombuffer(chunk, dtype="<u8").reshape(lv.depth, lv.width).astype(np.uint64)
            lv.total = p["totals"][i]
        return out
