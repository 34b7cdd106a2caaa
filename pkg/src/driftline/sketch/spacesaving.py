"""Space-Saving heavy hitters with per-counter overestimation error.

Each tracked item carries ``(count, error)``: ``count`` never undercounts
and ``count - error`` never overcounts.  When the summary is full a new item
takes over the minimum counter, inheriting its count as error.  Weighted
updates follow the same rule, so batch ingestion aggregates repeated items
first and keeps every guarantee.
"""

from __future__ import annotations

import csv
import heapq
import io
import itertools
import struct
from typing import Any, Iterable, NamedTuple

import numpy as np

from ..errors import DomainError, IncompatibleSketchError
from . import _codec


class HeavyHitter(NamedTuple):
    item: Any
    count: int
    guaranteed: bool


class SpaceSaving:
    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise DomainError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.total = 0
        self._counters: dict[Any, list[int]] = {}
        self._heap: list[tuple[int, int, Any]] = []
        self._tick = itertools.count()

    def __len__(self) -> int:
        return len(self._counters)

    @property
    def counters(self) -> list[tuple[Any, int, int]]:
        """``(item, count, error)`` sorted by count, highest first."""
        rows = [(item, c, e) for item, (c, e) in self._counters.items()]
        rows.sort(key=lambda r: -r[1])
        return rows

    def _push(self, item: Any, count: int) -> None:
        heapq.heappush(self._heap, (count, next(self._tick), item))
        if len(self._heap) > 4 * self.capacity + 64:
            self._rebuild_heap()

    def _rebuild_heap(self) -> None:
        self._heap = [(c, next(self._tick), item) for item, (c, _) in self._counters.items()]
        heapq.heapify(self._heap)

    def _pop_min(self) -> tuple[Any, int]:
        while True:
            count, _, item = heapq.heappop(self._heap)
            entry = self._counters.get(item)
            if entry is not None and entry[0] == count:
                return item, count

    def min_count(self) -> int:
        """Upper bound on the true count of any untracked item."""
        if len(self._counters) < self.capacity:
            return 0
        while True:
            count, _, item = self._heap[0]
            entry = self._counters.get(item)
            if entry is not None and entry[0] == count:
                return count
            heapq.heappop(self._heap)

    def add(self, item: Any, count: int = 1) -> None:
        if count < 0:
            raise DomainError("counts must be non-negative")
        if isinstance(item, np.generic):
            item = item.item()
        if count == 0:
            return
        self.total += count
        entry = self._counters.get(item)
        if entry is not None:
            entry[0] += count
            self._push(item, entry[0])
        elif len(self._counters) < self.capacity:
            self._counters[item] = [count, 0]
            self._push(item, count)
        else:
            victim, floor = self._pop_min()
            del self._counters[victim]
            self._counters[item] = [floor + count, floor]
            self._push(item, floor + count)

    def add_many(self, items: Iterable[Any] | np.ndarray) -> None:
        """Ingest a batch, aggregating duplicates into weighted updates."""
        if isinstance(items, np.ndarray) and items.dtype.kind in "iu":
            values, counts = np.unique(items, return_counts=True)
            for v, c in zip(values.tolist(), counts.tolist()):
                self.add(v, c)
            return
        agg: dict[Any, int] = {}
        for x in items:
            agg[x] = agg.get(x, 0) + 1
        for x, c in agg.items():
            self.add(x, c)

    def estimate(self, item: Any) -> int:
        entry = self._counters.get(item)
        return entry[0] if entry is not None else self.min_count()

    def error(self, item: Any) -> int:
        entry = self._counters.get(item)
        return entry[1] if entry is not None else self.min_count()

    def heavy_hitters(self, k: int) -> list[HeavyHitter]:
        """Top-``k`` counters; ``guaranteed`` when ``count - error`` beats counter ``k + 1``."""
        if not 1 <= k <= self.capacity:
            raise DomainError(f"k must lie in [1, {self.capacity}]")
        rows = self.counters
        if len(rows) > k:
            threshold = rows[k][1]
        else:
            threshold = self.min_count()
        return [HeavyHitter(item, c, c - e >= threshold) for item, c, e in rows[:k]]

    def _check_compatible(self, other: object) -> None:
        if not isinstance(other, SpaceSaving) or other.capacity != self.capacity:
            raise IncompatibleSketchError("Space-Saving summaries differ in capacity")

    def merge(self, other: SpaceSaving) -> SpaceSaving:
        """Union of counters, then truncation to capacity.

        An item tracked on one side only is charged the other side's minimum
        counter (the most it could have been seen there), both as count and
        as error, so estimates stay upper bounds.
        """
        self._check_compatible(other)
        floor_a, floor_b = self.min_count(), other.min_count()
        merged: dict[Any, list[int]] = {}
        for item, (c, e) in self._counters.items():
            if item in other._counters:
                oc, oe = other._counters[item]
                merged[item] = [c + oc, e + oe]
            else:
                merged[item] = [c + floor_b, e + floor_b]
        for item, (c, e) in other._counters.items():
            if item not in merged:
                merged[item] = [c + floor_a, e + floor_a]
        ranked = sorted(merged.items(), key=lambda kv: -kv[1][0])[: self.capacity]
        out = SpaceSaving(self.capacity)
        out.total = self.total + other.total
        out._counters = {item: list(v) for item, v in ranked}
        out._rebuild_heap()
        return out

    def copy(self) -> SpaceSaving:
        out = SpaceSaving(self.capacity)
        out.total = self.total
        out._counters = {item: list(v) for item, v in self._counters.items()}
        out._rebuild_heap()
        return out

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, SpaceSaving)
            and self.capacity == other.capacity
            and self.total == other.total
            and self._counters == other._counters
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["item", "count", "error"])
        for item, c, e in self.counters:
            writer.writerow([item.decode("utf-8", "backslashreplace") if isinstance(item, bytes) else item, c, e])
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        parts = []
        for item, (c, e) in self._counters.items():
            if isinstance(item, int):
                parts.append(struct.pack("<Bq", 0, item))
            elif isinstance(item, (bytes, str)):
                raw = item if isinstance(item, bytes) else item.encode("utf-8")
                parts.append(struct.pack("<BI", 1 if isinstance(item, bytes) else 2, len(raw)) + raw)
            else:
                raise DomainError(f"cannot serialize item of type {type(item).__name__}")
            parts.append(struct.pack("<QQ", c, e))
        params = {"capacity": self.capacity, "total": self.total, "n": len(self._counters)}
        return _codec.pack(_codec.KIND_SPACE_SAVING, params, b"".join(parts))

    @classmethod
    def from_bytes(cls, data: bytes) -> SpaceSaving:
        kind, p, payload = _codec.unpack(data)
        _codec.expect_kind(kind, _codec.KIND_SPACE_SAVING)
        out = cls(p["capacity"])
        out.total = p["total"]
        pos = 0
        for _ in range(p["n"]):
            tag = payload[pos]
            if tag == 0:
                (item,) = struct.unpack_from("<q", payload, pos + 1)
                pos += 9
            else:
                (length,) = struct.unpack_from("<I", payload, pos + 1)
                raw = payload[pos + 5:pos + 5 + length]
                item = raw if tag == 1 else raw.decode("utf-8")
                pos += 5 + length
            c, e = struct.unpack_from("<QQ", payload, pos)
            pos += 16
            out._counters[item] = [c, e]
        out._rebuild_heap()
        return out
