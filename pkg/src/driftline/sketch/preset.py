"""Combined multi-sketch preset sized from one target error rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from .bloom import BloomFilter, bloom_plan
from .countmin import CountMinSketch
from .hll import HyperLogLog
from .spacesaving import SpaceSaving


@dataclass
class SketchBundle:
    """Bloom filter, count-min, Space-Saving and HyperLogLog fed together."""

    bloom: BloomFilter
    cms: CountMinSketch
    heavy: SpaceSaving
    hll: HyperLogLog
    chunk: int = field(default=1 << 20)

    @classmethod
    def preset(
        cls,
        n_distinct: int,
        error: float = 0.04,
        bloom_bits_per_item: float = 5.0,
        delta: float = 0.01,
        seed: int = 0,
    ) -> SketchBundle:
        """Size every member for ``error``.

        Count-min uses ``epsilon = error``, Space-Saving keeps ``ceil(1 / error)``
        counters and HyperLogLog takes the smallest precision whose standard
        error is at most ``error``.  The Bloom filter is budgeted in bits per
        expected distinct item, because a filter at ``error`` false positives
        would by itself need about 6.7 bits per item.
        """
        m_bits = int(math.ceil(n_distinct * bloom_bits_per_item))
        k, _ = bloom_plan(n_distinct, m_bits)
        p = max(4, math.ceil(math.log2((1.04 / error) ** 2)))
        return cls(
            bloom=BloomFilter(m_bits, k, seed),
            cms=CountMinSketch.from_error(error, delta, seed + 1),
            heavy=SpaceSaving(math.ceil(1 / error)),
            hll=HyperLogLog(p, seed + 2),
        )

    def add(self, item: Any) -> None:
        self.bloom.add(item)
        self.cms.add(item)
        self.heavy.add(item)
        self.hll.add(item)

    def add_many(self, items: Iterable[Any] | np.ndarray) -> None:
        arr = items if isinstance(items, np.ndarray) else np.asarray(list(items))
        for start in range(0, len(arr), self.chunk):
            block = arr[start:start + self.chunk]
            self.bloom.add_many(block)
            self.cms.add_many(block)
            self.heavy.add_many(block)
            self.hll.add_many(block)

    def serialized(self) -> dict[str, bytes]:
        return {
            "bloom": self.bloom.to_bytes(),
            "cms": self.cms.to_bytes(),
            "space_saving": self.heavy.to_bytes(),
            "hll": self.hll.to_bytes(),
        }

    def serialized_size(self) -> int:
        return sum(len(b) for b in self.serialized().values())
