"""Bloom filter with k independently seeded 64-bit hashes."""

from __future__ import annotations

import enum
import math
from typing import Any, Iterable

import numpy as np

from .. import hashing
from ..errors import DomainError, IncompatibleSketchError
from . import _codec


class Membership(enum.Enum):
    DEFINITELY_ABSENT = "definitely-absent"
    MAYBE_PRESENT = "maybe-present"

    def __bool__(self) -> bool:
        return self is Membership.MAYBE_PRESENT


def bloom_plan(n_expected: int, m_bits: int) -> tuple[int, float]:
    """Optimal hash count and predicted false-positive rate.

    ``k = round((m / n) ln 2)`` clamped to ``[1, 64]`` and
    ``fpr = (1 - exp(-k n / m)) ** k``.
    """
    if m_bits < 1:
        raise DomainError("m_bits must be >= 1")
    if n_expected < 1:
        raise DomainError("n_expected must be >= 1")
    if m_bits < n_expected:
        raise DomainError("m_bits must be >= n_expected")
    k = min(64, max(1, round(m_bits / n_expected * math.log(2))))
    fpr = (1.0 - math.exp(-k * n_expected / m_bits)) ** k
    return k, fpr


class BloomFilter:
    """Fixed-size set membership filter; never returns false negatives."""

    def __init__(self, m_bits: int, k: int, seed: int = 0) -> None:
        if m_bits < 1:
            raise DomainError("m_bits must be >= 1")
        if not 1 <= k <= 64:
            raise DomainError("k must lie in [1, 64]")
        self.m = int(m_bits)
        self.k = int(k)
        self.seed = int(seed)
        self.seeds = hashing.derive_seeds(self.seed, self.k)
        self.bits = np.zeros(self.m, dtype=bool)
        self.inserted = 0

    @classmethod
    def for_capacity(cls, n_expected: int, bits_per_item: float = 10.0, seed: int = 0) -> BloomFilter:
        m = max(1, int(math.ceil(n_expected * bits_per_item)))
        k, _ = bloom_plan(n_expected, m)
        return cls(m, k, seed)

    def _positions(self, key: int) -> list[int]:
        return [hashing.hash64(key, s) % self.m for s in self.seeds]

    def add(self, item: Any) -> None:
        key = hashing.item_key(item)
        for pos in self._positions(key):
            self.bits[pos] = True
        self.inserted += 1

    def add_many(self, items: Iterable[Any] | np.ndarray) -> None:
        keys = hashing.keys_array(items)
        m = np.uint64(self.m)
        for s in self.seeds:
            self.bits[hashing.hash64_array(keys, s) % m] = True
        self.inserted += len(keys)

    def contains(self, item: Any) -> Membership:
        key = hashing.item_key(item)
        for pos in self._positions(key):
            if not self.bits[pos]:
                return Membership.DEFINITELY_ABSENT
        return Membership.MAYBE_PRESENT

    __contains__ = contains

    def contains_many(self, items: Iterable[Any] | np.ndarray) -> np.ndarray:
        """Boolean array, True where the item is maybe-present."""
        keys = hashing.keys_array(items)
        m = np.uint64(self.m)
        out = np.ones(len(keys), dtype=bool)
        for s in self.seeds:
            out &= self.bits[hashing.hash64_array(keys, s) % m]
        return out

    def expected_fpr(self) -> float:
        """Predicted false-positive rate for the current number of inserts."""
        if self.inserted == 0:
            return 0.0
        return (1.0 - math.exp(-self.k * self.inserted / self.m)) ** self.k

    def _check_compatible(self, other: object) -> None:
        if not isinstance(other, BloomFilter):
            raise IncompatibleSketchError(f"cannot merge BloomFilter with {type(other).__name__}")
        if (self.m, self.k, self.seed) != (other.m, other.k, other.seed):
            raise IncompatibleSketchError("Bloom filters differ in size, hash count or seed")

    def merge(self, other: BloomFilter) -> BloomFilter:
        self._check_compatible(other)
        out = self.copy()
        out.bits |= other.bits
        out.inserted += other.inserted
        return out

    def copy(self) -> BloomFilter:
        out = BloomFilter.__new__(BloomFilter)
        out.__dict__.update(self.__dict__)
        out.seeds = list(self.seeds)
        out.bits = self.bits.copy()
        return out

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, BloomFilter)
            and (self.m, self.k, self.seed, self.inserted) == (other.m, other.k, other.seed, other.inserted)
            and bool(np.array_equal(self.bits, other.bits))
        )

    def to_bytes(self) -> bytes:
        params = {"m": self.m, "k": self.k, "seed": self.seed, "inserted": self.inserted}
        return _codec.pack(_codec.KIND_BLOOM, params, np.packbits(self.bits, bitorder="little").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> BloomFilter:
        kind, p, payload = _codec.unpack(data)
        _codec.expect_kind(kind, _codec.KIND_BLOOM)
        out = cls(p["m"], p["k"], p["seed"])
        packed = np.frombuffer(payload, dtype=np.uint8)
        out.bits = np.unpackbits(packed, count=out.m, bitorder="little").astype(bool)
        out.inserted = p["inserted"]
        return out
