"""HyperLogLog cardinality estimator over 64-bit hashes.

Registers hold ranks up to ``64 - p + 1`` and are stored six bits apiece
when serialized.  Small cardinalities switch to linear counting below
``2.5 m``; no large-range correction is needed with a 64-bit hash.
"""

from __future__ import annotations

import math
from typing import Any, Iterable

import numpy as np

from .. import hashing
from ..errors import DomainError, IncompatibleSketchError
from . import _codec

REGISTER_BITS = 6


def _alpha(m: int) -> float:
    if m == 16:
        return 0.673
    if m == 32:
        return 0.697
    if m == 64:
        return 0.709
    return 0.7213 / (1.0 + 1.079 / m)


def hll_plan(target_error: float, register_bits: int = 5) -> dict[str, float]:
    """Register count and memory needed for a target relative standard error.

    Returns the unrounded register count ``(1.04 / err) ** 2``, the nearest
    power-of-two precision, and the memory in bytes for both.
    """
    if not 0 < target_error < 1:
        raise DomainError("target_error must lie in (0, 1)")
    m_exact = (1.04 / target_error) ** 2
    p = min(18, max(4, round(math.log2(m_exact))))
    return {
        "registers_exact": m_exact,
        "memory_bytes_exact": m_exact * register_bits / 8,
        "precision": p,
        "registers": 1 << p,
        "memory_bytes": (1 << p) * register_bits / 8,
        "standard_error": 1.04 / math.sqrt(1 << p),
    }


def _bit_length(v: np.ndarray) -> np.ndarray:
    """Exact bit length of non-negative uint64 values (0 for 0)."""
    _, exp = np.frexp(v.astype(np.float64))
    exp = exp.astype(np.int64)
    # float rounding can push 2**k - 1 up to 2**k; correct downward
    safe = np.clip(exp - 1, 0, 63).astype(np.uint64)
    too_big = (exp > 0) & ((np.uint64(1) << safe) > v)
    exp[too_big] -= 1
    return exp


class HyperLogLog:
    def __init__(self, p: int = 12, seed: int = 0) -> None:
        if not 4 <= p <= 18:
            raise DomainError(f"precision p must lie in [4, 18], got {p}")
        self.p = int(p)
        self.m = 1 << self.p
        self.seed = int(seed)
        self.hash_seed = hashing.derive_seeds(self.seed, 1)[0]
        self.registers = np.zeros(self.m, dtype=np.uint8)

    @property
    def standard_error(self) -> float:
        return 1.04 / math.sqrt(self.m)

    def _rank_index(self, h: int) -> tuple[int, int]:
        q = 64 - self.p
        idx = h >> q
        rest = h & ((1 << q) - 1)
        return idx, q - rest.bit_length() + 1

    def add(self, item: Any) -> None:
        h = hashing.hash64(hashing.item_key(item), self.hash_seed)
        idx, rank = self._rank_index(h)
        if rank > self.registers[idx]:
            self.registers[idx] = rank

    def add_many(self, items: Iterable[Any] | np.ndarray) -> None:
        h = hashing.hash64_array(hashing.keys_array(items), self.hash_seed)
        q = 64 - self.p
        idx = (h >> np.uint64(q)).astype(np.int64)
        rest = h & np.uint64((1 << q) - 1)
        ranks = (q - _bit_length(rest) + 1).astype(np.uint8)
        np.maximum.at(self.registers, idx, ranks)

    def cardinality(self) -> float:
        regs = self.registers.astype(np.float64)
        raw = _alpha(self.m) * self.m * self.m / float(np.sum(np.exp2(-regs)))
        zeros = int(np.count_nonzero(self.registers == 0))
        if raw <= 2.5 * self.m and zeros > 0:
            return self.m * math.log(self.m / zeros)
        return raw

    def _check_compatible(self, other: object) -> None:
        if not isinstance(other, HyperLogLog) or (self.p, self.seed) != (other.p, other.seed):
            raise IncompatibleSketchError("HyperLogLog sketches differ in precision or seed")

    def merge(self, other: HyperLogLog) -> HyperLogLog:
        self._check_compatible(other)
        out = self.copy()
        np.maximum(self.registers, other.registers, out=out.registers)
        return out

    def copy(self) -> HyperLogLog:
        out = HyperLogLog.__new__(HyperLogLog)
        out.__dict__.update(self.__dict__)
        out.registers = self.registers.copy()
        return out

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, HyperLogLog)
            and (self.p, self.seed) == (other.p, other.seed)
            and bool(np.array_equal(self.registers, other.registers))
        )

    def to_bytes(self) -> bytes:
        bits = np.unpackbits(self.registers[:, None], axis=1)[:, 8 - REGISTER_BITS:]
        payload = np.packbits(bits.ravel()).tobytes()
        return _codec.pack(_codec.KIND_HLL, {"p": self.p, "seed": self.seed}, payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> HyperLogLog:
        kind, params, payload = _codec.unpack(data)
        _codec.expect_kind(kind, _codec.KIND_HLL)
        out = cls(params["p"], params["seed"])
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=out.m * REGISTER_BITS)
        bits = bits.reshape(out.m, REGISTER_BITS)
        full = np.zeros((out.m, 8), dtype=np.uint8)
        full[:, 8 - REGISTER_BITS:] = bits
        out.registers = np.packbits(full, axis=1).ravel()
        return out
