"""Keyed 64-bit hash family used by every sketch.

Items are first reduced to a 64-bit key (integers map to themselves modulo
2**64, bytes and strings go through an 8-byte BLAKE2b digest).  Each hash row
then applies the MurmurHash3 64-bit finalizer to ``key ^ seed``.  The scalar
and vectorised paths produce identical values, so a stream may be ingested
one item at a time or in numpy batches interchangeably.
"""

from __future__ import annotations

import hashlib
from typing import Any, Iterable

import numpy as np

from .errors import DomainError

MASK64 = (1 << 64) - 1

_C1 = 0xFF51AFD7ED558CCD
_C2 = 0xC4CEB9FE1A85EC53
_C1_NP = np.uint64(_C1)
_C2_NP = np.uint64(_C2)
_S33 = np.uint64(33)


def fmix64(k: int) -> int:
    k &= MASK64
    k ^= k >> 33
    k = (k * _C1) & MASK64
    k ^= k >> 33
    k = (k * _C2) & MASK64
    k ^= k >> 33
    return k


def fmix64_array(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=np.uint64).copy()
    with np.errstate(over="ignore"):
        k ^= k >> _S33
        k *= _C1_NP
        k ^= k >> _S33
        k *= _C2_NP
        k ^= k >> _S33
    return k


def item_key(item: Any) -> int:
    """Reduce a stream item to its 64-bit key."""
    if isinstance(item, (bool, np.bool_)):
        raise DomainError("boolean items are ambiguous; encode them as bytes")
    if isinstance(item, (int, np.integer)):
        return int(item) & MASK64
    if isinstance(item, str):
        item = item.encode("utf-8")
    if isinstance(item, (bytes, bytearray, memoryview)):
        return int.from_bytes(hashlib.blake2b(bytes(item), digest_size=8).digest(), "little")
    raise DomainError(f"unsupported item type {type(item).__name__}; expected bytes, str or int")


def keys_array(items: Iterable[Any] | np.ndarray) -> np.ndarray:
    """Vectorised :func:`item_key` returning a ``uint64`` array."""
    if isinstance(items, np.ndarray) and items.dtype.kind in "iu":
        return items.astype(np.int64, copy=False).view(np.uint64) if items.dtype.kind == "i" else items.astype(np.uint64)
    return np.fromiter((item_key(x) for x in items), dtype=np.uint64)


def hash64(key: int, seed: int) -> int:
    return fmix64(key ^ seed)


def hash64_array(keys: np.ndarray, seed: int) -> np.ndarray:
    return fmix64_array(keys ^ np.uint64(seed & MASK64))


def derive_seeds(master: int, n: int) -> list[int]:
    """``n`` well-separated 64-bit seeds from one master seed (splitmix64)."""
    out = []
    state = master & MASK64
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        out.append(fmix64(state) | 1)
    return out
