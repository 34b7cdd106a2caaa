"""Bounded-memory stream summaries."""

from __future__ import annotations

from typing import Any, Union

from ..errors import DomainError, IncompatibleSketchError, UnsupportedOperationError
from . import _codec
from .bloom import BloomFilter, Membership, bloom_plan
from .countmin import CountMinSketch, DyadicCountMin
from .hll import HyperLogLog, hll_plan
from .preset import SketchBundle
from .projection import SparseRandomProjection
from .reservoir import DampedReservoir, sampling_relative_error, uniform_downsample
from .spacesaving import HeavyHitter, SpaceSaving
from .tdigest import TDigest

Summary = Union[BloomFilter, CountMinSketch, DyadicCountMin, HyperLogLog, SpaceSaving, TDigest, DampedReservoir]

_BYTE_DOMAIN = (BloomFilter, CountMinSketch, HyperLogLog, SpaceSaving)

_KINDS = {
    _codec.KIND_BLOOM: BloomFilter,
    _codec.KIND_CMS: CountMinSketch,
    _codec.KIND_DYADIC: DyadicCountMin,
    _codec.KIND_HLL: HyperLogLog,
    _codec.KIND_SPACE_SAVING: SpaceSaving,
    _codec.KIND_TDIGEST: TDigest,
    _codec.KIND_PROJECTION: SparseRandomProjection,
    _codec.KIND_RESERVOIR: DampedReservoir,
}


def ingest(summary: Summary, item: Any, weight: int | float | None = None) -> Summary:
    """Feed one item (optionally weighted) to any summary and return it."""
    if isinstance(summary, _BYTE_DOMAIN):
        if not isinstance(item, (bytes, bytearray, str, int)) or isinstance(item, bool):
            raise DomainError(f"{type(summary).__name__} ingests bytes, str or int items")
        if weight is None:
            summary.add(item)
        elif isinstance(summary, (CountMinSketch, SpaceSaving)):
            summary.add(item, int(weight))
        else:
            raise DomainError(f"{type(summary).__name__} does not take weights")
    elif isinstance(summary, DyadicCountMin):
        summary.add(item, 1 if weight is None else int(weight))
    elif isinstance(summary, TDigest):
        if isinstance(item, (bytes, str)):
            raise DomainError("t-digest ingests real scalars")
        summary.add(float(item), 1.0 if weight is None else float(weight))
    elif isinstance(summary, DampedReservoir):
        summary.step(item)
    else:
        raise DomainError(f"not a summary: {type(summary).__name__}")
    return summary


def merge(a: Summary, b: Summary) -> Summary:
    """Merge two summaries of the same kind and parameters into a new one."""
    if isinstance(a, DampedReservoir) or isinstance(b, DampedReservoir):
        raise UnsupportedOperationError("damped reservoirs are not mergeable")
    if type(a) is not type(b):
        raise IncompatibleSketchError(f"cannot merge {type(a).__name__} with {type(b).__name__}")
    return a.merge(b)


def loads(data: bytes) -> Any:
    """Deserialize any summary from its binary envelope."""
    kind, _, _ = _codec.unpack(data)
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise DomainError(f"unknown summary kind {kind}") from None
    return cls.from_bytes(data)


__all__ = [
    "BloomFilter", "CountMinSketch", "DampedReservoir", "DyadicCountMin", "HeavyHitter",
    "HyperLogLog", "Membership", "SketchBundle", "SpaceSaving", "SparseRandomProjection",
    "Summary", "TDigest", "bloom_plan", "hll_plan", "ingest", "loads", "merge",
    "sampling_relative_error", "uniform_downsample",
]
