"""Exponentially damped reservoir and the uniform down-sampling baseline.

The damped reservoir is a weighted reservoir (Chao's scheme): each arriving
item carries the current insertion weight ``w``; while the reservoir is
full it replaces a uniformly chosen slot with probability
``capacity * w / W`` where ``W`` is the total weight seen.  Decay is applied
forward: every ``decay_period`` events the insertion weight is divided by
``decay_factor``, which is the same as multiplying all earlier weight by
``decay_factor``.  Weights are rescaled once they exceed 1e12.
"""

from __future__ import annotations

import json
import math
import random
from typing import Any, Sequence

import numpy as np

from ..errors import DomainError, UnsupportedOperationError
from . import _codec

RENORMALIZE_ABOVE = 1e12


class DampedReservoir:
    def __init__(
        self,
        capacity: int,
        decay_factor: float = 1.0,
        decay_period: int = 1,
        seed: int = 0,
    ) -> None:
        if capacity < 1:
            raise DomainError("capacity must be >= 1")
        if not 0.0 < decay_factor <= 1.0:
            raise DomainError("decay_factor must lie in (0, 1]")
        if decay_period < 1:
            raise DomainError("decay_period must be >= 1")
        self.capacity = int(capacity)
        self.decay_factor = float(decay_factor)
        self.decay_period = int(decay_period)
        self.seed = int(seed)
        self._rng = random.Random(self.seed)
        self.items: list[Any] = []
        self.weights: list[float] = []
        self.running_weight = 1.0
        self.total_weight = 0.0
        self.seen = 0

    def __len__(self) -> int:
        return len(self.items)

    def step(self, item: Any) -> None:
        w = self.running_weight
        self.total_weight += w
        self.seen += 1
        if len(self.items) < self.capacity:
            self.items.append(item)
            self.weights.append(w)
        elif self._rng.random() < self.capacity * w / self.total_weight:
            slot = self._rng.randrange(self.capacity)
            self.items[slot] = item
            self.weights[slot] = w
        if self.decay_factor < 1.0 and self.seen % self.decay_period == 0:
            self.running_weight /= self.decay_factor
            if self.running_weight > RENORMALIZE_ABOVE:
                self._renormalize()

    add = step

    def _renormalize(self) -> None:
        scale = self.running_weight
        self.running_weight = 1.0
        self.total_weight /= scale
        self.weights = [w / scale for w in self.weights]

    def snapshot(self) -> list[Any]:
        """Immutable point-in-time copy of the sampled items."""
        return list(self.items)

    def merge(self, other: object) -> DampedReservoir:
        raise UnsupportedOperationError("damped reservoirs are not mergeable")

    def to_bytes(self) -> bytes:
        params = {
            "capacity": self.capacity, "decay_factor": self.decay_factor,
            "decay_period": self.decay_period, "seed": self.seed,
            "running_weight": self.running_weight, "total_weight": self.total_weight,
            "seen": self.seen, "rng": _rng_state(self._rng),
        }
        payload = json.dumps({"items": self.items, "weights": self.weights}, sort_keys=True,
                             separators=(",", ":")).encode("utf-8")
        return _codec.pack(_codec.KIND_RESERVOIR, params, payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> DampedReservoir:
        kind, p, payload = _codec.unpack(data)
        _codec.expect_kind(kind, _codec.KIND_RESERVOIR)
        out = cls(p["capacity"], p["decay_factor"], p["decay_period"], p["seed"])
        body = json.loads(payload.decode("utf-8"))
        out.items, out.weights = body["items"], body["weights"]
        out.running_weight, out.total_weight, out.seen = p["running_weight"], p["total_weight"], p["seen"]
        version, internal, gauss = p["rng"]
        out._rng.setstate((version, tuple(internal), gauss))
        return out


def _rng_state(rng: random.Random) -> list:
    version, internal, gauss = rng.getstate()
    return [version, list(internal), gauss]


def uniform_downsample(values: Sequence[Any] | np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample without replacement; the simplest sketcher."""
    arr = np.asarray(values)
    if not 1 <= size <= len(arr):
        raise DomainError("size must lie in [1, len(values)]")
    return arr[rng.choice(len(arr), size=size, replace=False)]


def sampling_relative_error(size: int) -> float:
    """Relative standard error ``size ** -1/2`` of a sample-based estimate."""
    if size < 1:
        raise DomainError("size must be >= 1")
    return 1.0 / math.sqrt(size)
