"""Sparse random projection with an implicit, seed-generated matrix.

Entry ``(i, j)`` is ``+1``, ``-1`` or ``0`` with probabilities 1/6, 1/6 and
2/3, scaled by ``sqrt(3 / d)``.  Entries come from a hash of ``i * D + j``,
so only a block of rows ever exists in memory at once.
"""

from __future__ import annotations

import math

import numpy as np

from .. import hashing
from ..errors import DomainError
from . import _codec


class SparseRandomProjection:
    def __init__(self, input_dim: int, output_dim: int, seed: int = 0, block_rows: int = 64) -> None:
        if not 1 <= output_dim < input_dim:
            raise DomainError("need 1 <= output_dim < input_dim")
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.seed = int(seed)
        self.block_rows = int(block_rows)
        self._hash_seed = hashing.derive_seeds(self.seed, 1)[0]
        self.scale = math.sqrt(3.0 / self.output_dim)

    def _block(self, start: int, stop: int) -> np.ndarray:
        rows = np.arange(start, stop, dtype=np.uint64)[:, None]
        cols = np.arange(self.input_dim, dtype=np.uint64)[None, :]
        h = hashing.hash64_array(rows * np.uint64(self.input_dim) + cols, self._hash_seed) % np.uint64(6)
        out = np.zeros(h.shape, dtype=np.float64)
        out[h == 0] = 1.0
        out[h == 1] = -1.0
        return out

    def project(self, x: np.ndarray) -> np.ndarray:
        """Project a length-``D`` vector, or each row of an ``(n, D)`` array."""
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape[-1] != self.input_dim or arr.ndim not in (1, 2):
            raise DomainError(f"expected trailing dimension {self.input_dim}, got shape {arr.shape}")
        out = np.empty(arr.shape[:-1] + (self.output_dim,))
        for start in range(0, self.output_dim, self.block_rows):
            stop = min(start + self.block_rows, self.output_dim)
            out[..., start:stop] = arr @ self._block(start, stop).T
        return out * self.scale

    def to_bytes(self) -> bytes:
        params = {"input_dim": self.input_dim, "output_dim": self.output_dim, "seed": self.seed,
                  "block_rows": self.block_rows}
        return _codec.pack(_codec.KIND_PROJECTION, params, b"")

    @classmethod
    def from_bytes(cls, data: bytes) -> SparseRandomProjection:
        kind, p, _ = _codec.unpack(data)
        _codec.expect_kind(kind, _codec.KIND_PROJECTION)
        return cls(p["input_dim"], p["output_dim"], p["seed"], p["block_rows"])
