"""Merging t-digest with the arcsine scale function.

Incoming values collect in a buffer; when it fills, buffer and centroids
are sorted together and merged left to right while the scale-function
distance between a cluster's left and right quantile stays within one.
"""

from __future__ import annotations

import csv
import io
import math
from typing import Iterable

import numpy as np

from ..errors import DomainError, EmptySummaryError, IncompatibleSketchError
from . import _codec


class TDigest:
    def __init__(self, compression: float = 100.0, buffer_factor: int = 5) -> None:
        if compression < 10:
            raise DomainError("compression must be >= 10")
        self.compression = float(compression)
        self.buffer_factor = int(buffer_factor)
        self._means = np.zeros(0)
        self._weights = np.zeros(0)
        self._buf: list[float] = []
        self._buf_w: list[float] = []
        self.total_weight = 0.0
        self.min = math.inf
        self.max = -math.inf

    def _k(self, q: float) -> float:
        return self.compression / (2 * math.pi) * math.asin(2 * q - 1)

    def _k_inv(self, k: float) -> float:
        arg = 2 * math.pi * k / self.compression
        if arg >= math.pi / 2:
            return 1.0
        return (math.sin(arg) + 1) / 2

    def add(self, x: float, w: float = 1.0) -> None:
        x = float(x)
        if not math.isfinite(x):
            raise DomainError("t-digest values must be finite")
        if w <= 0:
            raise DomainError("weights must be positive")
        self._buf.append(x)
        self._buf_w.append(float(w))
        self.total_weight += w
        if x < self.min:
            self.min = x
        if x > self.max:
            self.max = x
        if len(self._buf) >= self.buffer_factor * self.compression:
            self._compress()

    def add_many(self, xs: Iterable[float] | np.ndarray) -> None:
        arr = np.asarray(xs, dtype=np.float64).ravel()
        if arr.size == 0:
            return
        if not np.all(np.isfinite(arr)):
            raise DomainError("t-digest values must be finite")
        step = int(self.buffer_factor * self.compression)
        for start in range(0, arr.size, step):
            chunk = arr[start:start + step]
            self._buf.extend(chunk.tolist())
            self._buf_w.extend([1.0] * chunk.size)
            self.total_weight += chunk.size
            self.min = min(self.min, float(chunk.min()))
            self.max = max(self.max, float(chunk.max()))
            self._compress()

    def _compress(self) -> None:
        if not self._buf:
            return
        means = np.concatenate([self._means, np.asarray(self._buf)])
        weights = np.concatenate([self._weights, np.asarray(self._buf_w)])
        self._buf, self._buf_w = [], []
        order = np.argsort(means, kind="stable")
        self._means, self._weights = self._merge_sorted(means[order].tolist(), weights[order].tolist())

    def _merge_sorted(self, means: list[float], weights: list[float]) -> tuple[np.ndarray, np.ndarray]:
        total = sum(weights)
        out_m: list[float] = []
        out_w: list[float] = []
        cur_m, cur_w = means[0], weights[0]
        q0 = 0.0
        q_limit = self._k_inv(self._k(q0) + 1.0) * total
        for m, w in zip(means[1:], weights[1:]):
            if q0 + cur_w + w <= q_limit:
                cur_w += w
                cur_m += (m - cur_m) * w / cur_w
            else:
                out_m.append(cur_m)
                out_w.append(cur_w)
                q0 += cur_w
                q_limit = self._k_inv(self._k(min(1.0, q0 / total)) + 1.0) * total
                cur_m, cur_w = m, w
        out_m.append(cur_m)
        out_w.append(cur_w)
        return np.asarray(out_m), np.asarray(out_w)

    @property
    def centroids(self) -> list[tuple[float, float]]:
        self._compress()
        return list(zip(self._means.tolist(), self._weights.tolist()))

    def quantile(self, q: float) -> float:
        if not 0.0 <= q <= 1.0:
            raise DomainError("q must lie in [0, 1]")
        if self.total_weight == 0:
            raise EmptySummaryError("quantile of an empty t-digest")
        self._compress()
        if q == 0.0:
            return self.min
        if q == 1.0:
            return self.max
        centers = np.cumsum(self._weights) - self._weights / 2
        xs = np.concatenate([[0.0], centers, [self.total_weight]])
        ys = np.concatenate([[self.min], self._means, [self.max]])
        return float(np.interp(q * self.total_weight, xs, ys))

    def cdf(self, x: float) -> float:
        if self.total_weight == 0:
            raise EmptySummaryError("cdf of an empty t-digest")
        self._compress()
        if x < self.min:
            return 0.0
        if x >= self.max:
            return 1.0
        centers = np.cumsum(self._weights) - self._weights / 2
        xs = np.concatenate([[self.min], self._means, [self.max]])
        ys = np.concatenate([[0.0], centers, [self.total_weight]])
        return float(np.interp(x, xs, ys) / self.total_weight)

    def merge(self, other: TDigest) -> TDigest:
        if not isinstance(other, TDigest) or other.compression != self.compression:
            raise IncompatibleSketchError("t-digests differ in compression")
        out = self.copy()
        other_c = other.centroids
        out._compress()
        means = np.concatenate([out._means, np.asarray([m for m, _ in other_c])])
        weights = np.concatenate([out._weights, np.asarray([w for _, w in other_c])])
        out.total_weight = self.total_weight + other.total_weight
        out.min = min(self.min, other.min)
        out.max = max(self.max, other.max)
        if means.size:
            order = np.argsort(means, kind="stable")
            out._means, out._weights = out._merge_sorted(means[order].tolist(), weights[order].tolist())
        return out

    def copy(self) -> TDigest:
        out = TDigest(self.compression, self.buffer_factor)
        out._means = self._means.copy()
        out._weights = self._weights.copy()
        out._buf = list(self._buf)
        out._buf_w = list(self._buf_w)
        out.total_weight = self.total_weight
        out.min, out.max = self.min, self.max
        return out

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TDigest) and self.to_bytes() == other.to_bytes()

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["mean", "weight"])
        for m, w in self.centroids:
            writer.writerow([repr(m), repr(w)])
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        self._compress()
        params = {
            "compression": self.compression,
            "buffer_factor": self.buffer_factor,
            "total_weight": self.total_weight,
            "min": self.min if self.total_weight else None,
            "max": self.max if self.total_weight else None,
            "n": int(self._means.size),
        }
        payload = self._means.astype("<f8").tobytes() + self._weights.astype("<f8").tobytes()
        return _codec.pack(_codec.KIND_TDIGEST, params, payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> TDigest:
        kind, p, payload = _codec.unpack(data)
        _codec.expect_kind(kind, _codec.KIND_TDIGEST)
        out = cls(p["compression"], p["buffer_factor"])
        n = p["n"]
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        out._means, out._weights = arr[:n].copy(), arr[n:2 * n].copy()
        out.total_weight = p["total_weight"]
        if out.total_weight:
            out.min, out.max = p["min"], p["max"]
        return out
