"""Key-based join of primary events with delayed feedback under a watermark.

Matching is first-come 1:1 per key: a new event joins the oldest buffered
event of the opposite side with the same key.  The watermark trails the
largest observed event time by ``watermark_lag``; buffered entries older
than ``watermark - timeout`` expire and are reported, never dropped.
"""

from __future__ import annotations

import json
import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

from .errors import BackpressureError, ConfigError, DomainError

PRIMARY = "primary"
FEEDBACK = "feedback"


@dataclass(frozen=True)
class PrimaryEvent:
    key: Any
    timestamp: int
    features: Any

    def __post_init__(self) -> None:
        if self.key is None or self.key == "":
            raise DomainError("key must be non-empty")
        if self.timestamp < 0:
            raise DomainError("timestamp must be >= 0")


@dataclass(frozen=True)
class FeedbackEvent:
    key: Any
    timestamp: int
    label: Any
    weak: bool = False

    def __post_init__(self) -> None:
        if self.key is None or self.key == "":
            raise DomainError("key must be non-empty")


@dataclass(frozen=True)
class JoinedExample:
    key: Any
    features: Any
    label: Any
    primary_ts: int
    feedback_ts: int
    weak: bool = False

    @property
    def join_latency(self) -> int:
        return self.feedback_ts - self.primary_ts

    def to_json(self) -> dict[str, Any]:
        feats = list(self.features) if isinstance(self.features, tuple) else self.features
        return {
            "key": self.key, "features": feats, "label": self.label,
            "primary_ts": self.primary_ts, "feedback_ts": self.feedback_ts,
            "join_latency": self.join_latency, "weak": self.weak,
        }


@dataclass(frozen=True)
class Expiration:
    key: Any
    side: str
    age: int


@dataclass
class JoinerConfig:
    watermark_lag: int = 0
    timeout: int = 60_000
    max_buffer: int = 100_000

    def __post_init__(self) -> None:
        if self.watermark_lag < 0:
            raise ConfigError("must be >= 0", "joiner.watermark_lag")
        if self.timeout < self.watermark_lag:
            raise ConfigError("must be >= watermark_lag", "joiner.timeout")
        if self.max_buffer < 1:
            raise ConfigError("must be >= 1", "joiner.max_buffer")


@dataclass
class JoinStats:
    offered_primary: int = 0
    offered_feedback: int = 0
    joined: int = 0
    expired_primary: int = 0
    expired_feedback: int = 0

    @property
    def label_coverage(self) -> float:
        return self.joined / self.offered_primary if self.offered_primary else 0.0


class StreamJoiner:
    """Single-writer join state; feed it one ordered event queue."""

    def __init__(self, config: JoinerConfig | None = None) -> None:
        self.config = config or JoinerConfig()
        self.watermark: int | None = None
        self.stats = JoinStats()
        self._pending: dict[str, dict[Any, deque]] = {PRIMARY: {}, FEEDBACK: {}}
        # live tokens (ts, seq) -> key per side, plus a lazy min-heap for expiry
        self._order: dict[str, dict] = {PRIMARY: {}, FEEDBACK: {}}
        self._heap: dict[str, list] = {PRIMARY: [], FEEDBACK: []}
        self._seq = 0
        self._buffered = 0

    @property
    def buffered(self) -> int:
        return self._buffered

    def buffered_on(self, side: str) -> int:
        return len(self._order[side])

    def _buffer(self, side: str, key: Any, ts: int, event: Any) -> None:
        if self._buffered >= self.config.max_buffer:
            raise BackpressureError(f"join buffer full ({self.config.max_buffer} records)")
        self._seq += 1
        token = (ts, self._seq)
        self._pending[side].setdefault(key, deque()).append((token, event))
        self._order[side][token] = key
        heapq.heappush(self._heap[side], token)
        self._buffered += 1

    def _take(self, side: str, key: Any) -> Any | None:
        queue = self._pending[side].get(key)
        if not queue:
            return None
        token, event = queue.popleft()
        if not queue:
            del self._pending[side][key]
        del self._order[side][token]
        self._buffered -= 1
        return event

    def offer_primary(self, e: PrimaryEvent) -> list[JoinedExample]:
        self.stats.offered_primary += 1
        fb = self._take(FEEDBACK, e.key)
        if fb is None:
            self._buffer(PRIMARY, e.key, e.timestamp, e)
            return []
        self.stats.joined += 1
        return [JoinedExample(e.key, e.features, fb.label, e.timestamp, fb.timestamp, fb.weak)]

    def offer_feedback(self, f: FeedbackEvent) -> list[JoinedExample]:
        self.stats.offered_feedback += 1
        pr = self._take(PRIMARY, f.key)
        if pr is None:
            self._buffer(FEEDBACK, f.key, f.timestamp, f)
            return []
        self.stats.joined += 1
        return [JoinedExample(f.key, pr.features, f.label, pr.timestamp, f.timestamp, f.weak)]

    def advance_watermark(self, observed_ts: int) -> list[Expiration]:
        """Move the watermark forward and expire entries older than ``watermark - timeout``."""
        candidate = observed_ts - self.config.watermark_lag
        if self.watermark is None or candidate > self.watermark:
            self.watermark = candidate
        cutoff = self.watermark - self.config.timeout
        out: list[Expiration] = []
        for side in (PRIMARY, FEEDBACK):
            order, heap = self._order[side], self._heap[side]
            expired = 0
            while heap and heap[0][0] < cutoff:
                token = heapq.heappop(heap)
                key = order.pop(token, None)
                if key is None:
                    continue  # already matched
                queue = self._pending[side][key]
                for i, (tok, _) in enumerate(queue):
                    if tok == token:
                        del queue[i]
                        break
                if not queue:
                    del self._pending[side][key]
                self._buffered -= 1
                expired += 1
                out.append(Expiration(key, side, self.watermark - token[0]))
            if len(heap) > 4 * len(order) + 64:
                self._heap[side] = sorted(order)
            if side == PRIMARY:
                self.stats.expired_primary += expired
            else:
                self.stats.expired_feedback += expired
        return out

    def drain(self) -> Iterator[tuple[str, Any]]:
        """Remaining buffered events, oldest first."""
        for side in (PRIMARY, FEEDBACK):
            for token in sorted(self._order[side]):
                yield side, self._order[side][token]


def parse_event(record: dict[str, Any]) -> PrimaryEvent | FeedbackEvent:
    """Decode one JSONL input record (``key``, ``ts`` and ``features`` or ``label``)."""
    for name in ("key", "ts"):
        if name not in record:
            raise DomainError(f"missing required field {name!r}")
    if "features" in record:
        feats = record["features"]
        return PrimaryEvent(record["key"], int(record["ts"]), tuple(feats) if isinstance(feats, list) else feats)
    if "label" in record:
        return FeedbackEvent(record["key"], int(record["ts"]), record["label"], bool(record.get("weak", False)))
    raise DomainError("record needs either 'features' or 'label'")


def read_jsonl(lines: Iterable[str]) -> Iterator[PrimaryEvent | FeedbackEvent]:
    for line in lines:
        line = line.strip()
        if line:
            yield parse_event(json.loads(line))
