"""Shared infrastructure: append-only logs, model DB and bounded space.

On-disk layout under one root directory::

    models/    model-<version>.dlmd artifacts + index.json
    training/  training records    seg-<first_seq>.jsonl + index.json
    state/     system-state snapshots (and reservoir-<id>.dlsk snapshots)
    health/    health events
    diag/      diagnostic log (input events, decisions, provenance)

Every log line is ``{"crc": .., "rec": .., "seq": ..}`` where ``crc`` is the
CRC-32 of the canonical JSON of ``rec``.  A segment is sealed by a footer
line carrying the record count and the CRC-32 of all preceding bytes.  On
open, an unterminated or corrupt tail line of the active segment is
truncated away; sealed segments must validate.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from .errors import (
    BackpressureError,
    ConfigError,
    ConflictError,
    DomainError,
    NotFoundError,
    PartialReplayError,
)
from .modelkit import ModelArtifact

LOG_DIRS = {"training": "training", "state": "state", "health": "health", "diagnostic": "diag"}
DEFAULT_BUDGET = 1 << 30
DEFAULT_SEGMENT_CAP = 1 << 20


def canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def _write_json_atomic(path: Path, obj: Any) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(canonical(obj) + "\n")
    os.replace(tmp, path)


@dataclass(frozen=True)
class ProvenanceRecord:
    """Why a lifecycle decision was made: snapshot, rule and shift reports."""

    decision_id: str
    snapshot_id: int
    rule_id: str | None
    report_ids: tuple[str, ...]
    action: dict[str, Any]
    timestamp: int
    reason: str = ""

    def to_json(self) -> dict[str, Any]:
        return {"decision_id": self.decision_id, "snapshot_id": self.snapshot_id, "rule_id": self.rule_id,
                "report_ids": list(self.report_ids), "action": self.action, "ts": self.timestamp,
                "reason": self.reason}

    @classmethod
    def from_json(cls, rec: dict[str, Any]) -> ProvenanceRecord:
        return cls(rec["decision_id"], rec["snapshot_id"], rec["rule_id"], tuple(rec["report_ids"]),
                   rec["action"], rec["ts"], rec.get("reason", ""))


@dataclass
class Segment:
    first_seq: int
    last_seq: int
    sealed: bool
    size: int
    created: int
    pinned: bool = False

    @property
    def name(self) -> str:
        return f"seg-{self.first_seq}.jsonl"

    def to_json(self) -> dict[str, Any]:
        return {"first_seq": self.first_seq, "last_seq": self.last_seq, "sealed": self.sealed,
                "bytes": self.size, "created": self.created, "pinned": self.pinned}


class SegmentLog:
    """Append-only JSONL log for one store kind."""

    def __init__(self, directory: Path, clock: "_Ordinal", segment_cap: int = DEFAULT_SEGMENT_CAP,
                 fsync: bool = False) -> None:
        self.dir = directory
        self.dir.mkdir(parents=True, exist_ok=True)
        self.segment_cap = segment_cap
        self.fsync = fsync
        self._clock = clock
        self.segments: list[Segment] = []
        self.next_seq = 0
        self.evicted_through = -1
        self.last_append_size = 0
        self._fh = None
        self._open()

    # -- recovery --------------------------------------------------------------
    def _open(self) -> None:
        index_path = self.dir / "index.json"
        if index_path.exists():
            idx = json.loads(index_path.read_text())
            self.evicted_through = idx.get("evicted_through", -1)
            known = {s["first_seq"]: s for s in idx["segments"]}
        else:
            known = {}
        files = sorted(self.dir.glob("seg-*.jsonl"), key=lambda p: int(p.stem.split("-")[1]))
        for path in files:
            first = int(path.stem.split("-")[1])
            meta = known.get(first, {})
            records, sealed, good_bytes = self._scan(path)
            if sealed is None:
                # unsealed: drop any torn tail
                if good_bytes != path.stat().st_size:
                    with open(path, "r+b") as fh:
                        fh.truncate(good_bytes)
            last = records[-1][0] if records else first - 1
            seg = Segment(first, last, bool(sealed), path.stat().st_size,
                          meta.get("created", self._clock.next()), meta.get("pinned", False))
            self._clock.observe(seg.created)
            self.segments.append(seg)
            self.next_seq = max(self.next_seq, last + 1)
        if not files and self.evicted_through >= 0:
            self.next_seq = self.evicted_through + 1
        self._write_index()

    def _scan(self, path: Path) -> tuple[list[tuple[int, bytes]], dict | None, int]:
        """Valid ``(seq, raw record)`` pairs, the footer if sealed, and the valid prefix length.

        Record checksums cover the raw canonical bytes, so validation never
        re-encodes; callers decode only the records they need.
        """
        data = path.read_bytes()
        records: list[tuple[int, bytes]] = []
        pos = 0
        footer = None
        while pos < len(data):
            end = data.find(b"\n", pos)
            if end < 0:
                break
            line = data[pos:end]
            if line.startswith(b'{"footer":'):
                try:
                    f = json.loads(line)["footer"]
                except ValueError:
                    break
                if f["count"] != len(records) or f["crc"] != zlib.crc32(data[:pos]) & 0xFFFFFFFF:
                    raise DomainError(f"sealed segment {path.name} failed checksum validation")
                footer = f
                pos = end + 1
                break
            i = line.find(b',"rec":')
            j = line.rfind(b',"seq":')
            if not line.startswith(b'{"crc":') or i < 0 or j < i or not line.endswith(b"}"):
                break
            try:
                crc, seq = int(line[7:i]), int(line[j + 7:-1])
            except ValueError:
                break
            raw = line[i + 7:j]
            if crc != zlib.crc32(raw) & 0xFFFFFFFF:
                break
            records.append((seq, raw))
            pos = end + 1
        if footer is None and data.rstrip(b"\n").rsplit(b"\n", 1)[-1].startswith(b'{"footer":'):
            # a sealed segment with a bad record is corruption, not a torn tail
            raise DomainError(f"sealed segment {path.name} failed checksum validation")
        return records, footer, pos

    def _write_index(self) -> None:
        _write_json_atomic(self.dir / "index.json", {
            "segments": [s.to_json() for s in self.segments],
            "next_seq": self.next_seq,
            "evicted_through": self.evicted_through,
        })

    # -- writing ---------------------------------------------------------------
    @property
    def active(self) -> Segment | None:
        if self.segments and not self.segments[-1].sealed:
            return self.segments[-1]
        return None

    def _handle(self):
        seg = self.active
        if seg is None:
            seg = Segment(self.next_seq, self.next_seq - 1, False, 0, self._clock.next())
            self.segments.append(seg)
            self._write_index()
        if self._fh is None:
            self._fh = open(self.dir / seg.name, "ab")
        return seg, self._fh

    def append(self, record: Any) -> int:
        seq = self.next_seq
        raw = canonical(record).encode()
        line = b'{"crc":%d,"rec":%s,"seq":%d}\n' % (zlib.crc32(raw) & 0xFFFFFFFF, raw, seq)
        seg, fh = self._handle()
        fh.write(line)
        fh.flush()
        if self.fsync:
            os.fsync(fh.fileno())
        seg.size += len(line)
        self.last_append_size = len(line)
        seg.last_seq = seq
        self.next_seq = seq + 1
        if seg.size >= self.segment_cap:
            self.seal()
        return seq

    def seal(self) -> None:
        seg = self.active
        if seg is None:
            return
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        path = self.dir / seg.name
        body = path.read_bytes()
        footer = canonical({"footer": {"count": seg.last_seq - seg.first_seq + 1,
                                       "crc": zlib.crc32(body) & 0xFFFFFFFF}}).encode() + b"\n"
        with open(path, "ab") as fh:
            fh.write(footer)
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())
        seg.size += len(footer)
        seg.sealed = True
        self._write_index()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        self._write_index()

    # -- reading ---------------------------------------------------------------
    def read(self, from_seq: int, to_seq: int, match: bytes | None = None,
             exclude: bytes | None = None) -> Iterator[tuple[int, Any]]:
        """Records with ``from_seq <= seq < to_seq`` in order.

        ``match`` keeps only records whose canonical JSON contains that byte string;
        ``exclude`` drops those that contain it.
        """
        if from_seq > to_seq:
            raise DomainError("from_seq must be <= to_seq")
        if from_seq == to_seq:
            return iter(())
        if from_seq <= self.evicted_through:
            earliest = self.segments[0].first_seq if self.segments else self.next_seq
            raise PartialReplayError(
                f"records before {self.evicted_through + 1} were evicted", earliest_available=earliest)
        if self._fh is not None:
            self._fh.flush()
        return self._iter(from_seq, to_seq, match, exclude)

    def _iter(self, from_seq: int, to_seq: int, match: bytes | None,
              exclude: bytes | None) -> Iterator[tuple[int, Any]]:
        for seg in self.segments:
            if seg.last_seq < from_seq or seg.first_seq >= to_seq:
                continue
            records, _, _ = self._scan(self.dir / seg.name)
            for seq, raw in records:
                if from_seq <= seq < to_seq and (match is None or match in raw) and (
                        exclude is None or exclude not in raw):
                    yield seq, json.loads(raw)

    def raw(self, from_seq: int, to_seq: int) -> list[tuple[int, bytes]]:
        """Undecoded canonical record bytes, for byte-level comparisons."""
        self.read(from_seq, to_seq)  # range and eviction checks
        if self._fh is not None:
            self._fh.flush()
        out = []
        for seg in self.segments:
            if seg.last_seq < from_seq or seg.first_seq >= to_seq:
                continue
            out += [(q, r) for q, r in self._scan(self.dir / seg.name)[0] if from_seq <= q < to_seq]
        return out

    def all(self, match: bytes | None = None, exclude: bytes | None = None) -> list[tuple[int, Any]]:
        start = self.segments[0].first_seq if self.segments else self.next_seq
        return list(self.read(start, self.next_seq, match, exclude))

    def usage(self) -> int:
        return sum(s.size for s in self.segments)


    def segment_of(self, seq: int) -> Segment:
        for seg in self.segments:
            if seg.first_seq <= seq <= seg.last_seq:
                return seg
        raise NotFoundError(f"sequence {seq} not retained")

    def remove(self, seg: Segment) -> None:
        (self.dir / seg.name).unlink()
        self.segments.remove(seg)
        self.evicted_through = max(self.evicted_through, seg.last_seq)
        self._write_index()


class _Ordinal:
    """Store-wide creation counter used to order eviction by age."""

    def __init__(self) -> None:
        self.value = 0

    def next(self) -> int:
        self.value += 1
        return self.value

    def observe(self, v: int) -> None:
        self.value = max(self.value, v)


@dataclass
class EvictionReport:
    budget: int
    before: int
    after: int
    removed: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {"budget": self.budget, "before": self.before, "after": self.after, "removed": self.removed}


class Store:
    """Model DB, training DB, system-state DB, health stream and diagnostic log."""

    def __init__(self, root: str | os.PathLike, budget: int = DEFAULT_BUDGET,
                 segment_cap: int = DEFAULT_SEGMENT_CAP, fsync: bool = False) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.budget = budget
        self._clock = _Ordinal()
        self.logs = {kind: SegmentLog(self.root / d, self._clock, segment_cap, fsync) for kind, d in LOG_DIRS.items()}
        self.models_dir = self.root / "models"
        self.models_dir.mkdir(exist_ok=True)
        self._models: dict[int, dict[str, Any]] = {}
        self.active_version: int | None = None
        self.previous_version: int | None = None
        self._load_models()

    # -- models ------------------------------------------------------------------
    def _load_models(self) -> None:
        path = self.models_dir / "index.json"
        if path.exists():
            idx = json.loads(path.read_text())
            self._models = {int(v): m for v, m in idx["models"].items()}
            self.active_version = idx["active"]
            self.previous_version = idx["previous"]
            for m in self._models.values():
                self._clock.observe(m["created"])
        self._write_model_index()

    def _write_model_index(self) -> None:
        _write_json_atomic(self.models_dir / "index.json", {
            "models": {str(v): m for v, m in sorted(self._models.items())},
            "active": self.active_version,
            "previous": self.previous_version,
        })

    def put_model(self, artifact: ModelArtifact) -> None:
        if artifact.version in self._models:
            raise ConflictError(f"model version {artifact.version} already stored")
        data = artifact.to_bytes()
        path = self.models_dir / f"model-{artifact.version}.dlmd"
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)
        self._models[artifact.version] = {"bytes": len(data), "created": self._clock.next()}
        self._write_model_index()
        self._enforce_budget()

    def get_model(self, version: int) -> ModelArtifact:
        return ModelArtifact.from_bytes(self.get_model_bytes(version))

    def get_model_bytes(self, version: int) -> bytes:
        if version not in self._models:
            raise NotFoundError(f"model version {version} not found")
        return (self.models_dir / f"model-{version}.dlmd").read_bytes()

    def model_versions(self) -> list[int]:
        return sorted(self._models)

    def set_active(self, version: int) -> None:
        if version not in self._models:
            raise NotFoundError(f"model version {version} not found")
        if version != self.active_version:
            self.previous_version = self.active_version
            self.active_version = version
            self._write_model_index()

    # -- logs --------------------------------------------------------------------
    def append(self, kind: str, record: Any) -> int:
        log = self._log(kind)
        seq = log.append(record)
        if self._over_budget_fast(log.last_append_size):
            self._enforce_budget()
        return seq

    _approx_usage: int = 0

    def _over_budget_fast(self, added: int) -> bool:
        self._approx_usage += added
        if self._approx_usage * 2 < self.budget:
            return False
        self._approx_usage = self.usage()
        return self._approx_usage > self.budget

    def _enforce_budget(self) -> None:
        if self.usage() <= self.budget:
            return
        try:
            self.evict(self.budget)
        except ConfigError as exc:
            raise BackpressureError(f"store over budget and nothing evictable: {exc}") from exc
        if self.usage() > self.budget:
            raise BackpressureError("store over budget after eviction")

    def _log(self, kind: str) -> SegmentLog:
        try:
            return self.logs[kind]
        except KeyError:
            raise DomainError(f"unknown store kind {kind!r}; expected one of {sorted(LOG_DIRS)}") from None

    def replay(self, from_seq: int, to_seq: int, kind: str = "diagnostic") -> list[tuple[int, Any]]:
        """Records ``from_seq <= seq < to_seq`` from one log, in order."""
        return list(self._log(kind).read(from_seq, to_seq))

    def records(self, kind: str, match: bytes | None = None, exclude: bytes | None = None) -> list[Any]:
        return [rec for _, rec in self._log(kind).all(match, exclude)]

    def pin(self, kind: str, lo_seq: int, hi_seq: int | None = None, pinned: bool = True) -> int:
        """Pin (or unpin) every segment holding a record in ``[lo_seq, hi_seq]``."""
        log = self._log(kind)
        hi_seq = lo_seq if hi_seq is None else hi_seq
        touched = 0
        for seg in log.segments:
            if seg.first_seq <= hi_seq and seg.last_seq >= lo_seq and seg.pinned != pinned:
                seg.pinned = pinned
                touched += 1
        if touched:
            log._write_index()
        return touched

    # -- space -------------------------------------------------------------------
    def usage(self) -> int:
        model_bytes = sum(m["bytes"] for m in self._models.values())
        return model_bytes + sum(log.usage() for log in self.logs.values())

    def _pinned_models(self) -> set[int]:
        return {v for v in (self.active_version, self.previous_version) if v is not None}

    def evict(self, budget: int) -> EvictionReport:
        """Remove the oldest unpinned sealed segments and models until under ``budget``."""
        before = self.usage()
        report = EvictionReport(budget, before, before)
        if before <= budget:
            return report
        pinned_models = self._pinned_models()
        fixed = sum(m["bytes"] for v, m in self._models.items() if v in pinned_models)
        fixed += sum(s.size for log in self.logs.values() for s in log.segments if s.pinned or not s.sealed)
        if fixed > budget:
            raise ConfigError(f"budget {budget} is below the pinned set ({fixed} bytes)", "store.budget")
        candidates: list[tuple[int, str, Any]] = []
        for kind, log in self.logs.items():
            for seg in log.segments:
                if seg.sealed and not seg.pinned:
                    candidates.append((seg.created, kind, seg))
        for version, meta in self._models.items():
            if version not in pinned_models:
                candidates.append((meta["created"], "models", version))
        candidates.sort(key=lambda c: c[0])
        usage = before
        for _, kind, item in candidates:
            if usage <= budget:
                break
            if kind == "models":
                usage -= self._models[item]["bytes"]
                (self.models_dir / f"model-{item}.dlmd").unlink()
                del self._models[item]
                report.removed.append(f"models/model-{item}.dlmd")
            else:
                log = self.logs[kind]
                usage -= item.size
                report.removed.append(f"{LOG_DIRS[kind]}/{item.name}")
                log.remove(item)
        self._write_model_index()
        report.after = self.usage()
        return report

    # -- blobs -------------------------------------------------------------------
    def put_blob(self, name: str, data: bytes) -> Path:
        path = self.root / "state" / name
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)
        return path

    def get_blob(self, name: str) -> bytes:
        path = self.root / "state" / name
        if not path.exists():
            raise NotFoundError(f"blob {name} not found")
        return path.read_bytes()

    def close(self) -> None:
        for log in self.logs.values():
            log.close()
        self._write_model_index()

    def __enter__(self) -> Store:
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()
