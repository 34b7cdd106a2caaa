"""End-to-end wiring of the runtime along the documented data-flow edges.

Events enter through ``ingest``; every hop between components goes through
:meth:`Pipeline._send`, which only permits the edges listed in
:data:`EDGES`.  Everything that reports or replays a run reads the store.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from .config import ScenarioConfig, dump_config, load_config_file
from .errors import DomainError, NotFoundError, NotReadyError
from .joiner import FeedbackEvent, JoinedExample, PrimaryEvent, StreamJoiner, parse_event
from .modelkit import Prediction, Predictor, Trainer
from .monitor import DataMonitor, HealthEvent, PredictionMonitor, WorldConfig, WorldState
from .policy import Lifecycle, PolicyEngine, TrainingJob
from .scenario import generate
from .shift import EDDM, ShiftReport
from .sketch import DampedReservoir, SketchBundle, TDigest
from .store import Store

log = logging.getLogger(__name__)

ACCURACY_BUCKET = 1000

# (caller, callee) pairs: the only ways components may reach each other.
EDGES = frozenset({
    ("ingest", "store"),
    ("ingest", "sketcher"),
    ("ingest", "joiner"),
    ("ingest", "data_monitor"),
    ("ingest", "predictor"),
    ("predictor", "prediction_monitor"),
    ("joiner", "reservoir"),
    ("joiner", "prediction_monitor"),
    ("data_monitor", "world"),
    ("prediction_monitor", "world"),
    ("monitors", "store"),
    ("world", "joiner"),
    ("world", "store"),
    ("world", "policy"),
    ("policy", "lifecycle"),
    ("lifecycle", "reservoir"),
    ("lifecycle", "trainer"),
    ("lifecycle", "predictor"),
    ("lifecycle", "world"),
    ("lifecycle", "store"),
    ("predictor", "store"),
    ("sketcher", "store"),
})


def _direct(src: str, dst: str, obj: Any) -> Any:
    return obj


class Sketcher:
    """Key-stream sketches plus one t-digest per feature."""

    def __init__(self, error: float, expected_distinct: int, bloom_bits_per_item: float, compression: float,
                 seed: int) -> None:
        self.bundle = SketchBundle.preset(expected_distinct, error, bloom_bits_per_item, seed=seed)
        self.compression = compression
        self.digests: list[TDigest] = []
        self._keys: list[Any] = []
        self._rows: list[Any] = []

    def ingest(self, key: Any, features: Any) -> None:
        self._keys.append(key)
        self._rows.append(features)
        if len(self._keys) >= 4096:
            self.flush()

    def flush(self) -> None:
        if not self._keys:
            return
        self.bundle.add_many(np.asarray(self._keys, dtype=object) if not isinstance(self._keys[0], int)
                             else np.asarray(self._keys, dtype=np.int64))
        x = np.asarray(self._rows, dtype=np.float64)
        if not self.digests:
            self.digests = [TDigest(self.compression) for _ in range(x.shape[1])]
        for i, d in enumerate(self.digests):
            d.add_many(x[:, i])
        self._keys, self._rows = [], []

    def memory(self) -> dict[str, int]:
        self.flush()
        sizes = {name: len(data) for name, data in self.bundle.serialized().items()}
        sizes["tdigest"] = sum(len(d.to_bytes()) for d in self.digests)
        return sizes


@dataclass
class RunReport:
    seed: int
    events: int
    feedback: int
    malformed: int
    injections: list[dict[str, Any]]
    accuracy_buckets: dict[int, list[int]]
    phase_accuracy: list[dict[str, Any]]
    detections: list[dict[str, Any]]
    detection_latency: list[int | None]
    actions: list[dict[str, Any]]
    models: list[dict[str, Any]]
    label_coverage: float
    sketch_memory: dict[str, int]
    store: str

    def to_json(self) -> dict[str, Any]:
        out = dict(self.__dict__)
        out["accuracy_buckets"] = {str(k): v for k, v in sorted(self.accuracy_buckets.items())}
        return out

    def bucket_accuracy(self, start: int, stop: int) -> float:
        """Served accuracy over primary events with ``start <= ts < stop``."""
        lo, hi = start // ACCURACY_BUCKET, -(-stop // ACCURACY_BUCKET)
        hits = sum(self.accuracy_buckets.get(b, [0, 0])[0] for b in range(lo, hi))
        total = sum(self.accuracy_buckets.get(b, [0, 0])[1] for b in range(lo, hi))
        return hits / total if total else math.nan

    def policy_actions(self) -> list[tuple[int, str, str]]:
        return [(a["ts"], a["kind"], a["status"]) for a in self.actions]

    def retrains(self) -> list[dict[str, Any]]:
        return [m for m in self.models if m.get("decision_id")]


class Pipeline:
    def __init__(self, config: ScenarioConfig, out_dir: str | Path,
                 wrap: Callable[[str, str, Any], Any] = _direct) -> None:
        """``wrap(caller, callee, component)`` may return a proxy for each edge (tests use this)."""
        self.config = config
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        c = config
        self._wrap = wrap
        self._refs: dict[tuple[str, str], Any] = {}
        self._bound: dict[tuple[str, str, str], Callable[..., Any]] = {}
        store = Store(self.out / "store", c.store.budget, c.store.segment_cap, c.store.fsync)
        p = c.prediction
        self.components: dict[str, Any] = {
            "store": store,
            "joiner": StreamJoiner(c.joiner),
            "sketcher": Sketcher(c.sketch.error, c.sketch.expected_distinct, c.sketch.bloom_bits_per_item,
                                 c.sketch.feature_compression, c.seed),
            "data_monitor": DataMonitor(c.windows, c.detector),
            "prediction_monitor": PredictionMonitor(
                c.windows, c.detector, p.accuracy_window, p.min_accuracy_count,
                EDDM(p.eddm_warning_ratio, p.eddm_drift_ratio, p.eddm_min_errors)),
            "world": WorldState(WorldConfig(c.policy.cost.retrain_cost, c.policy.prediction_value)),
            "policy": PolicyEngine(c.policy.compiled_rules(), c.policy.cost.model()),
            "reservoir": DampedReservoir(c.reservoir.capacity, c.reservoir.decay_factor,
                                         c.reservoir.decay_period, c.seed),
            "trainer": Trainer(c.model.family, c.model.min_examples),
            "predictor": Predictor(),
        }
        world = self.components["world"]
        world.store = self._ref("world", "store")
        joiner_ref = self._ref("world", "joiner")
        world.coverage = lambda: joiner_ref.stats.label_coverage
        self.components["predictor"]._resolve = self._ref("predictor", "store").get_model
        lifecycle_store = self._ref("lifecycle", "store")
        self.components["lifecycle"] = Lifecycle(
            lifecycle_store, self._ref("lifecycle", "trainer"), self._ref("lifecycle", "predictor"),
            self._ref("lifecycle", "world"), self._training_data,
            lambda event: lifecycle_store.append("health", event.to_json()),
            seed=c.seed, search_budget=c.model.search_budget)
        self.store = store
        self.joiner = self.components["joiner"]
        self.predictor = self.components["predictor"]
        self.prediction_monitor = self.components["prediction_monitor"]
        self.reservoir = self.components["reservoir"]
        self.now = 0
        self.events = 0
        self.feedback = 0
        self.malformed = 0
        self.snapshots = 0
        self._since_eval = 0
        self._pending: dict[Any, Prediction] = {}
        self._buckets: dict[int, list[int]] = {}
        self._bucket_flushed = -1
        self._recent_seqs: deque = deque(maxlen=2 * c.windows.reference_size + c.windows.test_size)
        self._pinned: tuple[int, int] | None = None
        self.reports: list[ShiftReport] = []

    # -- plumbing ----------------------------------------------------------------
    def _ref(self, src: str, dst: str) -> Any:
        if (src, dst) not in EDGES:
            raise DomainError(f"undocumented data-flow edge {src} -> {dst}")
        key = (src, dst)
        if key not in self._refs:
            self._refs[key] = self._wrap(src, dst, self.components[dst])
        return self._refs[key]

    def _send(self, src: str, dst: str, method: str, *args: Any, **kwargs: Any) -> Any:
        fn = self._bound.get((src, dst, method))
        if fn is None:
            fn = self._bound[(src, dst, method)] = getattr(self._ref(src, dst), method)
        return fn(*args, **kwargs)

    def _emit(self, event: HealthEvent, src: str = "ingest") -> None:
        self._send(src, "store", "append", "health", event.to_json())

    def _emit_all(self, src: str, events: Iterable[HealthEvent]) -> None:
        for e in events:
            self._send(src, "store", "append", "health", e.to_json())

    # -- event handling ----------------------------------------------------------
    def ingest(self, record: dict[str, Any]) -> None:
        seq = self._send("ingest", "store", "append", "diagnostic", {"type": "event", "event": record})
        try:
            event = parse_event(record)
        except (DomainError, TypeError, ValueError) as exc:
            self.malformed += 1
            self._emit(HealthEvent(self.now, "warning", "ingest", {"malformed": str(exc)}))
            return
        self.now = max(self.now, event.timestamp)
        if isinstance(event, PrimaryEvent):
            self._primary(event, seq)
        else:
            self._feedback(event)
        expired = self._send("ingest", "joiner", "advance_watermark", self.now)
        for exp in expired:
            if exp.side == "primary":
                self._pending.pop(exp.key, None)
            self._emit(HealthEvent(self.now, "expiry", "joiner", {"key": exp.key, "side": exp.side, "age": exp.age}))
        self._since_eval += 1
        if self._since_eval >= self.config.policy.evaluate_every:
            self._evaluate()
        self._flush_buckets(False)

    def _primary(self, e: PrimaryEvent, seq: int) -> None:
        self.events += 1
        self._recent_seqs.append((e.timestamp, seq))
        self._send("ingest", "sketcher", "ingest", e.key, e.features)
        joined = self._send("ingest", "joiner", "offer_primary", e)
        report, events = self._send("ingest", "data_monitor", "step", e.features, e.timestamp)
        self._emit_all("monitors", events)
        self._pin_reference(events)
        if report is not None:
            log.info("data shift %s at %d (%s)", report.report_id, report.timestamp, report.shift_type)
            self._report("data_monitor", report)
        if self.predictor.active is not None:
            pred = self._send("ingest", "predictor", "predict", e.features, e.timestamp)
            self._pending[e.key] = pred
            preport, pevents = self._send("predictor", "prediction_monitor", "observe", pred)
            self._emit_all("monitors", pevents)
            if preport is not None:
                self._report("prediction_monitor", preport)
        self._joined(joined)
        if self.predictor.active is None and len(self.reservoir) >= self.config.model.initial_examples:
            self._initial_training()

    def _feedback(self, f: FeedbackEvent) -> None:
        self.feedback += 1
        self._joined(self._send("ingest", "joiner", "offer_feedback", f))

    def _joined(self, joined: list[JoinedExample]) -> None:
        for ex in joined:
            self._send("joiner", "reservoir", "step", ex.to_json())
            pred = self._pending.pop(ex.key, None)
            if pred is None:
                continue
            bucket = self._buckets.setdefault(pred.timestamp // ACCURACY_BUCKET, [0, 0])
            bucket[0] += int(pred.value == ex.label)
            bucket[1] += 1
            report, events = self._send("joiner", "prediction_monitor", "feedback", pred, ex.label, self.now)
            self._emit_all("monitors", events)
            if report is not None:
                self._report("prediction_monitor", report)
        if joined:
            self._send("prediction_monitor", "world", "update_health", self.prediction_monitor.model_health)

    def _report(self, src: str, report: ShiftReport) -> None:
        self.reports.append(report)
        self._send(src, "world", "record_report", report)
        self._send("monitors", "store", "append", "diagnostic", {"type": "report", "report": report.to_json()})
        self._evaluate()

    def _pin_reference(self, events: list[HealthEvent]) -> None:
        for e in events:
            span = e.payload.get("reference_frozen")
            if span is None:
                continue
            seqs = [s for ts, s in self._recent_seqs if span[0] <= ts <= span[1]]
            if not seqs:
                continue
            if self._pinned is not None:
                self._send("monitors", "store", "pin", "diagnostic", *self._pinned, pinned=False)
            self._pinned = (min(seqs), max(seqs))
            self._send("monitors", "store", "pin", "diagnostic", *self._pinned)

    def _evaluate(self) -> None:
        self._since_eval = 0
        self._send("prediction_monitor", "world", "update_health", self.prediction_monitor.model_health)
        state = self.components["world"].snapshot(self.now)
        self.snapshots += 1
        action, prov = self._send("world", "policy", "decide", state)
        self._send("world", "store", "append", "diagnostic",
                   {"type": "decision", "state_snapshot": state.snapshot_id, "provenance": prov.to_json()})
        self._send("policy", "lifecycle", "apply", action, prov)
        self._send("policy", "lifecycle", "run_pending", self.now)

    # -- training ----------------------------------------------------------------
    def _snapshot_reservoir(self) -> int:
        reservoir = self._ref("lifecycle", "reservoir")
        snap_id = reservoir.seen
        self._send("lifecycle", "store", "put_blob", f"reservoir-{snap_id}.dlsk", reservoir.to_bytes())
        return snap_id

    def _examples(self, since: int) -> list[JoinedExample]:
        out = []
        for item in self._send("lifecycle", "reservoir", "snapshot"):
            if item["primary_ts"] >= since:
                out.append(JoinedExample(item["key"], tuple(item["features"]), item["label"], item["primary_ts"],
                                         item["feedback_ts"], item["weak"]))
        out.sort(key=lambda ex: (ex.primary_ts, str(ex.key)))
        return out

    def _training_data(self, job: TrainingJob, now: int) -> tuple[list[JoinedExample], dict[str, Any]] | None:
        m = self.config.model
        data = self._examples(job.data_since)
        waited = now - job.requested_at
        if len(data) < m.retrain_examples and not (waited >= m.max_wait and len(data) >= m.min_examples):
            return None
        snap = self._snapshot_reservoir()
        return data, {"reservoir_snapshot": snap, "window": [job.data_since, now], "n": len(data)}

    def _initial_training(self) -> None:
        data = self._examples(0)
        snap = self._snapshot_reservoir()
        try:
            self.components["lifecycle"].train_initial(data, {"reservoir_snapshot": snap, "window": [0, self.now],
                                                "n": len(data)}, self.now)
        except NotReadyError:
            return

    # -- accounting --------------------------------------------------------------
    def _flush_buckets(self, final: bool) -> None:
        horizon = (self.now - self.config.joiner.timeout) // ACCURACY_BUCKET - 1
        for b in sorted(self._buckets):
            if b <= self._bucket_flushed:
                continue
            if not final and b > horizon:
                break
            hits, total = self._buckets[b]
            self._emit(HealthEvent(self.now, "metric", "prediction_monitor",
                                   {"accuracy_bucket": b, "correct": hits, "served": total}), "monitors")
            self._bucket_flushed = b

    def finish(self) -> RunReport:
        self._evaluate()
        self._flush_buckets(True)
        memory = self.components["sketcher"].memory()
        self._emit(HealthEvent(self.now, "metric", "sketcher", {"sketch_memory": memory}), "sketcher")
        self._emit(HealthEvent(self.now, "metric", "run", {
            "events": self.events, "feedback": self.feedback, "malformed": self.malformed,
            "label_coverage": self.joiner.stats.label_coverage}))
        self.store.close()
        report = build_report(self.out, self.config)
        (self.out / "run_report.json").write_text(json.dumps(report.to_json(), sort_keys=True, indent=1) + "\n")
        return report


def build_report(run_dir: str | Path, config: ScenarioConfig | None = None) -> RunReport:
    """Reconstruct the run report from the stores alone."""
    run_dir = Path(run_dir)
    store_dir = run_dir / "store"
    for sub in ("health", "diag", "models", "state", "training"):
        if not (store_dir / sub / "index.json").exists():
            raise NotFoundError(f"missing store directory {store_dir / sub} (is {run_dir} a completed run?)")
    if config is None:
        config = load_config_file(run_dir / "config.yaml")
    store = Store(store_dir, budget=config.store.budget, segment_cap=config.store.segment_cap)
    try:
        health = store.records("health", b'"kind":"metric"')
        diag = [r for r in store.records("diagnostic", exclude=b'"type":"event"') if r["type"] != "event"]
        training = store.records("training")
        models = [store.get_model(v) for v in store.model_versions()]
    finally:
        store.close()
    buckets: dict[int, list[int]] = {}
    memory: dict[str, int] = {}
    totals: dict[str, Any] = {}
    for h in health:
        pl = h["payload"]
        if h["kind"] == "metric" and "accuracy_bucket" in pl:
            buckets[pl["accuracy_bucket"]] = [pl["correct"], pl["served"]]
        elif h["kind"] == "metric" and "sketch_memory" in pl:
            memory = pl["sketch_memory"]
        elif h["kind"] == "metric" and h["source"] == "run":
            totals = pl
    reports = [r["report"] for r in diag if r["type"] == "report"]
    actions = []
    for r in diag:
        if r["type"] == "action" and r["ack"]["kind"] != "keep_existing":
            actions.append({"ts": r["ack"]["ts"], "kind": r["ack"]["kind"], "status": r["ack"]["status"],
                            "decision_id": r["ack"]["decision_id"], "rule_id": r["provenance"]["rule_id"],
                            "report_ids": r["provenance"]["report_ids"]})
    decision_of = {t["version"]: t.get("decision_id") for t in training}
    model_rows = [{"version": m.version, "created_at": m.created_at, "metrics": m.metrics,
                   "trained_on": m.trained_on, "decision_id": decision_of.get(m.version)} for m in models]
    injections = [i.to_json() for i in config.injections]
    latencies: list[int | None] = []
    for inj in injections:
        hits = [r["ts"] - inj["start"] for r in reports if r["ts"] >= inj["start"]]
        latencies.append(min(hits) if hits else None)
    bounds = sorted({0, *[i["start"] for i in injections], *[i["start"] + i["duration"] for i in injections
                                                             if i["duration"]]})
    rep = RunReport(
        seed=config.seed, events=totals.get("events", 0), feedback=totals.get("feedback", 0),
        malformed=totals.get("malformed", 0), injections=injections, accuracy_buckets=buckets,
        phase_accuracy=[], detections=[{"id": r["id"], "ts": r["ts"], "type": r["type"], "magnitude": r["magnitude"],
                                        "detector": r["detector"]} for r in reports],
        detection_latency=latencies, actions=actions, models=model_rows,
        label_coverage=totals.get("label_coverage", 0.0), sketch_memory=memory, store=str(store_dir),
    )
    end = (max(buckets) + 1) * ACCURACY_BUCKET if buckets else 0
    edges = [b for b in bounds if b < end] + [end]
    for lo, hi in zip(edges[:-1], edges[1:]):
        acc = rep.bucket_accuracy(lo, hi)
        rep.phase_accuracy.append({"from": lo, "to": hi, "accuracy": None if math.isnan(acc) else acc})
    return rep


def stream_records(config: ScenarioConfig) -> Iterable[dict[str, Any]]:
    if config.stream.file is not None:
        with open(config.stream.file) as fh:
            for line in fh:
                if line.strip():
                    yield json.loads(line)
    else:
        yield from generate(config.stream.generator, config.seed, config.injections).events()


def run(config: ScenarioConfig, out_dir: str | Path, records: Iterable[dict[str, Any]] | None = None) -> RunReport:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(config))
    pipe = Pipeline(config, out)
    for record in (stream_records(config) if records is None else records):
        pipe.ingest(record)
    return pipe.finish()


def recorded_events(run_dir: str | Path) -> list[dict[str, Any]]:
    store = Store(Path(run_dir) / "store")
    try:
        return [r["event"] for r in store.records("diagnostic", b'"type":"event"') if r["type"] == "event"]
    finally:
        store.close()


def replay(run_dir: str | Path, out_dir: str | Path) -> RunReport:
    """Feed the recorded input events of ``run_dir`` through a fresh pipeline."""
    config = load_config_file(Path(run_dir) / "config.yaml")
    return run(config, out_dir, recorded_events(run_dir))


def assess_recovery(rep: RunReport, shift_at: int, horizon: int = 10_000, baseline_span: int = 10_000,
                    tolerance: float = 0.03) -> dict[str, Any]:
    """Accuracy drop after ``shift_at``, the first policy retrain and the recovery point.

    Recovery means some full accuracy bucket that starts after the retrained
    model went live, and ends by ``shift_at + horizon``, is within
    ``tolerance`` of the pre-shift accuracy.
    """
    pre = rep.bucket_accuracy(shift_at - baseline_span, shift_at)
    post = rep.bucket_accuracy(shift_at, shift_at + ACCURACY_BUCKET)
    retrains = [m for m in rep.retrains() if m["created_at"] >= shift_at]
    out: dict[str, Any] = {"pre": pre, "post": post, "drop": pre - post,
                           "retrain_at": retrains[0]["created_at"] if retrains else None,
                           "recovered_at": None, "recovered_accuracy": None}
    if not retrains:
        return out
    first = -(-retrains[0]["created_at"] // ACCURACY_BUCKET) * ACCURACY_BUCKET
    for start in range(first, shift_at + horizon, ACCURACY_BUCKET):
        acc = rep.bucket_accuracy(start, start + ACCURACY_BUCKET)
        if acc >= pre - tolerance:
            out["recovered_at"], out["recovered_accuracy"] = start + ACCURACY_BUCKET, acc
            break
    return out
