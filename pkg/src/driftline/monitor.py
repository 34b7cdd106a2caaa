"""Data and prediction monitoring, health events and the world state."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np
from scipy import stats as sps

from .errors import ConfigError, DomainError, NotFoundError, NotReadyError
from .modelkit import Prediction
from .shift import EDDM, DetectorConfig, QuantileAnomalyScorer, ShiftReport, WindowPair, detect_shift
from .store import Store, canonical

HEALTH_KINDS = ("metric", "warning", "expiry", "detector_fired", "action_taken")


@dataclass(frozen=True)
class HealthEvent:
    timestamp: int
    kind: str
    source: str
    payload: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in HEALTH_KINDS:
            raise DomainError(f"unknown health event kind {self.kind!r}")

    def to_json(self) -> dict[str, Any]:
        return {"ts": self.timestamp, "kind": self.kind, "source": self.source, "payload": self.payload}

    @classmethod
    def from_json(cls, rec: dict[str, Any]) -> HealthEvent:
        return cls(rec["ts"], rec["kind"], rec["source"], rec["payload"])


# Fields a policy rule may reference.  Types are used to validate rule constants.
STATE_FIELDS: dict[str, type] = {
    "time_since_retrain": float,
    "wall_clock": float,
    "retrain_cost": float,
    "prediction_value": float,
    "label_coverage": float,
    "model_health": float,
    "baseline_health": float,
    "health_drop": float,
    "shift_type": str,
    "shift_magnitude": float,
    "shift_p_value": float,
    "shift_age": float,
    "active_model_version": float,
    "previous_model_version": float,
    "has_previous_model": bool,
    "stale": bool,
}


@dataclass(frozen=True)
class SystemState:
    snapshot_id: int
    wall_clock: int
    time_since_retrain: int
    retrain_cost: float
    prediction_value: float
    label_coverage: float
    model_health: float | None
    baseline_health: float | None
    active_model_version: int | None
    previous_model_version: int | None
    latest_shift: ShiftReport | None = None
    recent_report_ids: tuple[str, ...] = ()
    stale: bool = False

    def __post_init__(self) -> None:
        if self.time_since_retrain < 0:
            raise DomainError("time_since_retrain must be >= 0")
        if not 0.0 <= self.label_coverage <= 1.0:
            raise DomainError("label_coverage must be in [0, 1]")

    def field(self, name: str) -> Any:
        """Flattened view used by rule predicates; missing values read as None."""
        shift = self.latest_shift
        if name == "health_drop":
            if self.model_health is None or self.baseline_health is None:
                return None
            return self.baseline_health - self.model_health
        if name == "shift_type":
            return shift.shift_type if shift else None
        if name == "shift_magnitude":
            return shift.magnitude if shift else None
        if name == "shift_p_value":
            return shift.p_value if shift else None
        if name == "shift_age":
            return self.wall_clock - shift.timestamp if shift else None
        if name == "has_previous_model":
            return self.previous_model_version is not None
        if name not in STATE_FIELDS:
            raise DomainError(f"unknown state field {name!r}")
        return getattr(self, name)

    def to_json(self) -> dict[str, Any]:
        return {
            "snapshot_id": self.snapshot_id, "wall_clock": self.wall_clock,
            "time_since_retrain": self.time_since_retrain, "retrain_cost": self.retrain_cost,
            "prediction_value": self.prediction_value, "label_coverage": self.label_coverage,
            "model_health": self.model_health, "baseline_health": self.baseline_health,
            "active_model_version": self.active_model_version,
            "previous_model_version": self.previous_model_version,
            "latest_shift": self.latest_shift.to_json() if self.latest_shift else None,
            "recent_report_ids": list(self.recent_report_ids), "stale": self.stale,
        }

    @classmethod
    def from_json(cls, rec: dict[str, Any]) -> SystemState:
        shift = rec.get("latest_shift")
        return cls(
            rec["snapshot_id"], rec["wall_clock"], rec["time_since_retrain"], rec["retrain_cost"],
            rec["prediction_value"], rec["label_coverage"], rec["model_health"], rec["baseline_health"],
            rec["active_model_version"], rec["previous_model_version"],
            ShiftReport.from_json(shift) if shift else None, tuple(rec["recent_report_ids"]), rec["stale"],
        )


@dataclass
class WindowConfig:
    reference_size: int = 2000
    test_size: int = 500
    step: int = 250
    debounce: int = 2
    anomaly_lower: float = 0.001
    anomaly_upper: float = 0.999

    def __post_init__(self) -> None:
        if self.reference_size < 2 or self.test_size < 2:
            raise ConfigError("window sizes must be >= 2", "monitor.windows")
        if not 1 <= self.step <= self.test_size:
            raise ConfigError("step must be in [1, test_size]", "monitor.windows.step")
        if self.debounce < 1:
            raise ConfigError("debounce must be >= 1", "monitor.windows.debounce")


class _ReportIds:
    def __init__(self, prefix: str) -> None:
        self.prefix = prefix
        self.n = 0

    def next(self) -> str:
        self.n += 1
        return f"{self.prefix}-{self.n}"


class DataMonitor:
    """Frozen reference window against a sliding test window over feature vectors.

    The first ``reference_size`` events (after start or after a confirmed
    shift) form the reference; it stays frozen until ``debounce`` consecutive
    window advances fire, then monitoring re-enters warm-up.
    """

    source = "data_monitor"

    def __init__(self, windows: WindowConfig | None = None, detector: DetectorConfig | None = None,
                 feature_names: list[str] | None = None) -> None:
        self.windows = windows or WindowConfig()
        self.detector = detector or DetectorConfig()
        self.feature_names = feature_names
        self.ids = _ReportIds("data")
        self.dims: int | None = None
        self.malformed = 0
        self.advances = 0
        self.firings = 0
        self._start_warmup(0)

    def _start_warmup(self, ts: int) -> None:
        self.warming_up = True
        self._ref_rows: list[np.ndarray] = []
        self._ref_span = [ts, ts]
        self.reference: np.ndarray | None = None
        self.scorer: QuantileAnomalyScorer | None = None
        self._test: deque = deque(maxlen=self.windows.test_size)
        self._since_advance = 0
        self._consecutive = 0
        self._anomalies = 0

    @property
    def test_size(self) -> int:
        return len(self._test)

    def step(self, features: Any, ts: int) -> tuple[ShiftReport | None, list[HealthEvent]]:
        try:
            x = np.asarray(features, dtype=np.float64).reshape(-1)
            if self.dims is None:
                self.dims = x.size
            if x.size != self.dims or not np.all(np.isfinite(x)):
                raise ValueError
        except (TypeError, ValueError):
            self.malformed += 1
            return None, [HealthEvent(ts, "warning", self.source, {"malformed_event": self.malformed})]

        if self.warming_up:
            if not self._ref_rows:
                self._ref_span[0] = ts
            self._ref_rows.append(x)
            self._ref_span[1] = ts
            if len(self._ref_rows) >= self.windows.reference_size:
                self.reference = np.vstack(self._ref_rows)
                self._ref_rows = []
                self.warming_up = False
                w = self.windows
                self.scorer = QuantileAnomalyScorer(self.reference, w.anomaly_lower, w.anomaly_upper)
                return None, [HealthEvent(ts, "metric", self.source, {
                    "reference_frozen": [self._ref_span[0], self._ref_span[1]], "size": len(self.reference)})]
            return None, []

        self._test.append((ts, x))
        if self.scorer is not None and self.scorer.is_anomalous(x):
            self._anomalies += 1
        self._since_advance += 1
        if len(self._test) < self.windows.test_size or self._since_advance < self.windows.step:
            return None, []
        return self._advance(ts)

    def _advance(self, ts: int) -> tuple[ShiftReport | None, list[HealthEvent]]:
        self.advances += 1
        steps = self._since_advance
        self._since_advance = 0
        test = np.vstack([row for _, row in self._test])
        span = (self._test[0][0], self._test[-1][0])
        pair = WindowPair(self.reference, test, ref_window=f"{self._ref_span[0]}:{self._ref_span[1]}",
                          test_window=f"{span[0]}:{span[1]}")
        events: list[HealthEvent] = []
        try:
            # the anomaly band test shares the bank's Bonferroni budget
            report = detect_shift(pair, replace(self.detector, extra_tests=self.detector.extra_tests + 1),
                                  self.feature_names)
        except NotReadyError:
            return None, events
        anomalies, self._anomalies = self._anomalies, 0
        if report is None and anomalies:
            report = self._anomaly_report(anomalies, steps, pair)
        if anomalies:
            events.append(HealthEvent(ts, "warning", self.source, {"anomalies": anomalies, "events": steps}))
        if report is None:
            self._consecutive = 0
            return None, events
        self.firings += 1
        report.report_id = self.ids.next()
        report.timestamp = ts
        report.evidence["window_span"] = list(span)
        self._consecutive += 1
        events.append(HealthEvent(ts, "detector_fired", self.source, {
            "report_id": report.report_id, "type": report.shift_type, "magnitude": report.magnitude,
            "detector": report.detector, "p_value": report.p_value}))
        if self._consecutive >= self.windows.debounce:
            events.append(HealthEvent(ts, "metric", self.source, {"reference_released": report.report_id}))
            self._start_warmup(ts + 1)
        return report, events

    def _anomaly_report(self, anomalies: int, steps: int, pair: WindowPair) -> ShiftReport | None:
        dims = pair.feature_dims
        w = self.windows
        # probability that one event breaks the band in at least one coordinate
        p0 = min(1.0, dims * (w.anomaly_lower + 1.0 - w.anomaly_upper))
        n_tests = dims + self.detector.extra_tests + 1
        p = min(1.0, float(sps.binom.sf(anomalies - 1, steps, p0)) * n_tests)
        if p >= self.detector.alpha:
            return None
        expected = max(p0 * steps, 1e-12)
        return ShiftReport("anomaly", anomalies / expected, "tdigest_band", p_value=p,
                           top_features=[], ref_window=pair.ref_window, test_window=pair.test_window,
                           statistic=float(anomalies), null_p95=float(sps.binom.ppf(0.95, steps, p0)),
                           evidence={"anomalies": anomalies, "events": steps})


class RollingAccuracy:
    def __init__(self, window: int = 1000, min_count: int = 200) -> None:
        self.window = window
        self.min_count = min_count
        self._hits: deque = deque(maxlen=window)
        self._sum = 0

    def reset(self) -> None:
        self._hits.clear()
        self._sum = 0

    def update(self, correct: bool) -> None:
        if len(self._hits) == self.window:
            self._sum -= self._hits[0]
        self._hits.append(int(correct))
        self._sum += int(correct)

    @property
    def count(self) -> int:
        return len(self._hits)

    @property
    def value(self) -> float | None:
        if len(self._hits) < self.min_count:
            return None
        return self._sum / len(self._hits)


class PredictionMonitor:
    """Prediction distribution, rolling accuracy and EDDM for the active model.

    The distribution window reuses the data-side detector bank on the
    confidence values, with predicted classes standing in for labels, so a
    change in predicted-class proportions surfaces as a prior-probability
    report.  Windows and accuracy reset whenever the serving version changes.
    """

    source = "prediction_monitor"

    def __init__(self, windows: WindowConfig | None = None, detector: DetectorConfig | None = None,
                 accuracy_window: int = 1000, min_accuracy_count: int = 200,
                 eddm: EDDM | None = None) -> None:
        self.windows = windows or WindowConfig()
        self.detector = detector or DetectorConfig()
        self.accuracy = RollingAccuracy(accuracy_window, min_accuracy_count)
        self.eddm = eddm or EDDM()
        self.ids = _ReportIds("pred")
        self.version: int | None = None
        self._reset_windows()

    def _reset_windows(self) -> None:
        self._ref_conf: list[float] = []
        self._ref_cls: list[Any] = []
        self.reference: tuple[np.ndarray, np.ndarray] | None = None
        self._test: deque = deque(maxlen=self.windows.test_size)
        self._since_advance = 0
        self._consecutive = 0
        self._ref_span = [0, 0]

    def on_version(self, version: int | None, ts: int) -> list[HealthEvent]:
        if version == self.version:
            return []
        self.version = version
        self._reset_windows()
        self.accuracy.reset()
        self.eddm.reset()
        return [HealthEvent(ts, "metric", self.source, {"monitor_reset": version})]

    def observe(self, pred: Prediction) -> tuple[ShiftReport | None, list[HealthEvent]]:
        """Update the prediction-distribution window with one served prediction."""
        events = self.on_version(pred.model_version, pred.timestamp)
        ts = pred.timestamp
        cls_key = str(pred.value)
        if self.reference is None:
            if not self._ref_conf:
                self._ref_span[0] = ts
            self._ref_conf.append(pred.confidence)
            self._ref_cls.append(cls_key)
            self._ref_span[1] = ts
            if len(self._ref_conf) >= self.windows.reference_size:
                self.reference = (np.asarray(self._ref_conf)[:, None], np.asarray(self._ref_cls))
                self._ref_conf, self._ref_cls = [], []
            return None, events
        self._test.append((ts, pred.confidence, cls_key))
        self._since_advance += 1
        if len(self._test) < self.windows.test_size or self._since_advance < self.windows.step:
            return None, events
        self._since_advance = 0
        span = (self._test[0][0], self._test[-1][0])
        pair = WindowPair(self.reference[0], np.asarray([c for _, c, _ in self._test])[:, None],
                          reference_labels=self.reference[1],
                          test_labels=np.asarray([k for _, _, k in self._test]),
                          ref_window=f"{self._ref_span[0]}:{self._ref_span[1]}",
                          test_window=f"{span[0]}:{span[1]}")
        report = detect_shift(pair, self.detector, ["confidence"])
        if report is None:
            self._consecutive = 0
            return None, events
        report.report_id = self.ids.next()
        report.timestamp = ts
        report.evidence["window_span"] = list(span)
        self._consecutive += 1
        events.append(HealthEvent(ts, "detector_fired", self.source, {
            "report_id": report.report_id, "type": report.shift_type, "magnitude": report.magnitude,
            "detector": report.detector, "p_value": report.p_value}))
        if self._consecutive >= self.windows.debounce:
            self._reset_windows()
        return report, events

    def feedback(self, pred: Prediction, truth: Any, ts: int) -> tuple[ShiftReport | None, list[HealthEvent]]:
        """Score one joined prediction against its label."""
        if pred.model_version != self.version:
            return None, []  # served by a model that is no longer active
        correct = pred.value == truth
        self.accuracy.update(correct)
        level = self.eddm.update(not correct)
        if level == "drift":
            rid = self.ids.next()
            ratio = self.eddm.score / self.eddm.max_score if self.eddm.max_score else 1.0
            report = ShiftReport(
                "gradual", self.eddm.drift_ratio / max(ratio, 1e-12), "eddm",
                ci=(ratio, self.eddm.drift_ratio), top_features=[], report_id=rid, timestamp=ts,
                ref_window="eddm", test_window=f"errors:{self.eddm.error_count}",
                statistic=ratio, null_p95=self.eddm.drift_ratio,
                evidence={"error_count": self.eddm.error_count, "mean_distance": self.eddm.mean_distance},
            )
            return report, [HealthEvent(ts, "detector_fired", self.source, {
                "report_id": rid, "type": "gradual", "magnitude": report.magnitude, "detector": "eddm"})]
        if level == "warning":
            return None, [HealthEvent(ts, "warning", self.source, {"eddm": "warning"})]
        return None, []

    def step(self, pred: Prediction, truth: Any = None, has_truth: bool = False
             ) -> tuple[dict[str, Any], list[ShiftReport], list[HealthEvent]]:
        """Observe a prediction and, when given, its label; returns the state delta."""
        reports: list[ShiftReport] = []
        report, events = self.observe(pred)
        if report is not None:
            reports.append(report)
        if has_truth:
            report, more = self.feedback(pred, truth, pred.timestamp)
            events += more
            if report is not None:
                reports.append(report)
        return {"model_health": self.model_health}, reports, events

    @property
    def model_health(self) -> float | None:
        return self.accuracy.value


@dataclass
class WorldConfig:
    retrain_cost: float = 1000.0
    prediction_value: float = 1.0
    report_memory: int = 16
    report_ttl: int = 2000


class WorldState:
    """Keeps the policy engine's view and persists numbered snapshots."""

    def __init__(self, config: WorldConfig | None = None, store: Store | None = None,
                 coverage: Callable[[], float] | None = None) -> None:
        self.config = config or WorldConfig()
        self.store = store
        self.coverage = coverage or (lambda: 0.0)
        self.snapshot_id = 0
        self.last_retrain_ts = 0
        self.model_health: float | None = None
        self.baseline_health: float | None = None
        self.active_version: int | None = None
        self.previous_version: int | None = None
        self.reports: deque = deque(maxlen=self.config.report_memory)
        self.snapshots: dict[int, str] = {}

    def update_health(self, value: float | None) -> None:
        self.model_health = value

    def record_report(self, report: ShiftReport) -> None:
        self.reports.append(report)

    def record_model(self, version: int, previous: int | None, baseline: float | None, ts: int,
                     retrained: bool) -> None:
        self.active_version = version
        self.previous_version = previous
        self.baseline_health = baseline
        self.model_health = None
        if retrained:
            self.last_retrain_ts = ts

    def latest_shift(self, now: int) -> ShiftReport | None:
        """Most recent report raised after the last retrain and within ``report_ttl``."""
        if not self.reports:
            return None
        last = self.reports[-1]
        if last.timestamp > self.last_retrain_ts and now - last.timestamp <= self.config.report_ttl:
            return last
        return None

    def snapshot(self, now: int) -> SystemState:
        self.snapshot_id += 1
        shift = self.latest_shift(now)
        state = SystemState(
            snapshot_id=self.snapshot_id, wall_clock=now,
            time_since_retrain=max(0, now - self.last_retrain_ts),
            retrain_cost=self.config.retrain_cost, prediction_value=self.config.prediction_value,
            label_coverage=min(1.0, max(0.0, self.coverage())),
            model_health=self.model_health, baseline_health=self.baseline_health,
            active_model_version=self.active_version, previous_model_version=self.previous_version,
            latest_shift=shift,
            recent_report_ids=tuple(r.report_id for r in self.reports
                                    if r.timestamp > self.last_retrain_ts
                                    and now - r.timestamp <= self.config.report_ttl),
        )
        if self.store is not None:
            try:
                self.store.append("state", state.to_json())
            except Exception:  # degraded: keep serving, flag the snapshot
                state = replace(state, stale=True)
        self.snapshots[state.snapshot_id] = canonical(state.to_json())
        if len(self.snapshots) > 64:
            del self.snapshots[min(self.snapshots)]
        return state

    def read(self, snapshot_id: int) -> SystemState:
        """Re-read a recent snapshot; repeated reads are byte-identical."""
        if snapshot_id not in self.snapshots:
            raise NotFoundError(f"snapshot {snapshot_id} not retained")
        return SystemState.from_json(json.loads(self.snapshots[snapshot_id]))
