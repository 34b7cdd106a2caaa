"""Rule-based model policy engine with a cost/benefit gate, and the lifecycle executor."""

from __future__ import annotations

import logging
import math
import operator
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from .errors import ConfigError, NotFoundError, UnsupportedOperationError
from .joiner import JoinedExample
from .modelkit import DEFAULT_HYPERPARAMS, ModelArtifact, Predictor, Trainer, warm_start_search
from .monitor import STATE_FIELDS, HealthEvent, SystemState, WorldState
from .store import ProvenanceRecord, Store

log = logging.getLogger(__name__)

ACTION_KINDS = ("retrain", "keep_existing", "rollback", "raise_alert", "transfer")
_OPS: dict[str, Callable[[Any, Any], bool]] = {
    "<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
    "==": operator.eq, "!=": operator.ne,
}


@dataclass(frozen=True)
class Condition:
    """A node of a predicate tree: a comparison, or and/or/not over children."""

    op: str
    field: str | None = None
    value: Any = None
    children: tuple[Condition, ...] = ()

    def holds(self, state: SystemState) -> bool:
        if self.op == "and":
            return all(c.holds(state) for c in self.children)
        if self.op == "or":
            return any(c.holds(state) for c in self.children)
        if self.op == "not":
            return not self.children[0].holds(state)
        if self.op == "true":
            return True
        actual = state.field(self.field)
        if actual is None:
            return False
        return bool(_OPS[self.op](actual, self.value))

    def to_json(self) -> Any:
        if self.op in ("and", "or"):
            return {self.op: [c.to_json() for c in self.children]}
        if self.op == "not":
            return {"not": self.children[0].to_json()}
        if self.op == "true":
            return "true"
        return {"field": self.field, "op": self.op, "value": self.value}


def parse_condition(spec: Any, path: str = "rule.when") -> Condition:
    """Build and validate a condition tree; every error names its field path."""
    if spec is True or spec == "true":
        return Condition("true")
    if not isinstance(spec, Mapping):
        raise ConfigError("condition must be a mapping", path)
    if len(spec) == 1 and next(iter(spec)) in ("and", "or"):
        (op, items), = spec.items()
        if not isinstance(items, list) or not items:
            raise ConfigError(f"'{op}' needs a non-empty list", f"{path}.{op}")
        return Condition(op, children=tuple(parse_condition(c, f"{path}.{op}[{i}]") for i, c in enumerate(items)))
    if len(spec) == 1 and "not" in spec:
        return Condition("not", children=(parse_condition(spec["not"], f"{path}.not"),))
    unknown = set(spec) - {"field", "op", "value"}
    if unknown or not {"field", "op", "value"} <= set(spec):
        raise ConfigError("comparison needs exactly 'field', 'op' and 'value'", path)
    name, op, value = spec["field"], spec["op"], spec["value"]
    if name not in STATE_FIELDS:
        raise ConfigError(f"unknown state field {name!r}", f"{path}.field")
    if op not in _OPS:
        raise ConfigError(f"unknown comparator {op!r}", f"{path}.op")
    expected = STATE_FIELDS[name]
    if expected is str:
        ok = isinstance(value, str) and op in ("==", "!=")
    elif expected is bool:
        ok = isinstance(value, bool) and op in ("==", "!=")
    else:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if not ok:
        raise ConfigError(f"constant {value!r} with {op!r} does not fit field {name!r}", f"{path}.value")
    return Condition(op, name, value)


@dataclass(frozen=True)
class PolicyAction:
    kind: str
    params: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ACTION_KINDS:
            raise ConfigError(f"unknown action kind {self.kind!r}", "rule.action.kind")

    @classmethod
    def make(cls, kind: str, **params: Any) -> PolicyAction:
        return cls(kind, tuple(sorted(params.items())))

    def param(self, name: str, default: Any = None) -> Any:
        return dict(self.params).get(name, default)

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": dict(self.params)}


KEEP = PolicyAction("keep_existing")


@dataclass(frozen=True)
class Rule:
    id: str
    when: Condition
    action: PolicyAction
    priority: int = 0
    cooldown: int = 0

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "when": self.when.to_json(), "action": self.action.to_json(),
                "priority": self.priority, "cooldown": self.cooldown}


def load_rules(specs: Sequence[Mapping[str, Any]], path: str = "policy.rules") -> list[Rule]:
    rules: list[Rule] = []
    seen: set[str] = set()
    for i, spec in enumerate(specs):
        p = f"{path}[{i}]"
        if not isinstance(spec, Mapping):
            raise ConfigError("rule must be a mapping", p)
        rid = spec.get("id")
        if not isinstance(rid, str) or not rid:
            raise ConfigError("rule needs a string id", f"{p}.id")
        if rid in seen:
            raise ConfigError(f"duplicate rule id {rid!r}", f"{p}.id")
        seen.add(rid)
        act = spec.get("action")
        if isinstance(act, str):
            act = {"kind": act}
        if not isinstance(act, Mapping) or act.get("kind") not in ACTION_KINDS:
            raise ConfigError(f"action kind must be one of {list(ACTION_KINDS)}", f"{p}.action")
        cooldown = spec.get("cooldown", 0)
        if not isinstance(cooldown, (int, float)) or cooldown < 0:
            raise ConfigError("cooldown must be >= 0", f"{p}.cooldown")
        priority = spec.get("priority", 0)
        if not isinstance(priority, int):
            raise ConfigError("priority must be an integer", f"{p}.priority")
        params = {k: v for k, v in act.items() if k != "kind"}
        rules.append(Rule(rid, parse_condition(spec.get("when", True), f"{p}.when"),
                          PolicyAction.make(act["kind"], **params), priority, int(cooldown)))
    return rules


DEFAULT_RULES: list[dict[str, Any]] = [
    {
        "id": "emergency-changepoint",
        "priority": 100,
        "cooldown": 0,
        "when": {"and": [
            {"field": "shift_type", "op": "==", "value": "change_point"},
            {"field": "shift_p_value", "op": "<", "value": 0.001},
        ]},
        "action": {"kind": "retrain"},
    },
    {
        "id": "shift-retrain",
        "priority": 50,
        "cooldown": 1000,
        "when": {"field": "shift_magnitude", "op": ">=", "value": 1.0},
        "action": {"kind": "retrain"},
    },
    {
        "id": "health-degradation",
        "priority": 10,
        "cooldown": 2000,
        "when": {"field": "health_drop", "op": ">=", "value": 0.15},
        "action": {"kind": "rollback", "fallback": "raise_alert", "max_model_age": 5000},
    },
]


def default_rules() -> list[Rule]:
    return load_rules(DEFAULT_RULES)


@dataclass(frozen=True)
class CostModel:
    retrain_cost: float = 1000.0
    horizon: float = 10_000.0
    min_cadence: int = 5000
    emergency_p: float = 0.001
    gain_fn: Callable[[SystemState, CostModel], float] | None = None

    def __post_init__(self) -> None:
        if self.retrain_cost < 0 or self.horizon < 0 or self.min_cadence < 0:
            raise ConfigError("cost model values must be >= 0", "policy.cost")


def expected_gain(state: SystemState, cost: CostModel) -> float:
    """Benefit of retraining: value x horizon x max(0, baseline - current health)."""
    if cost.gain_fn is not None:
        return float(cost.gain_fn(state, cost))
    if state.model_health is None or state.baseline_health is None:
        if state.latest_shift is None:
            log.warning("expected_gain: no health estimate and no shift report; gain is 0")
        return 0.0
    return state.prediction_value * cost.horizon * max(0.0, state.baseline_health - state.model_health)


def _emergency(state: SystemState, cost: CostModel) -> bool:
    shift = state.latest_shift
    return (shift is not None and shift.shift_type == "change_point" and shift.p_value is not None
            and shift.p_value < cost.emergency_p)


def evaluate(state: SystemState, rules: Sequence[Rule], cost: CostModel,
             last_fired: Mapping[str, int] | None = None) -> tuple[PolicyAction, ProvenanceRecord]:
    """Pick one action for ``state``; a pure function of its arguments."""
    last_fired = last_fired or {}
    skipped: list[str] = []
    report_ids = tuple(state.recent_report_ids)
    decision_id = f"decision-{state.snapshot_id}"
    for rule in sorted(rules, key=lambda r: (-r.priority, r.id)):
        if not rule.when.holds(state):
            continue
        last = last_fired.get(rule.id)
        if last is not None and state.wall_clock - last < rule.cooldown:
            skipped.append(f"{rule.id}:cooldown")
            continue
        action = rule.action
        reason = f"rule {rule.id} fired"
        if action.kind == "retrain":
            if (state.active_model_version is not None and state.time_since_retrain < cost.min_cadence
                    and not _emergency(state, cost)):
                skipped.append(f"{rule.id}:cadence")
                continue
            gain = expected_gain(state, cost)
            if gain < cost.retrain_cost:
                action = PolicyAction.make("raise_alert", reason="cost_gate", gain=gain, cost=cost.retrain_cost)
                reason = f"rule {rule.id} fired; retrain gated (gain {gain:.1f} < cost {cost.retrain_cost:.1f})"
            else:
                since = state.latest_shift.evidence.get("window_span", [state.wall_clock])[0] \
                    if state.latest_shift else state.wall_clock
                action = PolicyAction.make("retrain", data_since=int(since), gain=gain, **dict(action.params))
        elif action.kind == "rollback":
            max_age = action.param("max_model_age")
            young = max_age is None or state.time_since_retrain <= max_age
            if state.previous_model_version is None or not young:
                fallback = action.param("fallback", "raise_alert")
                action = PolicyAction.make(fallback, reason="rollback_unavailable")
                reason = f"rule {rule.id} fired; rollback unavailable, {fallback}"
            else:
                action = PolicyAction.make("rollback", target=state.previous_model_version)
        if skipped:
            reason += " (skipped " + ", ".join(skipped) + ")"
        return action, ProvenanceRecord(decision_id, state.snapshot_id, rule.id, report_ids,
                                        action.to_json(), state.wall_clock, reason)
    reason = "no rule fired" + (" (skipped " + ", ".join(skipped) + ")" if skipped else "")
    return KEEP, ProvenanceRecord(decision_id, state.snapshot_id, None, report_ids, KEEP.to_json(),
                                  state.wall_clock, reason)


class PolicyEngine:
    """Holds the rule set, the cost model and per-rule firing times."""

    def __init__(self, rules: Sequence[Rule] | None = None, cost: CostModel | None = None) -> None:
        self.rules = list(rules) if rules is not None else default_rules()
        self.cost = cost or CostModel()
        self.last_fired: dict[str, int] = {}

    def decide(self, state: SystemState) -> tuple[PolicyAction, ProvenanceRecord]:
        action, prov = evaluate(state, self.rules, self.cost, self.last_fired)
        if prov.rule_id is not None:
            self.last_fired[prov.rule_id] = state.wall_clock
        return action, prov


@dataclass
class TrainingJob:
    decision_id: str
    requested_at: int
    data_since: int
    params: dict[str, Any] = field(default_factory=dict)


DataSource = Callable[[TrainingJob, int], "tuple[list[JoinedExample], dict[str, Any]] | None"]


class Lifecycle:
    """The single executor that applies policy actions.

    Retrain jobs wait in a queue until ``data_source`` can supply enough
    examples, then train, persist, activate and record the new version.
    """

    def __init__(self, store: Store, trainer: Trainer, predictor: Predictor, world: WorldState,
                 data_source: DataSource, emit: Callable[[HealthEvent], None],
                 seed: int = 0, search_budget: int = 4, max_in_flight: int = 1) -> None:
        self.store = store
        self.trainer = trainer
        self.predictor = predictor
        self.world = world
        self.data_source = data_source
        self.emit = emit
        self.seed = seed
        self.search_budget = search_budget
        self.max_in_flight = max_in_flight
        self.jobs: deque[TrainingJob] = deque()
        self._applied: dict[str, dict[str, Any]] = {}

    def _log(self, ack: dict[str, Any], prov: ProvenanceRecord) -> dict[str, Any]:
        if ack["kind"] != "keep_existing":
            log.info("%s %s at %d (rule %s, reports %s)", ack["kind"], ack["status"], ack["ts"], prov.rule_id,
                     ",".join(prov.report_ids) or "-")
        self.store.append("diagnostic", {"type": "action", "ack": ack, "provenance": prov.to_json()})
        return ack

    def apply(self, action: PolicyAction, prov: ProvenanceRecord) -> dict[str, Any]:
        """Carry out ``action``; re-applying the same decision is a no-op."""
        if prov.decision_id in self._applied:
            return {**self._applied[prov.decision_id], "duplicate": True}
        ack = self._apply(action, prov)
        self._applied[prov.decision_id] = ack
        return self._log(ack, prov)

    def _apply(self, action: PolicyAction, prov: ProvenanceRecord) -> dict[str, Any]:
        ts = prov.timestamp
        base = {"decision_id": prov.decision_id, "kind": action.kind, "ts": ts}
        if action.kind == "keep_existing":
            return {**base, "status": "noop"}
        if action.kind == "transfer":
            raise UnsupportedOperationError("transfer learning actions are not supported")
        if action.kind == "raise_alert":
            self.emit(HealthEvent(ts, "action_taken", "policy", {
                "action": "raise_alert", "decision_id": prov.decision_id, "rule_id": prov.rule_id,
                "params": dict(action.params)}))
            return {**base, "status": "alerted"}
        if action.kind == "rollback":
            return self._rollback(int(action.param("target")), prov, base)
        # retrain
        if len(self.jobs) >= self.max_in_flight:
            return {**base, "status": "busy", "in_flight": [j.decision_id for j in self.jobs]}
        self.jobs.append(TrainingJob(prov.decision_id, ts, int(action.param("data_since", ts)),
                                     dict(action.params)))
        self.emit(HealthEvent(ts, "action_taken", "policy", {
            "action": "retrain_enqueued", "decision_id": prov.decision_id, "rule_id": prov.rule_id}))
        return {**base, "status": "enqueued"}

    def _rollback(self, target: int, prov: ProvenanceRecord, base: dict[str, Any]) -> dict[str, Any]:
        ts = prov.timestamp
        current = self.predictor.active_version
        try:
            artifact = self.store.get_model(target)
        except NotFoundError as exc:
            self.emit(HealthEvent(ts, "action_taken", "policy", {
                "action": "rollback", "status": "failed", "target": target, "error": str(exc),
                "decision_id": prov.decision_id}))
            return {**base, "status": "failed", "target": target}
        self.predictor.activate(artifact)
        self.store.set_active(target)
        self.world.record_model(target, current, artifact.metrics.get("accuracy"), ts, retrained=False)
        self.emit(HealthEvent(ts, "action_taken", "policy", {
            "action": "rollback", "status": "activated", "target": target, "from": current,
            "decision_id": prov.decision_id, "monitor_windows_reset": True}))
        return {**base, "status": "rolled_back", "target": target, "from": current}

    def train_initial(self, data: list[JoinedExample], trained_on: dict[str, Any], ts: int) -> ModelArtifact:
        return self._train(data, dict(DEFAULT_HYPERPARAMS[self.trainer.family]), trained_on, ts, None)

    def run_pending(self, now: int) -> ModelArtifact | None:
        """Start the head job if its data is ready; at most one job runs per call."""
        if not self.jobs:
            return None
        job = self.jobs[0]
        got = self.data_source(job, now)
        if got is None:
            return None
        data, trained_on = got
        self.jobs.popleft()
        if self.search_budget > 1 and self.trainer.history:
            hp = warm_start_search(self.trainer.history, data, self.search_budget,
                                   self.seed + len(self.trainer.history), self.trainer.family)
        else:
            hp = dict(DEFAULT_HYPERPARAMS[self.trainer.family])
        return self._train(data, hp, trained_on, now, job)

    def _train(self, data: list[JoinedExample], hp: dict[str, Any], trained_on: dict[str, Any], ts: int,
               job: TrainingJob | None) -> ModelArtifact:
        model, record = self.trainer.train(data, hp, self.seed + self.trainer.next_version,
                                           trained_on=trained_on, started_at=ts)
        self.store.put_model(model)
        self.store.append("training", {**record.to_json(), "decision_id": job.decision_id if job else None})
        previous = self.predictor.active_version
        log.info("model v%d trained on %d examples, holdout accuracy %.3f", model.version, record.n_train,
                 model.metrics.get("accuracy", float("nan")))
        self.predictor.activate(model)
        self.store.set_active(model.version)
        self.world.record_model(model.version, previous, model.metrics.get("accuracy"), ts, retrained=True)
        self.emit(HealthEvent(ts, "action_taken", "lifecycle", {
            "action": "model_activated", "version": model.version, "previous": previous,
            "decision_id": job.decision_id if job else None, "metrics": model.metrics}))
        return model
