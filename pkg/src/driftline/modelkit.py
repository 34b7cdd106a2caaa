"""Trainer and predictor wrappers with two built-in reference model families.

The trainer holds out the trailing 20% of examples by event time, records
full training metadata, and only consumes a version number when training
succeeds.  The predictor serves one immutable artifact at a time and swaps
versions atomically.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError, DomainError, NotFoundError, NotReadyError
from .joiner import JoinedExample
from .sketch import _codec

MODEL_MAGIC = b"DLMD"
KIND_MODEL = 1
FAMILIES = ("sgd_linear_classifier", "gaussian_naive_bayes")
HOLDOUT_FRACTION = 0.2


@dataclass(frozen=True)
class ParamRange:
    low: float
    high: float
    scale: str = "linear"  # linear, log or int

    def sample(self, rng: np.random.Generator) -> float | int:
        if self.scale == "log":
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        if self.scale == "int":
            return int(rng.integers(int(self.low), int(self.high) + 1))
        return float(rng.uniform(self.low, self.high))

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


DEFAULT_SPACES: dict[str, dict[str, ParamRange]] = {
    "sgd_linear_classifier": {
        "learning_rate": ParamRange(1e-3, 1.0, "log"),
        "l2": ParamRange(1e-6, 1e-1, "log"),
        "epochs": ParamRange(1, 20, "int"),
    },
    "gaussian_naive_bayes": {
        "var_smoothing": ParamRange(1e-12, 1e-2, "log"),
    },
}

DEFAULT_HYPERPARAMS: dict[str, dict[str, float | int]] = {
    "sgd_linear_classifier": {"learning_rate": 0.1, "l2": 1e-4, "epochs": 5},
    "gaussian_naive_bayes": {"var_smoothing": 1e-9},
}


def validate_hyperparams(family: str, hp: dict[str, Any], space: dict[str, ParamRange] | None = None) -> None:
    space = space if space is not None else DEFAULT_SPACES[family]
    for name, value in hp.items():
        if name not in space:
            raise ConfigError(f"unknown hyperparameter for {family}", f"hyperparams.{name}")
        if not space[name].contains(value):
            raise ConfigError(f"value {value} outside [{space[name].low}, {space[name].high}]", f"hyperparams.{name}")


@dataclass(frozen=True)
class Prediction:
    value: Any
    confidence: float
    model_version: int
    timestamp: int = 0
    probabilities: tuple[float, ...] = ()


@dataclass(frozen=True)
class ModelArtifact:
    version: int
    family: str
    classes: tuple
    parameters: dict[str, np.ndarray]
    hyperparams: dict[str, Any]
    trained_on: dict[str, Any]
    metrics: dict[str, float]
    created_at: int
    train_duration: float

    @property
    def n_features(self) -> int:
        return int(self.parameters["mean"].shape[-1] if self.family == "sgd_linear_classifier"
                   else self.parameters["theta"].shape[1])

    def with_version(self, version: int) -> ModelArtifact:
        return ModelArtifact(version, self.family, self.classes, self.parameters, self.hyperparams,
                             self.trained_on, self.metrics, self.created_at, self.train_duration)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise DomainError(f"expected {self.n_features} features, got {x.shape[1]}")
        p = self.parameters
        if self.family == "sgd_linear_classifier":
            z = ((x - p["mean"]) / p["scale"]) @ p["weights"].T + p["bias"]
        else:
            var = p["var"]
            z = np.log(p["prior"]) - 0.5 * (
                np.sum(np.log(2 * np.pi * var), axis=1)[None, :]
                + np.sum((x[:, None, :] - p["theta"][None, :, :]) ** 2 / var[None, :, :], axis=2)
            )
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def to_bytes(self) -> bytes:
        names = sorted(self.parameters)
        params = {
            "version": self.version, "family": self.family, "classes": list(self.classes),
            "hyperparams": self.hyperparams, "trained_on": self.trained_on, "metrics": self.metrics,
            "created_at": self.created_at, "train_duration": self.train_duration,
            "arrays": [[n, list(self.parameters[n].shape)] for n in names],
        }
        payload = b"".join(np.ascontiguousarray(self.parameters[n], dtype="<f8").tobytes() for n in names)
        return _codec.pack(KIND_MODEL, params, payload, magic=MODEL_MAGIC)

    @classmethod
    def from_bytes(cls, data: bytes) -> ModelArtifact:
        kind, p, payload = _codec.unpack(data, magic=MODEL_MAGIC)
        _codec.expect_kind(kind, KIND_MODEL)
        arrays: dict[str, np.ndarray] = {}
        pos = 0
        for name, shape in p["arrays"]:
            size = int(np.prod(shape)) if shape else 1
            arrays[name] = np.frombuffer(payload[pos:pos + 8 * size], dtype="<f8").reshape(shape).astype(np.float64)
            pos += 8 * size
        return cls(p["version"], p["family"], tuple(p["classes"]), arrays, p["hyperparams"], p["trained_on"],
                   p["metrics"], p["created_at"], p["train_duration"])


@dataclass
class TrainingRecord:
    version: int
    family: str
    hyperparams: dict[str, Any]
    metrics: dict[str, float]
    started_at: int
    duration: float
    n_train: int
    n_holdout: int
    train_index: tuple[int, int]
    holdout_index: tuple[int, int]
    trained_on: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "version": self.version, "family": self.family, "hyperparams": self.hyperparams,
            "metrics": self.metrics, "started_at": self.started_at, "duration": self.duration,
            "n_train": self.n_train, "n_holdout": self.n_holdout, "train_index": list(self.train_index),
            "holdout_index": list(self.holdout_index), "trained_on": self.trained_on,
        }

    @classmethod
    def from_json(cls, rec: dict[str, Any]) -> TrainingRecord:
        return cls(rec["version"], rec["family"], rec["hyperparams"], rec["metrics"], rec["started_at"],
                   rec["duration"], rec["n_train"], rec["n_holdout"], tuple(rec["train_index"]),
                   tuple(rec["holdout_index"]), rec.get("trained_on", {}))


def _sort_classes(labels: Sequence[Any]) -> tuple:
    return tuple(sorted(set(labels), key=lambda v: (type(v).__name__, v)))


def _fit_sgd(x: np.ndarray, y_idx: np.ndarray, n_classes: int, hp: dict[str, Any], seed: int) -> dict[str, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (x - mean) / scale
    n, d = xs.shape
    w = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    onehot = np.eye(n_classes)[y_idx]
    rng = np.random.default_rng(seed)
    lr0, l2, epochs = float(hp["learning_rate"]), float(hp["l2"]), int(hp["epochs"])
    batch = 32
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            z = xs[idx] @ w.T + b
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            g = (p - onehot[idx]) / len(idx)
            lr = lr0 / (1.0 + 0.01 * t)
            w -= lr * (g.T @ xs[idx] + l2 * w)
            b -= lr * g.sum(axis=0)
            t += 1
    return {"mean": mean, "scale": scale, "weights": w, "bias": b}


def _fit_gnb(x: np.ndarray, y_idx: np.ndarray, n_classes: int, hp: dict[str, Any]) -> dict[str, np.ndarray]:
    d = x.shape[1]
    theta = np.zeros((n_classes, d))
    var = np.zeros((n_classes, d))
    prior = np.zeros(n_classes)
    eps = float(hp["var_smoothing"]) * float(np.var(x, axis=0).max() or 1.0)
    for c in range(n_classes):
        rows = x[y_idx == c]
        prior[c] = len(rows) / len(x)
        if len(rows):
            theta[c] = rows.mean(axis=0)
            var[c] = rows.var(axis=0)
    var += max(eps, 1e-300)
    prior = np.maximum(prior, 1e-12)
    return {"theta": theta, "var": var, "prior": prior / prior.sum()}


def _metrics(model: ModelArtifact, x: np.ndarray, y: Sequence[Any]) -> dict[str, float]:
    if len(x) == 0:
        return {"accuracy": float("nan"), "log_loss": float("nan")}
    proba = model.predict_proba(x)
    index = {c: i for i, c in enumerate(model.classes)}
    y_idx = np.array([index.get(v, -1) for v in y])
    pred = proba.argmax(axis=1)
    known = y_idx >= 0
    p_true = np.where(known, proba[np.arange(len(y_idx)), np.maximum(y_idx, 0)], 0.0)
    return {
        "accuracy": float(np.mean(pred == y_idx)),
        "log_loss": float(-np.mean(np.log(np.clip(p_true, 1e-15, 1.0)))),
    }


def examples_to_arrays(data: Sequence[JoinedExample]) -> tuple[np.ndarray, list[Any]]:
    if not data:
        return np.zeros((0, 0)), []
    dims = {len(ex.features) for ex in data}
    if len(dims) != 1:
        raise DataError("features must share one dimensionality", [i for i, ex in enumerate(data)
                                                                   if len(ex.features) != len(data[0].features)])
    x = np.asarray([ex.features for ex in data], dtype=np.float64)
    bad = np.flatnonzero(~np.all(np.isfinite(x), axis=1))
    if bad.size:
        raise DataError(f"{bad.size} rows hold non-finite features", bad.tolist())
    return x, [ex.label for ex in data]


def fit_artifact(
    data: Sequence[JoinedExample],
    hp: dict[str, Any],
    seed: int,
    family: str = "sgd_linear_classifier",
    version: int = 0,
    trained_on: dict[str, Any] | None = None,
    started_at: int = 0,
    duration_per_example: float = 0.01,
) -> tuple[ModelArtifact, TrainingRecord]:
    """Pure training step: time-ordered holdout split, fit, holdout metrics."""
    if family not in FAMILIES:
        raise ConfigError(f"unknown model family {family!r}", "modelkit.family")
    full = {**DEFAULT_HYPERPARAMS[family], **hp}
    validate_hyperparams(family, full)
    ordered = sorted(data, key=lambda ex: ex.primary_ts)
    x, y = examples_to_arrays(ordered)
    n_hold = max(1, int(round(HOLDOUT_FRACTION * len(ordered))))
    n_train = len(ordered) - n_hold
    if n_train < 2:
        raise NotReadyError("need at least two training rows after the holdout split")
    classes = _sort_classes(y[:n_train])
    index = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([index[v] for v in y[:n_train]])
    if family == "sgd_linear_classifier":
        params = _fit_sgd(x[:n_train], y_idx, len(classes), full, seed)
        work = n_train * int(full["epochs"])
    else:
        params = _fit_gnb(x[:n_train], y_idx, len(classes), full)
        work = n_train
    span = {"first_ts": ordered[0].primary_ts, "last_ts": ordered[-1].primary_ts}
    trained = {**(trained_on or {}), **span}
    duration = float(work * duration_per_example)
    model = ModelArtifact(version, family, classes, params, full, trained, {}, started_at + int(duration), duration)
    metrics = _metrics(model, x[n_train:], y[n_train:])
    model = ModelArtifact(version, family, classes, params, full, trained, metrics, model.created_at, duration)
    record = TrainingRecord(version, family, full, metrics, started_at, duration, n_train, n_hold,
                            (0, n_train), (n_train, len(ordered)), trained)
    return model, record


def predict(model: ModelArtifact, features: Sequence[float], timestamp: int = 0) -> Prediction:
    x = np.asarray(features, dtype=np.float64)
    p = model.parameters
    if model.family == "sgd_linear_classifier" and x.shape == p["mean"].shape:
        # single-row fast path of predict_proba for the linear family
        z = p["weights"] @ ((x - p["mean"]) / p["scale"]) + p["bias"]
        e = np.exp(z - z.max())
        proba = e / e.sum()
    else:
        proba = model.predict_proba(x)[0]
    best = int(np.argmax(proba))
    return Prediction(model.classes[best], float(proba[best]), model.version, timestamp,
                      tuple(float(p) for p in proba))


class Trainer:
    """Wraps :func:`fit_artifact` and hands out versions only on success."""

    def __init__(self, family: str = "sgd_linear_classifier", min_examples: int = 100,
                 on_trained: Callable[[ModelArtifact, TrainingRecord], None] | None = None,
                 next_version: int = 1) -> None:
        if family not in FAMILIES:
            raise ConfigError(f"unknown model family {family!r}", "modelkit.family")
        self.family = family
        self.min_examples = min_examples
        self.next_version = next_version
        self.on_trained = on_trained
        self.history: list[TrainingRecord] = []

    def train(self, data: Sequence[JoinedExample], hp: dict[str, Any], seed: int,
              trained_on: dict[str, Any] | None = None, started_at: int = 0) -> tuple[ModelArtifact, TrainingRecord]:
        if len(data) < self.min_examples:
            raise NotReadyError(f"need {self.min_examples} examples, have {len(data)}")
        model, record = fit_artifact(data, hp, seed, self.family, self.next_version, trained_on, started_at)
        self.next_version += 1
        self.history.append(record)
        if self.on_trained is not None:
            self.on_trained(model, record)
        return model, record


def warm_start_search(
    history: Sequence[TrainingRecord],
    data: Sequence[JoinedExample],
    budget: int,
    seed: int,
    family: str = "sgd_linear_classifier",
    space: dict[str, ParamRange] | None = None,
    metric: str = "accuracy",
) -> dict[str, Any]:
    """Seeded random search, warm-started from the best configuration in ``history``.

    Candidate 1 is the best prior configuration for this family (by
    ``metric``); the remaining ``budget - 1`` are random draws.  Every
    candidate is scored on the same inner holdout: the trailing 20% of the
    training portion of ``data``.
    """
    if budget < 1:
        raise DomainError("budget must be >= 1")
    space = space if space is not None else DEFAULT_SPACES[family]
    if not space:
        raise ConfigError("empty search space", "modelkit.search_space")
    rng = np.random.default_rng(seed)
    candidates: list[dict[str, Any]] = []
    prior = [r for r in history if r.family == family and metric in r.metrics and not math.isnan(r.metrics[metric])]
    if prior:
        best = max(prior, key=lambda r: r.metrics[metric])
        candidates.append({k: best.hyperparams[k] for k in space if k in best.hyperparams})
    while len(candidates) < budget:
        candidates.append({name: rng_range.sample(rng) for name, rng_range in space.items()})
    if len(candidates) == 1:
        return candidates[0]
    ordered = sorted(data, key=lambda ex: ex.primary_ts)
    outer_train = ordered[: len(ordered) - max(1, int(round(HOLDOUT_FRACTION * len(ordered))))]
    scores = []
    for hp in candidates:
        _, rec = fit_artifact(outer_train, hp, seed, family)
        scores.append(rec.metrics[metric] if metric != "log_loss" else -rec.metrics[metric])
    return candidates[int(np.argmax(scores))]


class Predictor:
    """Serves predictions from one active artifact; activation is an atomic swap."""

    def __init__(self, resolve: Callable[[int], ModelArtifact] | None = None) -> None:
        self._active: ModelArtifact | None = None
        self._resolve = resolve
        self._lock = threading.Lock()
        self.activations: list[int] = []

    @property
    def active(self) -> ModelArtifact | None:
        return self._active

    @property
    def active_version(self) -> int | None:
        model = self._active
        return None if model is None else model.version

    def activate(self, artifact: ModelArtifact | int) -> str:
        if isinstance(artifact, int):
            if self._resolve is None:
                raise NotFoundError(f"no resolver for version {artifact}")
            artifact = self._resolve(artifact)
        with self._lock:
            if self._active is not None and self._active.version == artifact.version:
                return "noop"
            self._active = artifact
            self.activations.append(artifact.version)
        return "activated"

    def predict(self, features: Sequence[float], timestamp: int = 0) -> Prediction:
        model = self._active  # single read: the whole prediction uses one artifact
        if model is None:
            raise NotReadyError("no active model")
        return predict(model, features, timestamp)
