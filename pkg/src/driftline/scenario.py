"""Synthetic streams and drift injection for the replay harness.

Base stream: labels drawn from class priors, features from isotropic
Gaussians whose class means sit ``separation`` apart along the first
feature.  Every draw is made up front from the seed, so event ``i`` is a
pure function of ``(seed, i)`` and the injection list.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError

INJECTION_KINDS = ("covariate_mean_shift", "prior_rebalance", "abrupt_changepoint", "gradual_linear",
                   "anomaly_burst")


@dataclass(frozen=True)
class DriftInjection:
    """One scheduled change, active on primary-event indices ``[start, start + duration)``.

    ``duration = 0`` means "from ``start`` on".  ``gradual_linear`` ramps a
    mean shift from 0 to ``magnitude`` over its duration and then holds it.
    ``abrupt_changepoint`` scales the noise on ``dims`` by ``1 + magnitude``
    and shifts their means by ``magnitude`` standard deviations, permanently.
    """

    kind: str
    start: int
    duration: int = 0
    magnitude: float = 1.0
    dims: tuple[int, ...] = (0,)
    proportions: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in INJECTION_KINDS:
            raise ConfigError(f"unknown injection kind {self.kind!r}", "injections.kind")
        if self.start < 0 or self.duration < 0:
            raise ConfigError("start and duration must be >= 0", "injections.start")
        if self.kind == "gradual_linear" and self.duration <= 0:
            raise ConfigError("gradual_linear needs duration > 0", "injections.duration")
        if self.kind == "abrupt_changepoint" and self.duration != 0:
            raise ConfigError("abrupt_changepoint has duration 0", "injections.duration")
        if self.kind == "prior_rebalance":
            p = self.proportions
            if not p or any(v < 0 for v in p) or abs(sum(p) - 1.0) > 1e-9:
                raise ConfigError("prior_rebalance needs proportions summing to 1", "injections.proportions")
        if self.kind == "anomaly_burst" and self.duration <= 0:
            raise ConfigError("anomaly_burst needs duration > 0", "injections.duration")

    def active(self, idx: np.ndarray) -> np.ndarray:
        if self.duration == 0:
            return idx >= self.start
        return (idx >= self.start) & (idx < self.start + self.duration)

    def to_json(self) -> dict[str, Any]:
        out = {"kind": self.kind, "start": self.start, "duration": self.duration, "magnitude": self.magnitude,
               "dims": list(self.dims)}
        if self.proportions is not None:
            out["proportions"] = list(self.proportions)
        return out


@dataclass(frozen=True)
class GeneratorSpec:
    events: int = 65_000
    dims: int = 4
    classes: int = 2
    separation: float = 3.0
    noise: float = 1.0
    priors: tuple[float, ...] | None = None
    feedback_delay: tuple[int, int] = (20, 200)
    feedback_rate: float = 1.0

    def __post_init__(self) -> None:
        if self.events < 1:
            raise ConfigError("must be >= 1", "stream.generator.events")
        if self.dims < 1 or self.classes < 2:
            raise ConfigError("need dims >= 1 and classes >= 2", "stream.generator")
        if self.priors is not None and (len(self.priors) != self.classes or abs(sum(self.priors) - 1) > 1e-9):
            raise ConfigError("priors must list one probability per class and sum to 1", "stream.generator.priors")
        lo, hi = self.feedback_delay
        if not 0 <= lo <= hi:
            raise ConfigError("need 0 <= min <= max", "stream.generator.feedback_delay")
        if not 0.0 <= self.feedback_rate <= 1.0:
            raise ConfigError("must lie in [0, 1]", "stream.generator.feedback_rate")

    def class_means(self) -> np.ndarray:
        means = np.zeros((self.classes, self.dims))
        means[:, 0] = self.separation * (np.arange(self.classes) - (self.classes - 1) / 2)
        return means


@dataclass
class Stream:
    """Primary features and labels by event index, plus feedback timing."""

    features: np.ndarray
    labels: np.ndarray
    feedback_delay: np.ndarray  # -1 = label never arrives
    keys: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def events(self) -> Iterator[dict[str, Any]]:
        """Primary and feedback records merged in event-time order (ts = index)."""
        n = len(self)
        has_fb = self.feedback_delay >= 0
        fb_idx = np.nonzero(has_fb)[0]
        ts = np.concatenate([np.arange(n), fb_idx + self.feedback_delay[fb_idx]])
        side = np.concatenate([np.zeros(n, dtype=np.int8), np.ones(len(fb_idx), dtype=np.int8)])
        ref = np.concatenate([np.arange(n), fb_idx])
        order = np.lexsort((ref, side, ts))
        feats = self.features.tolist()
        labels = self.labels.tolist()
        for j in order.tolist():
            i = int(ref[j])
            if side[j] == 0:
                yield {"key": self.keys[i], "ts": int(ts[j]), "features": feats[i]}
            else:
                yield {"key": self.keys[i], "ts": int(ts[j]), "label": labels[i]}


def generate(spec: GeneratorSpec, seed: int, injections: Sequence[DriftInjection] = ()) -> Stream:
    rng = np.random.default_rng(seed)
    n, d, k = spec.events, spec.dims, spec.classes
    u_label = rng.random(n)
    noise = rng.standard_normal((n, d))
    delays = rng.integers(spec.feedback_delay[0], spec.feedback_delay[1] + 1, size=n)
    keep_fb = rng.random(n) < spec.feedback_rate
    u_anom = rng.random(n)
    signs = rng.choice([-1.0, 1.0], size=(n, d))

    priors = np.full(k, 1.0 / k) if spec.priors is None else np.asarray(spec.priors, dtype=np.float64)
    probs = np.tile(priors, (n, 1))
    idx = np.arange(n)
    for inj in injections:
        if inj.kind == "prior_rebalance":
            if len(inj.proportions) != k:
                raise ConfigError("proportions must list one value per class", "injections.proportions")
            probs[inj.active(idx)] = inj.proportions
    cum = np.cumsum(probs, axis=1)
    labels = np.minimum((u_label[:, None] >= cum).sum(axis=1), k - 1)
    features = spec.class_means()[labels] + spec.noise * noise
    features = apply_feature_injections(features, injections, spec.noise, u_anom, signs)
    delay = np.where(keep_fb, delays, -1)
    keys = [f"e{i}" for i in range(n)]
    return Stream(features, labels, delay, keys)


def apply_feature_injections(features: np.ndarray, injections: Iterable[DriftInjection], sigma: float | np.ndarray,
                             u_anom: np.ndarray | None = None, signs: np.ndarray | None = None,
                             anomaly_rate: float = 0.2) -> np.ndarray:
    """Apply every non-label injection in list order; a pure function of row index."""
    x = np.array(features, dtype=np.float64, copy=True)
    n, d = x.shape
    idx = np.arange(n)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (d,))
    if u_anom is None:
        u_anom = np.random.default_rng(0).random(n)
    if signs is None:
        signs = np.where(np.random.default_rng(1).random((n, d)) < 0.5, -1.0, 1.0)
    for inj in injections:
        dims = [i for i in inj.dims if i < d]
        if len(dims) != len(inj.dims):
            raise ConfigError(f"dims {list(inj.dims)} out of range for {d} features", "injections.dims")
        mask = inj.active(idx)
        if inj.kind == "prior_rebalance" or inj.magnitude == 0 or not mask.any():
            continue
        cols = np.asarray(dims)
        if inj.kind == "covariate_mean_shift":
            x[np.ix_(mask, cols)] += inj.magnitude * sigma[cols]
        elif inj.kind == "gradual_linear":
            frac = np.clip((idx - inj.start + 1) / inj.duration, 0.0, 1.0)
            rows = idx >= inj.start
            x[np.ix_(rows, cols)] += (frac[rows, None] * inj.magnitude) * sigma[cols]
        elif inj.kind == "abrupt_changepoint":
            block = x[np.ix_(mask, cols)]
            centre = block.mean(axis=0) if len(block) else 0.0
            x[np.ix_(mask, cols)] = centre + (block - centre) * (1.0 + inj.magnitude) + inj.magnitude * sigma[cols]
        elif inj.kind == "anomaly_burst":
            hit = mask & (u_anom < anomaly_rate)
            x[np.ix_(hit, cols)] += signs[np.ix_(hit, cols)] * inj.magnitude * sigma[cols]
    return x


def inject_records(records: Sequence[dict[str, Any]], injections: Sequence[DriftInjection],
                   seed: int = 0) -> list[dict[str, Any]]:
    """Apply injections to a recorded stream of primary/feedback records.

    Injection indices count primary events.  ``prior_rebalance`` replaces
    each primary event in its span (features and the matching label) by a
    seeded draw from the recorded examples of a class chosen with the new
    proportions, so ``p(x | y)`` is untouched.
    """
    primaries = [i for i, r in enumerate(records) if "features" in r]
    labels: dict[Any, Any] = {r["key"]: r["label"] for r in records if "label" in r}
    if not primaries:
        return [dict(r) for r in records]
    feats = np.asarray([records[i]["features"] for i in primaries], dtype=np.float64)
    n = len(primaries)
    out = [dict(r) for r in records]
    rng = np.random.default_rng(seed)
    pyrng = random.Random(seed)
    new_labels: dict[Any, Any] = {}
    for inj in injections:
        if inj.kind != "prior_rebalance":
            continue
        keyed = [(j, records[primaries[j]]["key"]) for j in range(n)]
        classes = sorted({labels[key] for _, key in keyed if key in labels}, key=lambda v: (type(v).__name__, v))
        if len(classes) != len(inj.proportions):
            raise ConfigError(f"proportions must list one value per class ({len(classes)})", "injections.proportions")
        pools = {c: [j for j, key in keyed if labels.get(key) == c] for c in classes}
        cum = np.cumsum(inj.proportions)
        for j in np.nonzero(inj.active(np.arange(n)))[0].tolist():
            c = classes[min(int(np.searchsorted(cum, rng.random(), side="right")), len(classes) - 1)]
            src = pyrng.choice(pools[c])
            feats[j] = np.asarray(records[primaries[src]]["features"], dtype=np.float64)
            new_labels[records[primaries[j]]["key"]] = c
    sigma = feats.std(axis=0) if n > 1 else np.ones(feats.shape[1])
    sigma = np.where(sigma > 0, sigma, 1.0)
    feats = apply_feature_injections(feats, injections, sigma, rng.random(n),
                                     np.where(rng.random(feats.shape) < 0.5, -1.0, 1.0))
    for j, i in enumerate(primaries):
        out[i]["features"] = feats[j].tolist()
    for r in out:
        if "label" in r and r["key"] in new_labels:
            r["label"] = new_labels[r["key"]]
    return out
