"""Detector bank over a window pair, aggregated into one ShiftReport."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats as sps

from ..errors import DomainError, NotReadyError
from ..sketch.tdigest import TDigest
from . import kliep
from .stats import Histogram, freedman_diaconis_edges, ks_critical, ks_statistic, psi
from .windows import WindowPair, as_matrix

SHIFT_TYPES = ("covariate", "prior_probability", "change_point", "gradual", "anomaly", "unknown")


@dataclass
class DetectorConfig:
    alpha: float = 0.05
    min_reference: int = 50
    min_test: int = 30
    label_test: bool = True
    use_kliep: bool = False
    kliep_centers: int = 100
    kliep_null_draws: int = 50
    max_bins: int = 64
    seed: int = 0
    extra_tests: int = 0  # tests run outside the bank that share its Bonferroni budget


@dataclass
class ShiftReport:
    shift_type: str
    magnitude: float
    detector: str
    p_value: float | None = None
    ci: tuple[float, float] | None = None
    top_features: list[tuple[str, float]] = field(default_factory=list)
    ref_window: str = "ref"
    test_window: str = "test"
    statistic: float = 0.0
    null_p95: float = 0.0
    report_id: str = ""
    timestamp: int = 0
    evidence: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.shift_type not in SHIFT_TYPES:
            raise DomainError(f"unknown shift type {self.shift_type!r}")
        if self.p_value is None and self.ci is None:
            raise DomainError("a report needs a p-value or a confidence interval")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.report_id,
            "ts": self.timestamp,
            "type": self.shift_type,
            "magnitude": self.magnitude,
            "features": [[name, stat] for name, stat in self.top_features],
            "detector": self.detector,
            "ref_window": self.ref_window,
            "test_window": self.test_window,
            "statistic": self.statistic,
            "null_p95": self.null_p95,
            "evidence": self.evidence,
        }
        if self.p_value is not None:
            out["p_value"] = self.p_value
        if self.ci is not None:
            out["ci"] = list(self.ci)
        return out

    @classmethod
    def from_json(cls, rec: dict[str, Any]) -> ShiftReport:
        return cls(
            shift_type=rec["type"], magnitude=rec["magnitude"], detector=rec["detector"],
            p_value=rec.get("p_value"), ci=tuple(rec["ci"]) if rec.get("ci") else None,
            top_features=[(str(n), float(s)) for n, s in rec["features"]],
            ref_window=rec["ref_window"], test_window=rec["test_window"],
            statistic=rec.get("statistic", 0.0), null_p95=rec.get("null_p95", 0.0),
            report_id=rec.get("id", ""), timestamp=rec.get("ts", 0), evidence=rec.get("evidence", {}),
        )


def _label_test(ref_labels: np.ndarray, test_labels: np.ndarray) -> tuple[float, float, float]:
    classes = np.union1d(ref_labels, test_labels)
    if classes.size < 2:
        return 0.0, 1.0, 1.0
    table = np.array([[np.sum(ref_labels == c) for c in classes], [np.sum(test_labels == c) for c in classes]])
    chi2, p, dof, _ = sps.chi2_contingency(table, correction=False)
    return float(chi2), float(p), float(sps.chi2.ppf(0.95, dof))


def detect_shift(pair: WindowPair, config: DetectorConfig | None = None,
                 feature_names: list[str] | None = None) -> ShiftReport | None:
    """Run per-feature KS (plus label and optional KLIEP tests) and report a shift.

    Tests are Bonferroni-corrected across the bank.  Returns None when no
    test is significant; raises NotReadyError when windows are too small.
    """
    cfg = config or DetectorConfig()
    n_ref, n_test = len(pair.reference), len(pair.test)
    if n_ref < cfg.min_reference or n_test < cfg.min_test:
        raise NotReadyError(f"windows too small: reference {n_ref}, test {n_test}")
    dims = pair.feature_dims
    names = feature_names or [f"x{i}" for i in range(dims)]

    ks = [ks_statistic(pair.reference[:, i], pair.test[:, i]) for i in range(dims)]
    crit = ks_critical(n_ref, n_test, 0.05)
    n_tests = dims + cfg.extra_tests
    have_labels = (
        cfg.label_test and pair.reference_labels is not None and pair.test_labels is not None
        and len(pair.reference_labels) > 0 and len(pair.test_labels) > 0
    )
    if have_labels:
        chi2, label_p, chi2_crit = _label_test(np.asarray(pair.reference_labels), np.asarray(pair.test_labels))
        n_tests += 1
    score = null_scores = None
    if cfg.use_kliep:
        n_c = min(cfg.kliep_centers, n_ref, n_test)
        model = kliep.kliep_fit(pair, n_centers=n_c, seed=cfg.seed)
        score = kliep.change_score(model, pair.test)
        null_scores = kliep.permutation_null(pair, cfg.kliep_null_draws, seed=cfg.seed, n_centers=n_c,
                                             sigma_grid=[model.sigma])
        kliep_p = (1 + int(np.sum(null_scores >= score))) / (1 + len(null_scores))
        n_tests += 1

    feature_p = [min(1.0, p * n_tests) for _, p in ks]
    feature_hit = min(feature_p) < cfg.alpha
    label_hit = have_labels and min(1.0, label_p * n_tests) < cfg.alpha
    kliep_hit = cfg.use_kliep and min(1.0, kliep_p * n_tests) < cfg.alpha
    if not (feature_hit or label_hit or kliep_hit):
        return None

    ranked = sorted(range(dims), key=lambda i: -ks[i][0])
    top = [(names[i], ks[i][0]) for i in ranked]
    evidence: dict[str, Any] = {
        "ks": {names[i]: [ks[i][0], ks[i][1]] for i in range(dims)},
        "psi": {},
        "n_tests": n_tests,
    }
    for i in ranked[: min(dims, 5)]:
        edges = freedman_diaconis_edges(pair.reference[:, i], cfg.max_bins)
        evidence["psi"][names[i]] = psi(Histogram.from_sample(pair.reference[:, i], edges),
                                        Histogram.from_sample(pair.test[:, i], edges))
    if have_labels:
        evidence["label_chi2"] = [chi2, label_p]
    if cfg.use_kliep:
        evidence["change_score"] = score
        evidence["change_null_p95"] = float(np.percentile(null_scores, 95))

    if label_hit:
        shift_type, detector = "prior_probability", "label_chi2"
        statistic, null_p95 = chi2, chi2_crit
        p_value = min(1.0, label_p * n_tests)
    elif feature_hit:
        shift_type, detector = "covariate", "ks"
        best = ranked[0]
        statistic, null_p95 = ks[best][0], crit
        p_value = min(feature_p)
    else:
        shift_type, detector = "change_point", "kliep"
        statistic, null_p95 = score, float(np.percentile(null_scores, 95))
        p_value = min(1.0, kliep_p * n_tests)
    magnitude = statistic / null_p95 if null_p95 > 0 else math.inf
    return ShiftReport(
        shift_type=shift_type, magnitude=float(magnitude), detector=detector, p_value=float(p_value),
        top_features=top, ref_window=pair.ref_window, test_window=pair.test_window,
        statistic=float(statistic), null_p95=float(null_p95), evidence=evidence,
    )


class QuantileAnomalyScorer:
    """Flags events with any coordinate outside the reference quantile band."""

    def __init__(self, reference, lower: float = 0.001, upper: float = 0.999, compression: float = 100.0) -> None:
        ref = as_matrix(reference)
        self.lower_q, self.upper_q = lower, upper
        self.digests = []
        for i in range(ref.shape[1]):
            d = TDigest(compression)
            d.add_many(ref[:, i])
            self.digests.append(d)
        self.low = np.array([d.quantile(lower) for d in self.digests])
        self.high = np.array([d.quantile(upper) for d in self.digests])

    def outside(self, x) -> np.ndarray:
        """Per-coordinate boolean mask of band violations."""
        v = np.asarray(x, dtype=np.float64)
        return (v < self.low) | (v > self.high)

    def is_anomalous(self, x) -> bool:
        return bool(np.any(self.outside(x)))
