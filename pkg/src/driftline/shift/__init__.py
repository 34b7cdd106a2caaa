"""Dataset-shift detection over frozen reference and sliding test windows."""

from .detect import SHIFT_TYPES, DetectorConfig, QuantileAnomalyScorer, ShiftReport, detect_shift
from .eddm import DRIFT, EDDM, NORMAL, WARNING
from .kliep import RatioModel, change_score, kliep_fit, permutation_null
from .stats import (
    Histogram,
    freedman_diaconis_edges,
    hist_intersection,
    kl_divergence,
    ks_critical,
    ks_statistic,
    psi,
)
from .windows import WindowPair

__all__ = [
    "DRIFT", "DetectorConfig", "EDDM", "Histogram", "NORMAL", "QuantileAnomalyScorer", "RatioModel",
    "SHIFT_TYPES", "ShiftReport", "WARNING", "WindowPair", "change_score", "detect_shift",
    "freedman_diaconis_edges", "hist_intersection", "kl_divergence", "kliep_fit", "ks_critical",
    "ks_statistic", "permutation_null", "psi",
]
