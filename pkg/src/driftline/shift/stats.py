"""Two-sample statistics and histogram divergences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ..errors import DomainError, IncompatibleHistogramError

PSI_SMOOTHING = 0.5


def ks_statistic(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.

    ``D`` is the largest gap between the two empirical CDFs; the p-value
    comes from the limiting Kolmogorov distribution at
    ``D * sqrt(n m / (n + m))``.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    n, m = a.size, b.size
    if n == 0 or m == 0:
        raise DomainError("both samples must be non-empty")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / n
    cdf_b = np.searchsorted(b, grid, side="right") / m
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    en = math.sqrt(n * m / (n + m))
    p = float(special.kolmogorov(d * en)) if d > 0 else 1.0
    return d, min(1.0, max(0.0, p))


def ks_critical(n: int, m: int, alpha: float = 0.05) -> float:
    """Asymptotic critical value of ``D`` at level ``alpha``."""
    return float(special.kolmogi(alpha)) * math.sqrt((n + m) / (n * m))


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: float = 0.0
    overflow: float = 0.0

    def __post_init__(self) -> None:
        self.edges = np.asarray(self.edges, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.edges.ndim != 1 or self.edges.size < 2 or np.any(np.diff(self.edges) <= 0):
            raise DomainError("edges must be strictly increasing with at least two entries")
        if self.counts.shape != (self.edges.size - 1,):
            raise DomainError("len(counts) must equal len(edges) - 1")
        if np.any(self.counts < 0) or self.underflow < 0 or self.overflow < 0:
            raise DomainError("counts must be non-negative")

    @classmethod
    def from_sample(cls, sample, edges) -> Histogram:
        x = np.asarray(sample, dtype=np.float64).ravel()
        edges = np.asarray(edges, dtype=np.float64)
        counts, _ = np.histogram(x, bins=edges)
        # np.histogram includes the right edge in the last bin; mirror that for overflow
        return cls(edges, counts, float(np.sum(x < edges[0])), float(np.sum(x > edges[-1])))

    @property
    def out_of_range(self) -> tuple[float, float]:
        return self.underflow, self.overflow

    @property
    def full_counts(self) -> np.ndarray:
        """Counts with underflow and overflow as outer bins."""
        return np.concatenate([[self.underflow], self.counts, [self.overflow]])

    @property
    def total(self) -> float:
        return float(self.full_counts.sum())

    def proportions(self, smoothing: float = 0.0) -> np.ndarray:
        c = self.full_counts + smoothing
        return c / c.sum()


def freedman_diaconis_edges(sample, max_bins: int = 64) -> np.ndarray:
    """Bin edges by the Freedman-Diaconis rule, capped at ``max_bins``."""
    x = np.asarray(sample, dtype=np.float64).ravel()
    if x.size == 0:
        raise DomainError("cannot bin an empty sample")
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        return np.array([lo - 0.5, lo + 0.5])
    q75, q25 = np.percentile(x, [75, 25])
    width = 2.0 * (q75 - q25) / x.size ** (1 / 3)
    n_bins = max_bins if width <= 0 else int(min(max_bins, max(1, math.ceil((hi - lo) / width))))
    return np.linspace(lo, hi, n_bins + 1)


def _check_edges(a: Histogram, b: Histogram) -> None:
    if a.edges.shape != b.edges.shape or not np.array_equal(a.edges, b.edges):
        raise IncompatibleHistogramError("histograms must share identical edges")


def psi(reference: Histogram, test: Histogram, smoothing: float = PSI_SMOOTHING) -> float:
    """Population stability index ``sum (q - p) ln(q / p)``.

    ``smoothing`` counts are added to every bin (including the out-of-range
    bins) before normalizing.  Bins empty on both sides contribute nothing.
    """
    _check_edges(reference, test)
    if reference.total < 1 or test.total < 1:
        raise DomainError("both histograms need a total of at least 1")
    p = reference.proportions(smoothing)
    q = test.proportions(smoothing)
    used = (p > 0) | (q > 0)
    p, q = p[used], q[used]
    if np.any((p == 0) | (q == 0)):
        return math.inf
    return float(np.sum((q - p) * np.log(q / p)))


def hist_intersection(a: Histogram, b: Histogram) -> float:
    """``sum min(p_i, q_i)`` over normalized proportions; 1 means identical."""
    _check_edges(a, b)
    if a.total <= 0 or b.total <= 0:
        raise DomainError("histograms must be non-empty")
    return float(np.sum(np.minimum(a.proportions(), b.proportions())))


def kl_divergence(p: Histogram, q: Histogram, smoothing: float = 1e-3) -> float:
    """``KL(p || q)`` after adding ``smoothing`` to every bin of both."""
    _check_edges(p, q)
    if smoothing <= 0:
        raise DomainError("smoothing must be positive")
    ps = p.proportions(smoothing)
    qs = q.proportions(smoothing)
    return max(0.0, float(np.sum(ps * np.log(ps / qs))))
