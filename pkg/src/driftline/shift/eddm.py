"""Early drift detection from the spacing between classification errors.

Tracks the running mean ``p'`` and standard deviation ``s'`` of distances
between consecutive errors.  Once at least ``min_errors`` errors have been
seen, the ratio ``(p' + 2 s') / max(p' + 2 s')`` below ``warning_ratio``
raises a warning and below ``drift_ratio`` signals drift, after which the
statistics restart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

NORMAL = "normal"
WARNING = "warning"
DRIFT = "drift"


@dataclass
class EDDM:
    warning_ratio: float = 0.95
    drift_ratio: float = 0.90
    min_errors: int = 30

    def __post_init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.steps = 0
        self.error_count = 0
        self.last_error_step = 0
        self.mean_distance = 0.0
        self._m2 = 0.0
        self.max_score = 0.0
        self.level = NORMAL

    @property
    def std_distance(self) -> float:
        return math.sqrt(self._m2 / self.error_count) if self.error_count else 0.0

    @property
    def score(self) -> float:
        return self.mean_distance + 2.0 * self.std_distance

    def update(self, is_error: bool) -> str:
        if self.level == DRIFT:
            self.reset()
        self.steps += 1
        if not is_error:
            return self.level
        self.error_count += 1
        distance = self.steps - self.last_error_step
        self.last_error_step = self.steps
        old_mean = self.mean_distance
        self.mean_distance += (distance - old_mean) / self.error_count
        self._m2 += (distance - self.mean_distance) * (distance - old_mean)
        if self.error_count < self.min_errors:
            self.level = NORMAL
            return self.level
        score = self.score
        if score > self.max_score:
            self.max_score = score
        ratio = score / self.max_score
        if ratio < self.drift_ratio:
            self.level = DRIFT
        elif ratio < self.warning_ratio:
            self.level = WARNING
        else:
            self.level = NORMAL
        return self.level
