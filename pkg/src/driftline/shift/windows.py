from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError


def as_matrix(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DomainError("samples must be 1-d or 2-d arrays")
    return arr


@dataclass
class WindowPair:
    """Frozen reference sample and sliding test sample.

    Labels are optional; when both sides carry them the label marginal is
    tested as well.
    """

    reference: np.ndarray
    test: np.ndarray
    reference_labels: np.ndarray | None = None
    test_labels: np.ndarray | None = None
    ref_window: str = "ref"
    test_window: str = "test"

    def __post_init__(self) -> None:
        self.reference = as_matrix(self.reference)
        self.test = as_matrix(self.test)
        if self.reference.shape[1] != self.test.shape[1]:
            raise DomainError("reference and test must share feature dimensionality")
        if not (np.all(np.isfinite(self.reference)) and np.all(np.isfinite(self.test))):
            raise DomainError("window samples must be finite")

    @property
    def feature_dims(self) -> int:
        return self.reference.shape[1]
