from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import QuantileGrid

METHODS = ("asymptotic", "pairs-bootstrap", "gradient-bootstrap")


@dataclass(frozen=True, eq=False)
class InferenceResult:
    """Pointwise intervals and, optionally, a uniform band on a quantile grid."""

    grid: QuantileGrid
    estimate: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    method: str
    alpha: float
    band_lower: Optional[np.ndarray] = None
    band_upper: Optional[np.ndarray] = None
    critical_value: Optional[float] = None
    replicates: int = 0
    seed: Optional[int] = None
    redraws: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown inference method {self.method!r}")

    def rows(self) -> list:
        out = []
        for k, tau in enumerate(self.grid.taus):
            row = {
                "tau": tau,
                "beta": float(self.estimate[k]),
                "se": float(self.se[k]),
                "ci_lower": float(self.ci_lower[k]),
                "ci_upper": float(self.ci_upper[k]),
            }
            if self.band_lower is not None:
                row["band_lower"] = float(self.band_lower[k])
                row["band_upper"] = float(self.band_upper[k])
            out.append(row)
        return out

    def covers(self, truth) -> np.ndarray:
        truth = np.asarray(truth, dtype=float)
        return (self.ci_lower <= truth) & (truth <= self.ci_upper)

    def band_covers(self, truth) -> bool:
        if self.band_lower is None:
            raise ValueError("no uniform band computed")
        truth = np.asarray(truth, dtype=float)
        return bool(np.all((self.band_lower <= truth) & (truth <= self.band_upper)))

    def rejects_no_effect(self) -> bool:
        """True if 0 leaves the uniform band at some quantile level."""
        return not self.band_covers(np.zeros(len(self.grid)))
