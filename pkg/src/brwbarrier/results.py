"""Result records shared by the Monte Carlo front ends."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

NAIVE = "Naive"
SPLITTING = "Splitting"


@dataclass(frozen=True)
class SurvivalEstimate:
    n: int
    p_hat: float
    stderr: float
    runs: int
    method: str = NAIVE
    cap_hits: int = 0
    hits: Optional[int] = None
    histogram: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def log_p(self) -> float:
        return math.log(self.p_hat) if self.p_hat > 0 else -math.inf


def binomial_estimate(n: int, hits: int, runs: int, **extra) -> SurvivalEstimate:
    p = hits / runs
    return SurvivalEstimate(n, p, math.sqrt(p * (1.0 - p) / runs), runs, NAIVE, hits=hits, **extra)
