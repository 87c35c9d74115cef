"""Monte-Carlo estimates carried with their standard errors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n: int

    def __float__(self):
        return float(self.value)

    def within(self, target, k=3.0, floor=0.0):
        """True if ``target`` lies within ``k`` standard errors (or ``floor``)."""
        return abs(self.value - target) <= max(k * self.stderr, floor)

    def to_dict(self):
        return {"value": self.value, "stderr": self.stderr, "n": self.n}


def binomial(successes, n):
    p = successes / n
    return Estimate(p, math.sqrt(p * (1.0 - p) / n), n)


def weighted_mean(values, weights):
    """sum(w v) / sum(w) with compensated sums, so constant values come back exactly."""
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    return math.fsum(w * v) / math.fsum(w)


def mean_of(values, weights=None):
    """Mean with the standard error of a (weighted) sample mean."""
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    if weights is None:
        mu = float(v.mean())
        se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return Estimate(mu, se, n)
    w = np.asarray(weights, dtype=np.float64)
    mu = weighted_mean(v, w)
    w = w / w.sum()
    se = float(math.sqrt(np.sum(w * w * (v - mu) ** 2)))
    return Estimate(mu, se, n)
